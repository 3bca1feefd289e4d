"""Smoke test for the segncc_py extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/segncc_py-*.whl
"""

import tempfile
from pathlib import Path

import segncc_py as s


def main():
    background = s.GrayImage.synthetic(256, 192, "block-mosaic", block_size=8, seed=5)
    template = s.GrayImage.synthetic(32, 24, "block-mosaic", block_size=4, seed=6)
    source = background.plant(template, 101, 57)

    approx = s.SegmentedTemplate(template, 0.1 * template.mean_std()[1])
    print(f"{len(approx)} segments, rho_self {approx.rho_self:.6f}")

    matches, (positions, slow_evals, _) = s.match_template(source, template)
    best = max(matches, key=lambda m: m[2])
    print(f"{len(matches)} matches over {positions} positions ({slow_evals} fine), best {best}")
    assert best[:2] == (101, 57)
    assert abs(s.ncc_naive(source, template, 101, 57) - 1.0) < 1e-12

    fft_best = max(s.fft_search(source, template, 0.9), key=lambda m: m[2])
    assert fft_best[:2] == (101, 57)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "source.png"
        source.save(str(path))
        assert s.GrayImage.load(str(path)) == source

    try:
        s.SegmentedTemplate(s.GrayImage.filled(8, 8, 40), 1.0)
    except ValueError as e:
        print(f"uniform template rejected: {e}")
    else:
        raise AssertionError("uniform template accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
