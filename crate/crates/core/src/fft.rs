//! FFT-based NCC: the numerator is a frequency-domain cross-correlation of
//! the source with the zero-mean template, the denominator comes from the
//! source sum tables.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::error::{MatchError, Result};
use crate::image::GrayImage;
use crate::integral::SumTables;
use crate::search::{centered_sum_sq, MatchRecord, NccSurface};

type C64 = Complex<f64>;

/// Conjugated spectrum of the zero-mean template, zero-padded to the next
/// power of two of the source dimensions.
#[derive(Clone)]
pub struct PreparedFftTemplate {
    padded_width: usize,
    padded_height: usize,
    template_width: usize,
    template_height: usize,
    spectrum: Vec<C64>,
    t_norm: f64,
}

impl std::fmt::Debug for PreparedFftTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedFftTemplate")
            .field("padded_width", &self.padded_width)
            .field("padded_height", &self.padded_height)
            .field("template_width", &self.template_width)
            .field("template_height", &self.template_height)
            .field("t_norm", &self.t_norm)
            .finish_non_exhaustive()
    }
}

impl PreparedFftTemplate {
    pub fn padded_width(&self) -> usize {
        self.padded_width
    }

    pub fn padded_height(&self) -> usize {
        self.padded_height
    }

    /// Σ(t − t̄)².
    pub fn t_norm(&self) -> f64 {
        self.t_norm
    }

    pub fn spectrum(&self) -> &[C64] {
        &self.spectrum
    }
}

struct Fft2d {
    width: usize,
    height: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    fn new(width: usize, height: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            rows: planner.plan_fft(width, direction),
            cols: planner.plan_fft(height, direction),
        }
    }

    /// In-place unnormalized 2-D transform of a row-major plane.
    fn process(&self, data: &mut [C64]) {
        let (w, h) = (self.width, self.height);
        data.par_chunks_mut(w).for_each(|row| self.rows.process(row));
        let mut transposed = vec![C64::default(); w * h];
        transpose(data, &mut transposed, w, h);
        transposed.par_chunks_mut(h).for_each(|col| self.cols.process(col));
        transpose(&transposed, data, h, w);
    }
}

/// `src` is `rows` rows of `cols` entries; `dst` receives `cols` rows of `rows`.
fn transpose(src: &[C64], dst: &mut [C64], cols: usize, rows: usize) {
    dst.par_chunks_mut(rows).enumerate().for_each(|(c, out)| {
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = src[r * cols + c];
        }
    });
}

/// Template preparation for a source of `source_width`x`source_height`.
pub fn fft_prepare_template(t: &GrayImage, source_width: usize, source_height: usize) -> Result<PreparedFftTemplate> {
    if t.width() > source_width || t.height() > source_height {
        return Err(MatchError::TemplateTooLarge {
            template_w: t.width(),
            template_h: t.height(),
            source_w: source_width,
            source_h: source_height,
        });
    }
    if t.is_uniform() {
        return Err(MatchError::UniformTemplate);
    }
    let (pw, ph) = (source_width.next_power_of_two(), source_height.next_power_of_two());
    let n = t.pixels().len() as f64;
    let mean = t.pixels().iter().map(|&p| p as f64).sum::<f64>() / n;
    let mut plane = vec![C64::default(); pw * ph];
    let mut t_norm = 0.0;
    for y in 0..t.height() {
        for (x, &p) in t.row(y).iter().enumerate() {
            let z = p as f64 - mean;
            plane[y * pw + x] = C64::new(z, 0.0);
            t_norm += z * z;
        }
    }
    Fft2d::new(pw, ph, FftDirection::Forward).process(&mut plane);
    plane.par_iter_mut().for_each(|c| *c = c.conj());
    Ok(PreparedFftTemplate {
        padded_width: pw,
        padded_height: ph,
        template_width: t.width(),
        template_height: t.height(),
        spectrum: plane,
        t_norm,
    })
}

/// ρ at every placement; `None` where the source window is uniform.
pub fn fft_ncc_surface(f: &GrayImage, prep: &PreparedFftTemplate) -> Result<NccSurface> {
    let (pw, ph) = (f.width().next_power_of_two(), f.height().next_power_of_two());
    if (pw, ph) != (prep.padded_width, prep.padded_height) {
        return Err(MatchError::DimensionMismatch {
            expected_w: prep.padded_width,
            expected_h: prep.padded_height,
            actual_w: pw,
            actual_h: ph,
        });
    }
    let (tw, th) = (prep.template_width, prep.template_height);
    if tw > f.width() || th > f.height() {
        return Err(MatchError::TemplateTooLarge {
            template_w: tw,
            template_h: th,
            source_w: f.width(),
            source_h: f.height(),
        });
    }

    let mut plane = vec![C64::default(); pw * ph];
    plane
        .par_chunks_mut(pw)
        .take(f.height())
        .enumerate()
        .for_each(|(y, row)| {
            for (slot, &p) in row.iter_mut().zip(f.row(y)) {
                *slot = C64::new(p as f64, 0.0);
            }
        });
    Fft2d::new(pw, ph, FftDirection::Forward).process(&mut plane);
    plane
        .par_iter_mut()
        .zip(prep.spectrum.par_iter())
        .for_each(|(a, b)| *a *= *b);
    Fft2d::new(pw, ph, FftDirection::Inverse).process(&mut plane);

    // Σ t0 = 0, so correlating raw f with t0 equals correlating f − f̄ with t0.
    let scale = 1.0 / (pw * ph) as f64;
    let tables = SumTables::build(f);
    let n = tw * th;
    let (cols, rows) = (f.width() - tw + 1, f.height() - th + 1);
    let values: Vec<Option<f64>> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|v| {
            let plane = &plane;
            let tables = &tables;
            (0..cols).map(move |u| {
                let (sum, sum_sq) = tables.rect_sums_unchecked(u, v, tw, th);
                let f_norm = centered_sum_sq(sum, sum_sq, n);
                if f_norm == 0.0 {
                    return None;
                }
                Some(plane[v * pw + u].re * scale / (f_norm * prep.t_norm).sqrt())
            })
        })
        .collect();
    Ok(NccSurface::new(cols, rows, values))
}

/// Every placement with ρ ≥ `threshold`, in `(v, u)` order.
pub fn fft_search(f: &GrayImage, t: &GrayImage, threshold: f64) -> Result<Vec<MatchRecord>> {
    let prep = fft_prepare_template(t, f.width(), f.height())?;
    Ok(fft_ncc_surface(f, &prep)?.above(threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{generate_synthetic, plant_template, SyntheticKind, SyntheticSpec};
    use crate::search::naive_search;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        generate_synthetic(&SyntheticSpec::new(w, h, SyntheticKind::UniformNoise, seed)).unwrap()
    }

    #[test]
    fn padding_rule() {
        let t = noise(2, 2, 1);
        let p = fft_prepare_template(&t, 512, 512).unwrap();
        assert_eq!((p.padded_width(), p.padded_height()), (512, 512));
        let p = fft_prepare_template(&t, 500, 300).unwrap();
        assert_eq!((p.padded_width(), p.padded_height()), (512, 512));
        let p = fft_prepare_template(&t, 33, 5).unwrap();
        assert_eq!((p.padded_width(), p.padded_height()), (64, 8));
    }

    #[test]
    fn zero_mean_plane_sums_to_zero() {
        // DC bin of the spectrum is the plane sum.
        let t = noise(7, 5, 2);
        let p = fft_prepare_template(&t, 20, 20).unwrap();
        assert!(p.spectrum()[0].norm() <= 1e-9 * 35.0);
        let expected: f64 = {
            let (m, _) = t.mean_std();
            t.pixels().iter().map(|&v| (v as f64 - m).powi(2)).sum()
        };
        assert!((p.t_norm() - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn errors() {
        let t = noise(4, 4, 3);
        assert!(matches!(
            fft_prepare_template(&GrayImage::filled(2, 2, 4).unwrap(), 8, 8),
            Err(MatchError::UniformTemplate)
        ));
        assert!(matches!(fft_prepare_template(&t, 3, 8), Err(MatchError::TemplateTooLarge { .. })));
        let p = fft_prepare_template(&t, 16, 16).unwrap();
        assert!(matches!(
            fft_ncc_surface(&noise(40, 16, 4), &p),
            Err(MatchError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn agrees_with_naive_surface() {
        for seed in 0..4 {
            let f = noise(37, 29, seed);
            let t = noise(9, 6, seed + 100);
            let exact = naive_search(&f, &t).unwrap();
            let prep = fft_prepare_template(&t, f.width(), f.height()).unwrap();
            let fast = fft_ncc_surface(&f, &prep).unwrap();
            assert_eq!((fast.width(), fast.height()), (exact.width(), exact.height()));
            for (a, b) in fast.values().iter().zip(exact.values()) {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn planted_copy_peaks_at_one() {
        let t = noise(8, 8, 5);
        let bg = noise(50, 40, 6);
        let f = plant_template(&bg, &t, 17, 9).unwrap();
        let best = fft_ncc_surface(&f, &fft_prepare_template(&t, 50, 40).unwrap())
            .unwrap()
            .argmax()
            .unwrap();
        assert_eq!((best.u, best.v), (17, 9));
        assert!((best.rho - 1.0).abs() < 1e-6);

        let hits = fft_search(&f, &t, 0.99).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].u, hits[0].v), (17, 9));
        assert!(fft_search(&f, &t, 1.1).unwrap().is_empty());
        assert_eq!(fft_search(&f, &t, -1.0).unwrap().len(), 43 * 33);
    }

    #[test]
    fn uniform_windows_are_undefined() {
        let t = noise(3, 3, 7);
        let mut bg = GrayImage::filled(10, 10, 50).unwrap();
        bg = plant_template(&bg, &noise(4, 4, 8), 6, 6).unwrap();
        let s = fft_ncc_surface(&bg, &fft_prepare_template(&t, 10, 10).unwrap()).unwrap();
        assert_eq!(s.get(0, 0), None);
        assert!(s.get(7, 7).is_some());
    }
}
