//! Grayscale image container, file I/O and seeded synthetic instances.
//!
//! Coordinates follow the usual raster convention: `x` is the column index
//! in `0..width`, `y` the row index in `0..height`, pixels stored row-major.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageReader, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MatchError::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(MatchError::BufferSize {
                width,
                height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image of the given size filled with one value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn check_rect(&self, x: usize, y: usize, w: usize, h: usize) -> Result<()> {
        let fits = w >= 1
            && h >= 1
            && x.checked_add(w).is_some_and(|r| r <= self.width)
            && y.checked_add(h).is_some_and(|b| b <= self.height);
        if fits {
            Ok(())
        } else {
            Err(MatchError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Copies the `w`x`h` rectangle whose top-left corner is `(x, y)`.
    pub fn extract(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        self.check_rect(x, y, w, h)?;
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.row(row)[x..x + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    /// True when every pixel carries the same value.
    pub fn is_uniform(&self) -> bool {
        let first = self.pixels[0];
        self.pixels.iter().all(|&p| p == first)
    }

    /// Population mean and standard deviation of all pixels.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.pixels.len() as u128;
        let (sum, sum_sq) = self.pixels.iter().fold((0u128, 0u128), |(s, s2), &p| {
            let p = p as u128;
            (s + p, s2 + p * p)
        });
        let mean = sum as f64 / n as f64;
        let var = (n * sum_sq - sum * sum) as f64 / (n * n) as f64;
        (mean, var.sqrt())
    }
}

/// BT.601 luma, rounded half-up.
pub fn to_grayscale(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000).min(255) as u8
}

/// Loads a binary PGM (P5, maxval 255) or an 8-bit PNG. Color PNGs are
/// converted with [`to_grayscale`]; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(&bytes);
    }
    Err(MatchError::UnsupportedFormat(format!(
        "{} is neither binary PGM nor PNG",
        path.display()
    )))
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let reader = ImageReader::with_format(std::io::Cursor::new(bytes), image::ImageFormat::Png);
    let decoded = reader
        .decode()
        .map_err(|e| MatchError::UnsupportedFormat(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(MatchError::EmptyImage);
    }
    let pixels = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw(),
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| to_grayscale(p.0[0], p.0[1], p.0[2]))
            .collect(),
        DynamicImage::ImageRgba8(img) => img
            .pixels()
            .map(|p| to_grayscale(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(MatchError::UnsupportedFormat(format!(
                "PNG color type {:?} is not 8-bit",
                other.color()
            )))
        }
    };
    GrayImage::new(width, height, pixels)
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    // Header: magic, width, height, maxval, separated by whitespace with
    // optional `#` comments, then exactly one whitespace byte before data.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MatchError::UnsupportedFormat("malformed PGM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(MatchError::UnsupportedFormat("malformed PGM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(MatchError::UnsupportedFormat(format!(
            "PGM maxval {maxval} (only 255 is supported)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(MatchError::EmptyImage);
    }
    let data = &bytes[pos..];
    if data.len() < width * height {
        return Err(MatchError::UnsupportedFormat("truncated PGM data".into()));
    }
    GrayImage::new(width, height, data[..width * height].to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|source| MatchError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    write_file(path.as_ref(), &bytes)
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("buffer length checked at construction");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| MatchError::Encode(e.to_string()))
}

/// Writes PGM for a `.pgm` extension, PNG otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        save_pgm(img, path)
    } else {
        save_png(img, path)
    }
}

/// Renders the source in gray with a one-pixel red outline around each
/// `w`x`h` rectangle whose top-left corner is listed in `boxes`.
pub fn save_overlay(
    source: &GrayImage,
    boxes: &[(usize, usize)],
    w: usize,
    h: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = RgbImage::from_fn(source.width as u32, source.height as u32, |x, y| {
        let g = source.get(x as usize, y as usize);
        Rgb([g, g, g])
    });
    let red = Rgb([255, 0, 0]);
    for &(u, v) in boxes {
        let right = (u + w - 1).min(source.width - 1);
        let bottom = (v + h - 1).min(source.height - 1);
        for x in u..=right {
            out.put_pixel(x as u32, v as u32, red);
            out.put_pixel(x as u32, bottom as u32, red);
        }
        for y in v..=bottom {
            out.put_pixel(u as u32, y as u32, red);
            out.put_pixel(right as u32, y as u32, red);
        }
    }
    out.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| MatchError::Encode(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Square blocks of constant random intensity.
    BlockMosaic,
    /// Horizontal ramp from 0 at the left edge to 255 at the right edge.
    Gradient,
    /// Independent uniformly distributed intensities.
    UniformNoise,
}

impl FromStr for SyntheticKind {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block-mosaic" | "mosaic" => Ok(Self::BlockMosaic),
            "gradient" => Ok(Self::Gradient),
            "uniform-noise" | "noise" => Ok(Self::UniformNoise),
            other => Err(MatchError::InvalidSpec(format!("unknown kind {other:?}"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BlockMosaic => "block-mosaic",
            Self::Gradient => "gradient",
            Self::UniformNoise => "uniform-noise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub kind: SyntheticKind,
    /// Block edge length; only read for [`SyntheticKind::BlockMosaic`].
    pub block_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(width: usize, height: usize, kind: SyntheticKind, seed: u64) -> Self {
        Self {
            width,
            height,
            kind,
            block_size: 8,
            seed,
        }
    }

    pub fn mosaic(width: usize, height: usize, block_size: usize, seed: u64) -> Self {
        Self {
            block_size,
            ..Self::new(width, height, SyntheticKind::BlockMosaic, seed)
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GrayImage> {
    let SyntheticSpec {
        width,
        height,
        kind,
        block_size,
        seed,
    } = *spec;
    if width == 0 || height == 0 {
        return Err(MatchError::InvalidSpec("zero dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::BlockMosaic => {
            if block_size == 0 || block_size > width || block_size > height {
                return Err(MatchError::InvalidSpec(format!(
                    "block size {block_size} does not fit a {width}x{height} image"
                )));
            }
            let blocks_x = width.div_ceil(block_size);
            let blocks_y = height.div_ceil(block_size);
            let levels: Vec<u8> = (0..blocks_x * blocks_y).map(|_| rng.random()).collect();
            GrayImage::from_fn(width, height, |x, y| {
                levels[(y / block_size) * blocks_x + x / block_size]
            })
        }
        SyntheticKind::Gradient => {
            let span = width.saturating_sub(1);
            GrayImage::from_fn(width, height, |x, _| {
                if span == 0 {
                    0
                } else {
                    ((510 * x + span) / (2 * span)) as u8
                }
            })
        }
        SyntheticKind::UniformNoise => {
            let mut pixels = vec![0u8; width * height];
            rng.fill(&mut pixels[..]);
            GrayImage::new(width, height, pixels)
        }
    }
}

/// Copy of `source` with `template` written over the rectangle at `(u, v)`.
pub fn plant_template(source: &GrayImage, template: &GrayImage, u: usize, v: usize) -> Result<GrayImage> {
    source.check_rect(u, v, template.width, template.height)?;
    let mut out = source.clone();
    for ty in 0..template.height {
        let start = (v + ty) * out.width + u;
        out.pixels[start..start + template.width].copy_from_slice(template.row(ty));
    }
    Ok(out)
}
