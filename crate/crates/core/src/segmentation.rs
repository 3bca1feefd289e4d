//! Split-and-merge rectangular approximation of a template.
//!
//! A template is recursively halved along its longer side until every piece
//! has a population standard deviation below `sigma_max` (or is a single
//! pixel). Each piece then carries the mean of the pixels it covers.
//! Touching pieces with identical means are merged back together, and the
//! whole split is retried with a looser threshold while the piece count
//! exceeds `k_max`.

use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};
use crate::image::GrayImage;
use crate::integral::SumTables;
use crate::search::segmented_ncc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Axis-aligned rectangle of uniform value `mu`, in template coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub mu: f64,
}

impl Segment {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    fn is_degenerate(&self) -> bool {
        self.w == 0 || self.h == 0
    }
}

/// Mean and population standard deviation from exact integer sums.
///
/// The variance numerator `n·Σt² − (Σt)²` is formed in integers, so a
/// uniform region yields exactly zero and equal pixel multisets give
/// bit-identical means.
fn stats_from_sums(sum: u64, sum_sq: u64, n: usize) -> (f64, f64) {
    let n128 = n as u128;
    let spread = n128 * sum_sq as u128 - (sum as u128) * (sum as u128);
    let mean = sum as f64 / n as f64;
    let std = (spread as f64).sqrt() / n as f64;
    (mean, std)
}

/// `(mean, population std)` of the template pixels inside `rect`.
pub fn segment_stats(t: &GrayImage, rect: Rect) -> Result<(f64, f64)> {
    t.check_rect(rect.x, rect.y, rect.w, rect.h)?;
    let (mut sum, mut sum_sq) = (0u64, 0u64);
    for y in rect.y..rect.y + rect.h {
        for &p in &t.row(y)[rect.x..rect.x + rect.w] {
            sum += p as u64;
            sum_sq += p as u64 * p as u64;
        }
    }
    Ok(stats_from_sums(sum, sum_sq, rect.area()))
}

struct Splitter<'a> {
    t: &'a GrayImage,
    tables: SumTables,
}

impl Splitter<'_> {
    fn split(&self, sigma_max: f64, rect: Rect, acc: &mut Vec<Segment>) {
        let Rect { x, y, w, h } = rect;
        if w == 1 && h == 1 {
            acc.push(Segment { x, y, w, h, mu: self.t.get(x, y) as f64 });
            return;
        }
        let (sum, sum_sq) = self.tables.rect_sums_unchecked(x, y, w, h);
        let (mu, std) = stats_from_sums(sum, sum_sq, w * h);
        if std < sigma_max {
            acc.push(Segment { x, y, w, h, mu });
            return;
        }
        if w > h {
            let half = w / 2;
            self.split(sigma_max, Rect::new(x, y, half, h), acc);
            self.split(sigma_max, Rect::new(x + half, y, w - half, h), acc);
        } else {
            let half = h / 2;
            self.split(sigma_max, Rect::new(x, y, w, half), acc);
            self.split(sigma_max, Rect::new(x, y + half, w, h - half), acc);
        }
    }
}

/// Recursive binary split of `rect`, appending finished segments to `acc`
/// in depth-first order. Odd sides split into `d/2` and `d - d/2`.
pub fn split_segment(t: &GrayImage, sigma_max: f64, rect: Rect, acc: &mut Vec<Segment>) -> Result<()> {
    t.check_rect(rect.x, rect.y, rect.w, rect.h)?;
    let splitter = Splitter {
        t,
        tables: SumTables::build(t),
    };
    splitter.split(sigma_max, rect, acc);
    Ok(())
}

/// Coalesces touching segments with identical `mu` until a full
/// vertical-then-horizontal pass changes nothing.
pub fn merge_redundant_segments(mut k: Vec<Segment>) -> Vec<Segment> {
    loop {
        k.sort_by_key(|s| (s.x, s.y));
        merge_pass(&mut k, |a, b| {
            a.x == b.x && a.w == b.w && a.y + a.h == b.y
        }, |a, b| {
            a.h += b.h;
            b.h = 0;
        });

        k.sort_by_key(|s| (s.y, s.x));
        merge_pass(&mut k, |a, b| {
            a.y == b.y && a.h == b.h && a.x + a.w == b.x
        }, |a, b| {
            a.w += b.w;
            b.w = 0;
        });

        let before = k.len();
        k.retain(|s| !s.is_degenerate());
        if k.len() == before {
            return k;
        }
    }
}

fn merge_pass(
    k: &mut [Segment],
    touching: impl Fn(&Segment, &Segment) -> bool,
    absorb: impl Fn(&mut Segment, &mut Segment),
) {
    let mut i = 0;
    while i + 1 < k.len() {
        if k[i].is_degenerate() {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < k.len() && touching(&k[i], &k[j]) && k[i].mu == k[j].mu {
            let (head, tail) = k.split_at_mut(j);
            absorb(&mut head[i], &mut tail[0]);
            j += 1;
        }
        i = j;
    }
}

/// Piecewise-constant approximation of a template, ready for matching.
#[derive(Clone, Debug)]
pub struct SegmentedTemplate {
    width: usize,
    height: usize,
    segments: Vec<Segment>,
    k_bar: f64,
    zero_mean: Vec<f64>,
    sum_sq_zero_mean: f64,
    rho_self: f64,
    sigma_used: f64,
}

impl SegmentedTemplate {
    /// Builds the derived quantities for `segments`, which must exactly
    /// partition `t`. Segment means are taken as given.
    pub fn from_parts(t: &GrayImage, segments: Vec<Segment>, sigma_used: f64) -> Result<Self> {
        check_partition(t.width(), t.height(), &segments)?;
        let (width, height) = (t.width(), t.height());
        let weighted: f64 = segments.iter().map(|s| s.area() as f64 * s.mu).sum();
        let k_bar = weighted / (width * height) as f64;
        let zero_mean: Vec<f64> = segments.iter().map(|s| s.mu - k_bar).collect();
        let sum_sq_zero_mean = segments
            .iter()
            .zip(&zero_mean)
            .map(|(s, z)| s.area() as f64 * z * z)
            .sum();
        let mut st = Self {
            width,
            height,
            segments,
            k_bar,
            zero_mean,
            sum_sq_zero_mean,
            rho_self: 0.0,
            sigma_used,
        };
        // Self-NCC goes through the same arithmetic as the search, so an
        // exact copy of the template in a source scores exactly rho_self.
        let tables = SumTables::build(t);
        let (sum, sum_sq) = tables.rect_sums_unchecked(0, 0, width, height);
        st.rho_self = segmented_ncc(&tables, &st, 0, 0, sum, sum_sq).unwrap_or(0.0);
        Ok(st)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Pixel-weighted mean of the approximation.
    pub fn k_bar(&self) -> f64 {
        self.k_bar
    }

    /// `mu - k_bar` for each segment, in segment order.
    pub fn zero_mean(&self) -> &[f64] {
        &self.zero_mean
    }

    /// Σ over segments of `area · (mu - k_bar)²`.
    pub fn sum_sq_zero_mean(&self) -> f64 {
        self.sum_sq_zero_mean
    }

    /// NCC between the original template and this approximation; 0 when
    /// the approximation is a single segment.
    pub fn rho_self(&self) -> f64 {
        self.rho_self
    }

    pub fn sigma_used(&self) -> f64 {
        self.sigma_used
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.segments).expect("segments serialize")
    }
}

fn check_partition(width: usize, height: usize, segments: &[Segment]) -> Result<()> {
    let fail = |reason: String| MatchError::InvalidPartition {
        width,
        height,
        reason,
    };
    let mut covered = vec![false; width * height];
    for s in segments {
        if s.is_degenerate() || s.x + s.w > width || s.y + s.h > height {
            return Err(fail(format!("segment {s:?} is empty or out of bounds")));
        }
        for y in s.y..s.y + s.h {
            for cell in &mut covered[y * width + s.x..y * width + s.x + s.w] {
                if std::mem::replace(cell, true) {
                    return Err(fail(format!("segment {s:?} overlaps another")));
                }
            }
        }
    }
    if let Some(gap) = covered.iter().position(|c| !c) {
        return Err(fail(format!("pixel ({}, {}) is not covered", gap % width, gap / width)));
    }
    Ok(())
}

/// Splits with `sigma_max`, loosening it by one intensity level and
/// retrying until at most `k_max` segments remain, then merges and
/// computes the self-NCC.
pub fn precompute_template_approximation(t: &GrayImage, sigma_max: f64, k_max: usize) -> Result<SegmentedTemplate> {
    if t.is_uniform() {
        return Err(MatchError::UniformTemplate);
    }
    if k_max == 0 {
        return Err(MatchError::InvalidParams("k_max must be at least 1".into()));
    }
    if !sigma_max.is_finite() || sigma_max < 0.0 {
        return Err(MatchError::InvalidParams(format!("sigma_max {sigma_max} must be finite and non-negative")));
    }
    let splitter = Splitter {
        t,
        tables: SumTables::build(t),
    };
    let whole = Rect::new(0, 0, t.width(), t.height());
    let mut sigma = sigma_max;
    let mut k = Vec::new();
    loop {
        k.clear();
        splitter.split(sigma, whole, &mut k);
        if k.len() <= k_max {
            break;
        }
        sigma += 1.0;
    }
    let k = merge_redundant_segments(k);
    SegmentedTemplate::from_parts(t, k, sigma)
}

/// Paints each segment with its mean, rounded half-up.
pub fn render_approximation(st: &SegmentedTemplate) -> GrayImage {
    let mut pixels = vec![0u8; st.width * st.height];
    for s in &st.segments {
        let value = (s.mu + 0.5).floor().clamp(0.0, 255.0) as u8;
        for y in s.y..s.y + s.h {
            pixels[y * st.width + s.x..y * st.width + s.x + s.w].fill(value);
        }
    }
    GrayImage::new(st.width, st.height, pixels).expect("dimensions come from a valid template")
}

pub fn segments_to_json(segments: &[Segment]) -> String {
    serde_json::to_string_pretty(segments).expect("segments serialize")
}

pub fn segments_from_json(json: &str) -> Result<Vec<Segment>> {
    serde_json::from_str(json).map_err(|e| MatchError::Report(e.to_string()))
}
