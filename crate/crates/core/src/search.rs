//! Exact and segmented NCC, and the two-stage coarse/fine matcher.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};
use crate::image::GrayImage;
use crate::integral::SumTables;
use crate::segmentation::{precompute_template_approximation, SegmentedTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Coarse approximation threshold as a fraction of the template std.
    pub sigma_fast_factor: f64,
    /// Fine approximation threshold as a fraction of the template std.
    pub sigma_slow_factor: f64,
    pub k_max: usize,
    /// Stage thresholds are `precision * rho_self` of each approximation.
    pub precision: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            sigma_fast_factor: 0.99,
            sigma_slow_factor: 0.1,
            k_max: 5000,
            precision: 0.9,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        let Self {
            sigma_fast_factor: fast,
            sigma_slow_factor: slow,
            k_max,
            precision,
        } = *self;
        if !(slow > 0.0 && slow <= fast && fast < 1.0) {
            return Err(MatchError::InvalidParams(format!(
                "need 0 < sigma_slow_factor ({slow}) <= sigma_fast_factor ({fast}) < 1"
            )));
        }
        if !(precision > 0.0 && precision <= 1.0) {
            return Err(MatchError::InvalidParams(format!("precision {precision} must lie in (0, 1]")));
        }
        if k_max == 0 {
            return Err(MatchError::InvalidParams("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub u: usize,
    pub v: usize,
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub positions_evaluated: u64,
    /// Placements that reached the fine stage.
    pub slow_evaluations: u64,
    pub segment_iterations: u64,
}

impl SearchStats {
    fn merge(self, other: Self) -> Self {
        Self {
            positions_evaluated: self.positions_evaluated + other.positions_evaluated,
            slow_evaluations: self.slow_evaluations + other.slow_evaluations,
            segment_iterations: self.segment_iterations + other.segment_iterations,
        }
    }
}

/// ρ at every placement; `None` where the source window is uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct NccSurface {
    width: usize,
    height: usize,
    values: Vec<Option<f64>>,
}

impl NccSurface {
    pub(crate) fn new(width: usize, height: usize, values: Vec<Option<f64>>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    /// Number of horizontal placements, `M - W + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of vertical placements, `N - H + 1`.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.values[v * self.width + u]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    /// Defined placements as `(u, v, rho)` in row order.
    pub fn iter_defined(&self) -> impl Iterator<Item = MatchRecord> + '_ {
        self.values.iter().enumerate().filter_map(|(i, r)| {
            r.map(|rho| MatchRecord {
                u: i % self.width,
                v: i / self.width,
                rho,
            })
        })
    }

    /// Highest defined ρ; the first in row order wins ties.
    pub fn argmax(&self) -> Option<MatchRecord> {
        self.iter_defined()
            .fold(None, |best: Option<MatchRecord>, m| match best {
                Some(b) if b.rho >= m.rho => Some(b),
                _ => Some(m),
            })
    }

    pub fn above(&self, threshold: f64) -> Vec<MatchRecord> {
        self.iter_defined().filter(|m| m.rho >= threshold).collect()
    }
}

fn check_fits(f: &GrayImage, t: &GrayImage) -> Result<()> {
    if t.width() > f.width() || t.height() > f.height() {
        return Err(MatchError::TemplateTooLarge {
            template_w: t.width(),
            template_h: t.height(),
            source_w: f.width(),
            source_h: f.height(),
        });
    }
    Ok(())
}

/// `Σ(f - f̄)²` of a window from its integer sums, as `(nΣf² - (Σf)²) / n`.
/// Exactly zero for a uniform window.
#[inline]
pub fn centered_sum_sq(sum: u64, sum_sq: u64, n: usize) -> f64 {
    // u64 covers every realistic window; u128 only for huge ones
    match (n as u64).checked_mul(sum_sq).zip(sum.checked_mul(sum)) {
        Some((a, b)) => (a - b) as f64 / n as f64,
        None => (n as u128 * sum_sq as u128 - sum as u128 * sum as u128) as f64 / n as f64,
    }
}

struct ExactTemplate {
    width: usize,
    height: usize,
    zero_mean: Vec<f64>,
    norm: f64,
}

impl ExactTemplate {
    fn new(t: &GrayImage) -> Result<Self> {
        if t.is_uniform() {
            return Err(MatchError::UniformTemplate);
        }
        let n = t.pixels().len() as f64;
        let mean = t.pixels().iter().map(|&p| p as f64).sum::<f64>() / n;
        let zero_mean: Vec<f64> = t.pixels().iter().map(|&p| p as f64 - mean).collect();
        let norm = zero_mean.iter().map(|z| z * z).sum();
        Ok(Self {
            width: t.width(),
            height: t.height(),
            zero_mean,
            norm,
        })
    }

    fn ncc(&self, f: &GrayImage, u: usize, v: usize) -> Option<f64> {
        let n = self.zero_mean.len();
        let (mut sum, mut sum_sq) = (0u64, 0u64);
        for y in v..v + self.height {
            for &p in &f.row(y)[u..u + self.width] {
                sum += p as u64;
                sum_sq += p as u64 * p as u64;
            }
        }
        if sum as u128 * sum as u128 == n as u128 * sum_sq as u128 {
            return None;
        }
        let f_bar = sum as f64 / n as f64;
        let (mut num, mut f_norm) = (0.0, 0.0);
        for (ty, y) in (v..v + self.height).enumerate() {
            let window = &f.row(y)[u..u + self.width];
            let tz = &self.zero_mean[ty * self.width..(ty + 1) * self.width];
            for (&p, &z) in window.iter().zip(tz) {
                let d = p as f64 - f_bar;
                num += d * z;
                f_norm += d * d;
            }
        }
        Some(num / (f_norm * self.norm).sqrt())
    }
}

/// Pixel-by-pixel NCC of `t` against the window of `f` at `(u, v)`.
/// `Ok(None)` when that window is uniform.
pub fn ncc_naive(f: &GrayImage, t: &GrayImage, u: usize, v: usize) -> Result<Option<f64>> {
    f.check_rect(u, v, t.width(), t.height())?;
    Ok(ExactTemplate::new(t)?.ncc(f, u, v))
}

/// Exact NCC at every placement.
pub fn naive_search(f: &GrayImage, t: &GrayImage) -> Result<NccSurface> {
    check_fits(f, t)?;
    let exact = ExactTemplate::new(t)?;
    let (cols, rows) = (f.width() - t.width() + 1, f.height() - t.height() + 1);
    let values: Vec<Option<f64>> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|v| {
            let exact = &exact;
            (0..cols).map(move |u| exact.ncc(f, u, v))
        })
        .collect();
    Ok(NccSurface::new(cols, rows, values))
}

/// One segment with its corners as offsets from a placement's top-left
/// entry in the sum table, so a placement costs four loads per segment.
#[derive(Clone, Copy, Debug)]
struct PackedSegment {
    top_left: usize,
    top_right: usize,
    bottom_left: usize,
    bottom_right: usize,
    area: f64,
    z: f64,
}

/// A segmented template laid out for one sum table stride.
struct PackedTemplate {
    segments: Vec<PackedSegment>,
    stride: usize,
    n: usize,
    sum_sq_zero_mean: f64,
}

impl PackedTemplate {
    fn new(st: &SegmentedTemplate, tables: &SumTables) -> Self {
        let stride = tables.stride();
        let segments = st
            .segments()
            .iter()
            .zip(st.zero_mean())
            .map(|(s, &z)| {
                let top_left = s.y * stride + s.x;
                PackedSegment {
                    top_left,
                    top_right: top_left + s.w,
                    bottom_left: top_left + s.h * stride,
                    bottom_right: top_left + s.h * stride + s.w,
                    area: s.area() as f64,
                    z,
                }
            })
            .collect();
        Self {
            segments,
            stride,
            n: st.width() * st.height(),
            sum_sq_zero_mean: st.sum_sq_zero_mean(),
        }
    }

    #[inline]
    fn numerator(&self, sums: &[u64], u: usize, v: usize, f_bar: f64) -> f64 {
        let base = v * self.stride + u;
        let mut acc = 0.0;
        for p in &self.segments {
            let region = sums[base + p.bottom_right] + sums[base + p.top_left]
                - sums[base + p.bottom_left]
                - sums[base + p.top_right];
            acc += (region as f64 - f_bar * p.area) * p.z;
        }
        acc
    }

    /// ρ from a precomputed window spread `Σ(f - f̄)²`; `None` on a zero denominator.
    #[inline]
    fn ncc(&self, sums: &[u64], u: usize, v: usize, sum_f: u64, f_norm: f64) -> Option<f64> {
        let denom = (f_norm * self.sum_sq_zero_mean).sqrt();
        if denom == 0.0 {
            return None;
        }
        let f_bar = sum_f as f64 / self.n as f64;
        Some(self.numerator(sums, u, v, f_bar) / denom)
    }
}

fn check_placement(tables: &SumTables, st: &SegmentedTemplate, u: usize, v: usize) -> Result<()> {
    let fits = u + st.width() <= tables.width() && v + st.height() <= tables.height();
    if fits {
        Ok(())
    } else {
        Err(MatchError::OutOfBounds {
            x: u,
            y: v,
            w: st.width(),
            h: st.height(),
            width: tables.width(),
            height: tables.height(),
        })
    }
}

/// `Σᵢ (Σ_{Sᵢ} f − f̄·|Sᵢ|)(kᵢ − k̄)` at placement `(u, v)`.
pub fn segmented_numerator(tables: &SumTables, st: &SegmentedTemplate, u: usize, v: usize, f_bar: f64) -> Result<f64> {
    check_placement(tables, st, u, v)?;
    Ok(PackedTemplate::new(st, tables).numerator(tables.raw_sums(), u, v, f_bar))
}

/// `sqrt(Σ(f − f̄)² · Σᵢ |Sᵢ|(kᵢ − k̄)²)` from the window sums `Σf`, `Σf²`.
pub fn segmented_denominator(
    tables: &SumTables,
    st: &SegmentedTemplate,
    u: usize,
    v: usize,
    sum_f: u64,
    sum_f2: u64,
) -> Result<f64> {
    check_placement(tables, st, u, v)?;
    let n = st.width() * st.height();
    Ok((centered_sum_sq(sum_f, sum_f2, n) * st.sum_sq_zero_mean()).sqrt())
}

/// Approximate ρ at `(u, v)` given the window sums; `None` on a zero
/// denominator. Bounds are the caller's responsibility.
#[inline]
pub(crate) fn segmented_ncc(
    tables: &SumTables,
    st: &SegmentedTemplate,
    u: usize,
    v: usize,
    sum_f: u64,
    sum_f2: u64,
) -> Option<f64> {
    let packed = PackedTemplate::new(st, tables);
    let f_norm = centered_sum_sq(sum_f, sum_f2, packed.n);
    packed.ncc(tables.raw_sums(), u, v, sum_f, f_norm)
}

/// Coarse and fine approximations of one template plus their thresholds.
#[derive(Clone, Debug)]
pub struct SegmentedMatcher {
    fast: SegmentedTemplate,
    slow: SegmentedTemplate,
    threshold_fast: f64,
    threshold_slow: f64,
}

impl SegmentedMatcher {
    /// Template preparation: both approximations and the stage thresholds.
    pub fn new(t: &GrayImage, params: &SearchParams) -> Result<Self> {
        params.validate()?;
        if t.is_uniform() {
            return Err(MatchError::UniformTemplate);
        }
        let (_, sigma_t) = t.mean_std();
        let fast = precompute_template_approximation(t, params.sigma_fast_factor * sigma_t, params.k_max)?;
        let slow = precompute_template_approximation(t, params.sigma_slow_factor * sigma_t, params.k_max)?;
        Ok(Self::from_approximations(fast, slow, params.precision))
    }

    pub fn from_approximations(fast: SegmentedTemplate, slow: SegmentedTemplate, precision: f64) -> Self {
        let threshold_fast = precision * fast.rho_self();
        let threshold_slow = precision * slow.rho_self();
        Self {
            fast,
            slow,
            threshold_fast,
            threshold_slow,
        }
    }

    pub fn fast(&self) -> &SegmentedTemplate {
        &self.fast
    }

    pub fn slow(&self) -> &SegmentedTemplate {
        &self.slow
    }

    pub fn threshold_fast(&self) -> f64 {
        self.threshold_fast
    }

    pub fn threshold_slow(&self) -> f64 {
        self.threshold_slow
    }

    fn template_dims(&self) -> (usize, usize) {
        (self.fast.width(), self.fast.height())
    }

    /// Builds the source sum tables and scans every placement.
    pub fn search(&self, f: &GrayImage) -> Result<(Vec<MatchRecord>, SearchStats)> {
        let (w, h) = self.template_dims();
        if w > f.width() || h > f.height() {
            return Err(MatchError::TemplateTooLarge {
                template_w: w,
                template_h: h,
                source_w: f.width(),
                source_h: f.height(),
            });
        }
        let tables = SumTables::build(f);
        Ok(self.search_tables(&tables))
    }

    /// Scans every placement over prebuilt tables. Rows are processed in
    /// parallel; output is ordered by `(v, u)` regardless of thread count.
    pub fn search_tables(&self, tables: &SumTables) -> (Vec<MatchRecord>, SearchStats) {
        let (w, h) = self.template_dims();
        let (cols, rows) = (tables.width() - w + 1, tables.height() - h + 1);
        let (fast, slow) = (PackedTemplate::new(&self.fast, tables), PackedTemplate::new(&self.slow, tables));
        let per_row: Vec<(Vec<MatchRecord>, SearchStats)> = (0..rows)
            .into_par_iter()
            .map(|v| {
                let mut found = Vec::new();
                let mut stats = SearchStats::default();
                for u in 0..cols {
                    if let Some(rho) = self.evaluate(tables, &fast, &slow, u, v, &mut stats) {
                        found.push(MatchRecord { u, v, rho });
                    }
                }
                (found, stats)
            })
            .collect();
        let mut matches = Vec::new();
        let mut stats = SearchStats::default();
        for (found, row_stats) in per_row {
            matches.extend(found);
            stats = stats.merge(row_stats);
        }
        (matches, stats)
    }

    #[inline]
    fn evaluate(
        &self,
        tables: &SumTables,
        fast: &PackedTemplate,
        slow: &PackedTemplate,
        u: usize,
        v: usize,
        stats: &mut SearchStats,
    ) -> Option<f64> {
        let (w, h) = self.template_dims();
        stats.positions_evaluated += 1;
        let (sum, sum_sq) = tables.rect_sums_unchecked(u, v, w, h);
        // the spread is an exact integer, so 0.0 means a uniform window
        let f_norm = centered_sum_sq(sum, sum_sq, w * h);
        if f_norm == 0.0 {
            return None;
        }
        let sums = tables.raw_sums();
        stats.segment_iterations += self.fast.len() as u64;
        let coarse = fast.ncc(sums, u, v, sum, f_norm)?;
        if coarse < self.threshold_fast {
            return None;
        }
        stats.slow_evaluations += 1;
        stats.segment_iterations += self.slow.len() as u64;
        let fine = slow.ncc(sums, u, v, sum, f_norm)?;
        (fine >= self.threshold_slow).then_some(fine)
    }

    /// Coarse-stage ρ at one placement, `None` where undefined.
    pub fn coarse_rho(&self, tables: &SumTables, u: usize, v: usize) -> Result<Option<f64>> {
        self.stage_rho(&self.fast, tables, u, v)
    }

    /// Fine-stage ρ at one placement, `None` where undefined.
    pub fn fine_rho(&self, tables: &SumTables, u: usize, v: usize) -> Result<Option<f64>> {
        self.stage_rho(&self.slow, tables, u, v)
    }

    fn stage_rho(&self, st: &SegmentedTemplate, tables: &SumTables, u: usize, v: usize) -> Result<Option<f64>> {
        let (sum, sum_sq) = tables.window_sums(u, v, st.width(), st.height())?;
        Ok(segmented_ncc(tables, st, u, v, sum, sum_sq))
    }
}

/// Approximate ρ of `st` at every placement (no thresholding).
pub fn segmented_surface(tables: &SumTables, st: &SegmentedTemplate) -> NccSurface {
    let (cols, rows) = (tables.width() - st.width() + 1, tables.height() - st.height() + 1);
    let packed = PackedTemplate::new(st, tables);
    let packed = &packed;
    let values: Vec<Option<f64>> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..cols).map(move |u| {
                let (sum, sum_sq) = tables.rect_sums_unchecked(u, v, st.width(), st.height());
                let f_norm = centered_sum_sq(sum, sum_sq, packed.n);
                packed.ncc(tables.raw_sums(), u, v, sum, f_norm)
            })
        })
        .collect();
    NccSurface::new(cols, rows, values)
}

/// Two-stage segmented search of `t` in `f`.
pub fn match_template(f: &GrayImage, t: &GrayImage, params: &SearchParams) -> Result<(Vec<MatchRecord>, SearchStats)> {
    check_fits(f, t)?;
    SegmentedMatcher::new(t, params)?.search(f)
}

/// Greedy suppression of overlapping `w`x`h` boxes, strongest first.
/// Survivors come back in `(v, u)` order.
pub fn non_maximum_suppression(matches: &[MatchRecord], w: usize, h: usize) -> Vec<MatchRecord> {
    let mut order: Vec<&MatchRecord> = matches.iter().collect();
    order.sort_by(|a, b| b.rho.total_cmp(&a.rho).then((a.v, a.u).cmp(&(b.v, b.u))));
    let mut kept: Vec<MatchRecord> = Vec::new();
    for m in order {
        let overlaps = kept.iter().any(|k| k.u.abs_diff(m.u) < w && k.v.abs_diff(m.v) < h);
        if !overlaps {
            kept.push(*m);
        }
    }
    kept.sort_by_key(|m| (m.v, m.u));
    kept
}

/// Strongest record, first in `(v, u)` order on ties.
pub fn best_match(matches: &[MatchRecord]) -> Option<MatchRecord> {
    matches.iter().copied().fold(None, |best: Option<MatchRecord>, m| match best {
        Some(b) if b.rho >= m.rho => Some(b),
        _ => Some(m),
    })
}
