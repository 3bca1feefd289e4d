//! Benchmark harness timing every matching engine on the same inputs.
//!
//! Preparation and search are timed separately: preparation covers building
//! both approximations and thresholds (or the template spectrum), search
//! covers the source sum tables and the scan over all placements.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{MatchError, Result};
use crate::fft::{fft_ncc_surface, fft_prepare_template};
use crate::image::GrayImage;
use crate::search::{best_match, naive_search, SearchParams, SegmentedMatcher};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Engine {
    Segmented,
    Fft,
    Naive,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Segmented, Engine::Fft, Engine::Naive];
}

impl FromStr for Engine {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "segmented" => Ok(Self::Segmented),
            "fft" => Ok(Self::Fft),
            "naive" => Ok(Self::Naive),
            other => Err(MatchError::InvalidParams(format!("unknown engine {other:?}"))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Segmented => "segmented",
            Self::Fft => "fft",
            Self::Naive => "naive",
        })
    }
}

/// Image size, serialized as `"WxH"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn of(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Dims {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self> {
        let parse = || {
            let (w, h) = s.split_once('x')?;
            Some(Dims {
                width: w.parse().ok()?,
                height: h.parse().ok()?,
            })
        };
        parse().ok_or_else(|| MatchError::Report(format!("bad dimensions {s:?}")))
    }
}

impl Serialize for Dims {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NaiveMarker {
    /// Projected run time exceeded the configured cap.
    Capped,
    /// Engine not requested.
    Skipped,
}

/// Naive search time in seconds, or why there is none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NaiveTiming {
    Seconds(f64),
    Marker(NaiveMarker),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReportRow {
    pub source_id: String,
    pub template_id: String,
    pub source_dims: Dims,
    pub template_dims: Dims,
    pub k_fast: Option<usize>,
    pub k_slow: Option<usize>,
    pub prep_time_segmented: Option<f64>,
    pub prep_time_fft: Option<f64>,
    pub search_time_segmented: Option<f64>,
    pub search_time_fft: Option<f64>,
    pub search_time_naive: NaiveTiming,
    pub max_ncc_segmented: Option<f64>,
    pub max_ncc_fft: Option<f64>,
    pub q_slow: Option<u64>,
}

impl BenchReportRow {
    pub const COLUMNS: [&'static str; 14] = [
        "source_id",
        "template_id",
        "source_dims",
        "template_dims",
        "k_fast",
        "k_slow",
        "prep_time_segmented",
        "prep_time_fft",
        "search_time_segmented",
        "search_time_fft",
        "search_time_naive",
        "max_ncc_segmented",
        "max_ncc_fft",
        "q_slow",
    ];
}

/// A template that could not be benchmarked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub source_id: String,
    pub template_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchReportRow>,
    #[serde(default)]
    pub failures: Vec<BenchFailure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: SearchParams,
    /// Timings are medians over this many runs.
    pub repeats: usize,
    pub engines: Vec<Engine>,
    /// Naive search is skipped when its projected time exceeds this.
    pub naive_time_cap: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SearchParams::default(),
            repeats: 5,
            engines: Engine::ALL.to_vec(),
            naive_time_cap: Duration::from_secs(60),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.repeats == 0 {
            return Err(MatchError::InvalidParams("repeats must be at least 1".into()));
        }
        Ok(())
    }

    fn runs(&self, engine: Engine) -> bool {
        self.engines.contains(&engine)
    }
}

/// Median wall time of `repeats` calls, and the last result.
pub fn timed_median<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    assert!(repeats >= 1);
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f();
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    (median, last.expect("repeats >= 1"))
}

/// Estimated wall time of a full naive search, extrapolated from a run on
/// a crop with at most `sample` placements.
pub fn project_naive_time(f: &GrayImage, t: &GrayImage, sample: usize) -> Result<Duration> {
    let (cols, rows) = (f.width() - t.width() + 1, f.height() - t.height() + 1);
    let positions = cols * rows;
    let side = (sample as f64).sqrt().floor().max(1.0) as usize;
    let (sc, sr) = (cols.min(side), rows.min(side));
    let crop = f.extract(0, 0, t.width() + sc - 1, t.height() + sr - 1)?;
    let start = Instant::now();
    naive_search(&crop, t)?;
    let per_position = start.elapsed().as_secs_f64() / (sc * sr) as f64;
    Ok(Duration::from_secs_f64(per_position * positions as f64))
}

fn bench_template(
    source: &GrayImage,
    source_id: &str,
    template_id: &str,
    t: &GrayImage,
    config: &RunConfig,
) -> Result<BenchReportRow> {
    if t.width() > source.width() || t.height() > source.height() {
        return Err(MatchError::TemplateTooLarge {
            template_w: t.width(),
            template_h: t.height(),
            source_w: source.width(),
            source_h: source.height(),
        });
    }
    if t.is_uniform() {
        return Err(MatchError::UniformTemplate);
    }
    let mut row = BenchReportRow {
        source_id: source_id.to_string(),
        template_id: template_id.to_string(),
        source_dims: Dims::of(source),
        template_dims: Dims::of(t),
        k_fast: None,
        k_slow: None,
        prep_time_segmented: None,
        prep_time_fft: None,
        search_time_segmented: None,
        search_time_fft: None,
        search_time_naive: NaiveTiming::Marker(NaiveMarker::Skipped),
        max_ncc_segmented: None,
        max_ncc_fft: None,
        q_slow: None,
    };

    if config.runs(Engine::Segmented) {
        let (prep, matcher) = timed_median(config.repeats, || SegmentedMatcher::new(t, &config.params));
        let matcher = matcher?;
        let (search, found) = timed_median(config.repeats, || matcher.search(source));
        let (matches, stats) = found?;
        row.k_fast = Some(matcher.fast().len());
        row.k_slow = Some(matcher.slow().len());
        row.prep_time_segmented = Some(prep);
        row.search_time_segmented = Some(search);
        row.max_ncc_segmented = best_match(&matches).map(|m| m.rho);
        row.q_slow = Some(stats.slow_evaluations);
    }

    if config.runs(Engine::Fft) {
        let (prep, prepared) =
            timed_median(config.repeats, || fft_prepare_template(t, source.width(), source.height()));
        let prepared = prepared?;
        let (search, surface) = timed_median(config.repeats, || fft_ncc_surface(source, &prepared));
        row.prep_time_fft = Some(prep);
        row.search_time_fft = Some(search);
        row.max_ncc_fft = surface?.argmax().map(|m| m.rho);
    }

    if config.runs(Engine::Naive) {
        let projected = project_naive_time(source, t, 256)?;
        row.search_time_naive = if projected > config.naive_time_cap {
            NaiveTiming::Marker(NaiveMarker::Capped)
        } else {
            let (search, surface) = timed_median(config.repeats, || naive_search(source, t));
            surface?;
            NaiveTiming::Seconds(search)
        };
    }
    Ok(row)
}

/// One row per template; rows run sequentially. Templates that cannot be
/// matched are listed under `failures` and the run continues.
pub fn run_benchmark(
    source: &GrayImage,
    source_id: &str,
    templates: &[(String, GrayImage)],
    config: &RunConfig,
) -> Result<BenchReport> {
    config.validate()?;
    let mut report = BenchReport::default();
    for (template_id, t) in templates {
        match bench_template(source, source_id, template_id, t, config) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push(BenchFailure {
                source_id: source_id.to_string(),
                template_id: template_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(MatchError::InvalidParams(format!("unknown report format {other:?}"))),
        }
    }
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| MatchError::Report(e.to_string()))
    }

    /// Header line plus one line per row; failures are not included.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        writer
            .write_record(BenchReportRow::COLUMNS)
            .map_err(|e| MatchError::Report(e.to_string()))?;
        for row in &self.rows {
            writer.serialize(row).map_err(|e| MatchError::Report(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| MatchError::Report(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn write_report(report: &BenchReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv()?,
    };
    std::fs::write(path, text).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })
}
