//! Template matching with segmented normalized cross-correlation.
//!
//! A template is approximated once by a small set of constant-valued
//! rectangles ([`segmentation`]). Matching then needs one summed-area-table
//! lookup per rectangle per placement ([`integral`], [`search`]), with a
//! coarse approximation screening placements before a fine one scores them.
//! Exact pixelwise NCC ([`search::naive_search`]) and an FFT engine
//! ([`fft`]) serve as baselines, and [`bench`] times all three.
//!
//! ```no_run
//! use segncc::{load_image, match_template, SearchParams};
//!
//! let source = load_image("screen.png")?;
//! let template = load_image("button.png")?;
//! let (matches, stats) = match_template(&source, &template, &SearchParams::default())?;
//! for m in &matches {
//!     println!("({}, {}) rho={:.3}", m.u, m.v, m.rho);
//! }
//! println!("{} placements, {} fine evaluations", stats.positions_evaluated, stats.slow_evaluations);
//! # Ok::<(), segncc::MatchError>(())
//! ```

pub mod bench;
pub mod error;
pub mod fft;
pub mod image;
pub mod integral;
pub mod search;
pub mod segmentation;

pub use error::{MatchError, Result};
pub use fft::{fft_ncc_surface, fft_prepare_template, fft_search, PreparedFftTemplate};
pub use image::{
    generate_synthetic, load_image, plant_template, save_image, to_grayscale, GrayImage, SyntheticKind,
    SyntheticSpec,
};
pub use integral::{build_sum_tables, SumTables};
pub use search::{
    match_template, naive_search, ncc_naive, segmented_denominator, segmented_numerator, MatchRecord,
    NccSurface, SearchParams, SearchStats, SegmentedMatcher,
};
pub use segmentation::{
    merge_redundant_segments, precompute_template_approximation, render_approximation, segment_stats,
    split_segment, Rect, Segment, SegmentedTemplate,
};
