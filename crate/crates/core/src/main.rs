use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use segncc::bench::{run_benchmark, write_report, Engine, ReportFormat, RunConfig};
use segncc::image::save_overlay;
use segncc::search::{non_maximum_suppression, segmented_surface};
use segncc::segmentation::segments_to_json;
use segncc::{
    generate_synthetic, load_image, plant_template, precompute_template_approximation, render_approximation,
    save_image, GrayImage, MatchError, MatchRecord, SearchParams, SegmentedMatcher, SumTables, SyntheticKind,
    SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "segncc", version, about = "Template matching with segmented normalized cross-correlation")]
struct Cli {
    /// Worker thread cap (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find a template in a source image with the two-stage segmented matcher
    Match(MatchArgs),
    /// Build a segmented approximation and write it as JSON / PNG
    Segment(SegmentArgs),
    /// Time each matching engine on a set of templates
    Bench(BenchArgs),
    /// Generate a seeded synthetic image, optionally with a planted template
    Synth(SynthArgs),
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.9)]
    precision: f64,
    #[arg(long, default_value_t = 5000)]
    kmax: usize,
    /// Coarse threshold as a fraction of the template std
    #[arg(long, default_value_t = 0.99)]
    sigma_fast: f64,
    /// Fine threshold as a fraction of the template std
    #[arg(long, default_value_t = 0.1)]
    sigma_slow: f64,
}

impl ParamArgs {
    fn params(&self) -> SearchParams {
        SearchParams {
            sigma_fast_factor: self.sigma_fast,
            sigma_slow_factor: self.sigma_slow,
            k_max: self.kmax,
            precision: self.precision,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
    /// Write the source with a rectangle at each match
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Drop matches overlapping a stronger one
    #[arg(long)]
    nms: bool,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    template: PathBuf,
    /// Split threshold as a fraction of the template std
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 5000)]
    kmax: usize,
    /// Segment JSON destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rendered approximation PNG
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long = "template", required = true)]
    templates: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "segmented,fft,naive")]
    engines: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Seconds; naive search is skipped when projected to run longer
    #[arg(long, default_value_t = 60.0)]
    naive_cap: f64,
    #[command(flatten)]
    params: ParamArgs,
    /// Report path; `.csv` writes CSV, anything else JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Image kind: block-mosaic, gradient, uniform-noise
    #[arg(long, default_value = "block-mosaic")]
    kind: String,
    #[arg(long, default_value_t = 8)]
    block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Template image to plant into the generated source
    #[arg(long, requires = "at")]
    plant: Option<PathBuf>,
    /// Plant offset as U,V
    #[arg(long, value_delimiter = ',', num_args = 1)]
    at: Option<Vec<usize>>,
    /// Output image (.pgm or .png)
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(MatchError),
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::InvalidParams(msg) | MatchError::InvalidSpec(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

#[derive(Serialize)]
struct MatchOutput<'a> {
    matches: &'a [MatchRecord],
    stats: StatsOutput,
}

#[derive(Serialize)]
struct StatsOutput {
    positions: u64,
    slow_evals: u64,
}

fn run_match(args: &MatchArgs) -> Result<(), CliError> {
    let params = args.params.params();
    params.validate()?;
    let source = load_image(&args.source)?;
    let template = load_image(&args.template)?;
    let matcher = SegmentedMatcher::new(&template, &params)?;
    let (mut matches, stats) = matcher.search(&source)?;
    if args.nms {
        matches = non_maximum_suppression(&matches, template.width(), template.height());
    }

    if matches.is_empty() {
        let tables = SumTables::build(&source);
        match segmented_surface(&tables, matcher.slow()).argmax() {
            Some(best) => eprintln!(
                "no matches above {:.4}; best candidate ({}, {}) rho={:.4}",
                matcher.threshold_slow(),
                best.u,
                best.v,
                best.rho
            ),
            None => eprintln!("no matches: every source window is uniform"),
        }
    }

    match args.format {
        OutputFormat::Json => {
            let out = MatchOutput {
                matches: &matches,
                stats: StatsOutput {
                    positions: stats.positions_evaluated,
                    slow_evals: stats.slow_evaluations,
                },
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("match output serializes"));
        }
        OutputFormat::Csv => {
            println!("u,v,rho");
            for m in &matches {
                println!("{},{},{}", m.u, m.v, m.rho);
            }
        }
    }

    if let Some(path) = &args.overlay {
        let boxes: Vec<(usize, usize)> = matches.iter().map(|m| (m.u, m.v)).collect();
        save_overlay(&source, &boxes, template.width(), template.height(), path)?;
    }
    Ok(())
}

fn run_segment(args: &SegmentArgs) -> Result<(), CliError> {
    if !(args.sigma > 0.0 && args.sigma < 1.0) {
        return Err(CliError::Usage(format!("--sigma {} must lie in (0, 1)", args.sigma)));
    }
    let template = load_image(&args.template)?;
    let (_, sigma_t) = template.mean_std();
    let st = precompute_template_approximation(&template, args.sigma * sigma_t, args.kmax)?;
    let json = segments_to_json(st.segments());
    match &args.out {
        Some(path) => std::fs::write(path, json).map_err(|source| MatchError::Io {
            path: path.clone(),
            source,
        })?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.render {
        save_image(&render_approximation(&st), path)?;
    }
    eprintln!(
        "{} segments, sigma_max {:.3}, rho_self {:.6}",
        st.len(),
        st.sigma_used(),
        st.rho_self()
    );
    Ok(())
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn run_bench(args: &BenchArgs) -> Result<(), CliError> {
    let engines = args
        .engines
        .iter()
        .map(|e| e.parse::<Engine>())
        .collect::<Result<Vec<_>, _>>()?;
    if !(args.naive_cap.is_finite() && args.naive_cap >= 0.0) {
        return Err(CliError::Usage(format!("--naive-cap {} must be non-negative", args.naive_cap)));
    }
    let config = RunConfig {
        params: args.params.params(),
        repeats: args.repeats,
        engines,
        naive_time_cap: Duration::from_secs_f64(args.naive_cap),
    };
    config.validate()?;
    let source = load_image(&args.source)?;
    let templates = args
        .templates
        .iter()
        .map(|p| Ok((file_id(p), load_image(p)?)))
        .collect::<Result<Vec<(String, GrayImage)>, MatchError>>()?;
    let report = run_benchmark(&source, &file_id(&args.source), &templates, &config)?;
    for failure in &report.failures {
        eprintln!("{}: {}", failure.template_id, failure.reason);
    }
    match &args.out {
        Some(path) => {
            let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
            let format = if is_csv { ReportFormat::Csv } else { ReportFormat::Json };
            write_report(&report, format, path)?;
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let kind: SyntheticKind = args.kind.parse()?;
    let spec = SyntheticSpec {
        width: args.width,
        height: args.height,
        kind,
        block_size: args.block,
        seed: args.seed,
    };
    let mut img = generate_synthetic(&spec)?;
    if let (Some(plant), Some(at)) = (&args.plant, &args.at) {
        let template = load_image(plant)?;
        img = plant_template(&img, &template, at[0], at[1])?;
    }
    save_image(&img, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Match(args) => run_match(args),
        Command::Segment(args) => run_segment(args),
        Command::Bench(args) => run_bench(args),
        Command::Synth(args) => run_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
