//! `anchorscope` command-line front end.
//!
//! Exit codes: 0 on success, 1 on validation or parse errors, 2 on I/O errors.

use std::f64::consts::SQRT_2;
use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorscope::ams::run_ams;
use anchorscope::anchors::{detector_design, ladder_design, AnchorDesign};
use anchorscope::corpus::{
    ar_coverage, attach_dims, generate_synthetic, parse_wider, read_dims_csv, summarize, write_wider, ArLaw,
    FaceFilter, ImageRecord,
};
use anchorscope::cropsim::{simulate, CropParams, DEFAULT_SCALES};
use anchorscope::matching::{match_corpus, MatchConfig, Strategy};
use anchorscope::report::{
    ams_report_value, ams_table, emit_ams, emit_corpus_summary, emit_match, emit_rfd, emit_sim, face_stats_csv,
    ReportFormat, SCHEMA_VERSION,
};
use anchorscope::rfd::rfd_spec;
use anchorscope::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "anchorscope", version, about = "Anchor-matching analytics for face detection")]
struct Cli {
    /// Cap on worker threads; results do not depend on it [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Best-achievable IoU per face and the matched aspect-ratio range
    Ams(AmsArgs),
    /// Label-assignment audit over a corpus
    Match(MatchArgs),
    /// Seeded random-crop simulation
    Simulate(SimulateArgs),
    /// Structure, parameter count and receptive fields of the RFD block
    Rfd(RfdArgs),
    /// Validate an annotation file and summarize it
    Parse(ParseArgs),
    /// Fraction of faces inside an aspect-ratio sampling domain
    Coverage(CoverageArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    Sam,
    SamCompensate,
    Warm,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sam => Strategy::Sam,
            StrategyArg::SamCompensate => Strategy::SamCompensate,
            StrategyArg::Warm => Strategy::Warm,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FilterArg {
    Valid,
    NonDegenerate,
}

impl From<FilterArg> for FaceFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Valid => FaceFilter::Valid,
            FilterArg::NonDegenerate => FaceFilter::NonDegenerate,
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    /// WIDER FACE ground-truth file, or `-` for stdin
    #[arg(long, conflicts_with = "synthetic")]
    annotations: Option<PathBuf>,

    /// Sidecar CSV `path,width,height` with image sizes
    #[arg(long)]
    dims: Option<PathBuf>,

    /// Use a synthetic corpus of N single-face images instead of a file
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,

    /// Seed of the synthetic corpus
    #[arg(long, default_value_t = 0)]
    corpus_seed: u64,

    /// Log-uniform aspect-ratio range of the synthetic corpus
    #[arg(long, value_delimiter = ',', value_name = "LO,HI", default_values_t = [0.2, 5.0])]
    ar_range: Vec<f64>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// json, csv or table (`text` is accepted for table)
    #[arg(long)]
    format: Option<String>,

    /// Write results here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Match config JSON; explicit flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,

    /// Label-assignment strategy [default: warm]
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,

    /// Base positive threshold T0 [default: 0.5]
    #[arg(long)]
    tp: Option<f64>,

    /// Negative threshold [default: 0.35]
    #[arg(long)]
    tn: Option<f64>,

    /// Largest threshold reduction under WARM [default: 0.1]
    #[arg(long)]
    delta: Option<f64>,

    /// Inner radius of the extreme domain [default: 2.0]
    #[arg(long)]
    eta0: Option<f64>,

    /// Outer radius of the extreme domain [default: 3.0]
    #[arg(long)]
    eta1: Option<f64>,

    /// Anchor aspect ratio h/w [default: 1.0]
    #[arg(long)]
    anchor_ar: Option<f64>,

    /// Anchor design JSON [default: the P2-P6 detector design]
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AmsArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Positive threshold(s); a comma list gives one row each
    #[arg(long, value_delimiter = ',', default_values_t = [0.5])]
    tp: Vec<f64>,

    /// Anchor aspect ratio h/w [default: 1.0, or the design's]
    #[arg(long)]
    anchor_ar: Option<f64>,

    /// Ratio between consecutive ladder sizes [default: 1.4142135624]
    #[arg(long)]
    scale_step: Option<f64>,

    /// Anchor design JSON [default: ladder 4..512 at --scale-step]
    #[arg(long, conflicts_with = "scale_step")]
    design: Option<PathBuf>,

    /// Which faces to analyze
    #[arg(long, value_enum, default_value = "valid")]
    filter: FilterArg,

    /// Also write per-face statistics as CSV to this path
    #[arg(long)]
    faces_csv: Option<PathBuf>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    config: ConfigArgs,

    /// Canvas `W,H` for images without dimensions
    #[arg(long, value_delimiter = ',', value_name = "W,H")]
    canvas: Option<Vec<f64>>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    config: ConfigArgs,

    /// Crops per image
    #[arg(long, default_value_t = 100)]
    crops: usize,

    /// Crop seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Patch side options as fractions of the shorter image side
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALES)]
    scales: Vec<f64>,

    /// Side of the square training canvas in pixels
    #[arg(long, default_value_t = 640.0)]
    output_side: f64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct RfdArgs {
    /// Block channel count, divisible by 4
    #[arg(long, default_value_t = 64)]
    channels: usize,

    /// Count convolution biases
    #[arg(long)]
    bias: bool,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ParseArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Re-serialize the parsed records in canonical form to this path
    #[arg(long)]
    canonical: Option<PathBuf>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Domain center (anchor aspect ratio)
    #[arg(long, default_value_t = 1.0)]
    anchor_ar: f64,

    /// Domain radius; a comma list gives one row each
    #[arg(long, value_delimiter = ',', default_values_t = [5.0])]
    eta: Vec<f64>,

    /// Which faces to count
    #[arg(long, value_enum, default_value = "valid")]
    filter: FilterArg,

    #[command(flatten)]
    output: OutputArgs,
}

fn format_or(output: &OutputArgs, default: ReportFormat) -> CliResult<ReportFormat> {
    match &output.format {
        Some(f) => Ok(f.parse()?),
        None => Ok(default),
    }
}

fn emit(output: &OutputArgs, text: &str) -> CliResult<()> {
    match &output.out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn pair(v: &[f64], flag: &str) -> CliResult<[f64; 2]> {
    <[f64; 2]>::try_from(v).map_err(|_| invalid(format!("{flag} takes two comma-separated values")))
}

fn load_corpus(input: &InputArgs) -> CliResult<Vec<ImageRecord>> {
    let mut records = match (&input.annotations, input.synthetic) {
        (Some(path), _) if path.as_os_str() == "-" => {
            let mut text = String::new();
            io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| CliError::Io(format!("stdin: {e}")))?;
            parse_wider(text.as_bytes())?
        }
        (Some(path), _) => parse_wider(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?))?,
        (None, Some(n)) => {
            let [lo, hi] = pair(&input.ar_range, "--ar-range")?;
            generate_synthetic(input.corpus_seed, n, &ArLaw::LogUniform { lo, hi })?
        }
        (None, None) => return Err(invalid("need --annotations or --synthetic")),
    };
    if let Some(path) = &input.dims {
        let dims = read_dims_csv(File::open(path).map_err(|e| io_err(path, e))?)?;
        attach_dims(&mut records, &dims);
    }
    Ok(records)
}

/// Resolves the match config (defaults, then `--config`, then flags) and the
/// anchor design, keeping their aspect ratios consistent.
fn resolve_config(args: &ConfigArgs) -> CliResult<(MatchConfig, AnchorDesign)> {
    let mut cfg = match &args.config {
        Some(path) => MatchConfig::from_json(&read_text(path)?)?,
        None => MatchConfig::default(),
    };
    let design = match &args.design {
        Some(path) => Some(AnchorDesign::from_json(&read_text(path)?)?),
        None => None,
    };
    if let Some(s) = args.strategy {
        cfg.strategy = s.into();
    }
    for (slot, flag) in [
        (&mut cfg.t0, args.tp),
        (&mut cfg.tn, args.tn),
        (&mut cfg.delta, args.delta),
        (&mut cfg.eta0, args.eta0),
        (&mut cfg.eta1, args.eta1),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    let explicit_ar = args.anchor_ar.is_some() || args.config.is_some();
    if let Some(ar) = args.anchor_ar {
        cfg.anchor_ar = ar;
    }
    let mut design = match design {
        Some(d) if explicit_ar && d.aspect_ratio != cfg.anchor_ar => {
            return Err(invalid(format!(
                "anchor aspect ratio {} disagrees with the design's {}",
                cfg.anchor_ar, d.aspect_ratio
            )))
        }
        Some(d) => {
            cfg.anchor_ar = d.aspect_ratio;
            d
        }
        None => detector_design(),
    };
    design.aspect_ratio = cfg.anchor_ar;
    cfg.validate()?;
    design.validate()?;
    Ok((cfg, design))
}

fn run_ams_cmd(args: &AmsArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Table)?;
    let design = match &args.design {
        Some(path) => {
            let mut d = AnchorDesign::from_json(&read_text(path)?)?;
            if let Some(ar) = args.anchor_ar {
                d.aspect_ratio = ar;
                d.validate()?;
            }
            d
        }
        None => ladder_design(
            4.0,
            512.0,
            args.scale_step.unwrap_or(SQRT_2),
            args.anchor_ar.unwrap_or(1.0),
        )?,
    };
    if args.tp.len() > 1 && (args.faces_csv.is_some() || format == ReportFormat::Csv) {
        return Err(invalid("per-face CSV needs a single --tp"));
    }
    let corpus = load_corpus(&args.input)?;
    let mut runs = Vec::with_capacity(args.tp.len());
    for &tp in &args.tp {
        runs.push(run_ams(&corpus, &design, tp, args.filter.into())?);
    }
    if let Some(path) = &args.faces_csv {
        let csv = face_stats_csv(&runs[0].1)?;
        fs::write(path, csv).map_err(|e| io_err(path, e))?;
    }
    let text = match (format, runs.as_slice()) {
        (_, [(report, stats)]) => emit_ams(report, stats, format)?,
        (ReportFormat::Table, _) => ams_table(&runs.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>()),
        _ => {
            let rows: Vec<_> = runs.iter().map(|(r, _)| ams_report_value(r)).collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("JSON value serializes");
            s.push('\n');
            s
        }
    };
    emit(&args.output, &text)
}

fn run_match_cmd(args: &MatchArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Table)?;
    let (cfg, design) = resolve_config(&args.config)?;
    let corpus = load_corpus(&args.input)?;
    let canvas = match &args.canvas {
        Some(v) => {
            let [w, h] = pair(v, "--canvas")?;
            Some((w, h))
        }
        None => None,
    };
    let summary = match_corpus(&corpus, &design, &cfg, canvas)?;
    emit(&args.output, &emit_match(&cfg, &summary, format)?)
}

fn run_simulate_cmd(args: &SimulateArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Json)?;
    let (cfg, design) = resolve_config(&args.config)?;
    let params = CropParams {
        scale_options: args.scales.clone(),
        output_side: args.output_side,
        ..CropParams::default()
    };
    params.validate()?;
    let corpus = load_corpus(&args.input)?;
    let outcome = simulate(&corpus, &design, &cfg, &params, args.crops, args.seed)?;
    emit(&args.output, &emit_sim(&outcome, format)?)
}

fn run_rfd_cmd(args: &RfdArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Table)?;
    let spec = rfd_spec(args.channels)?;
    emit(&args.output, &emit_rfd(&spec, args.bias, format)?)
}

fn run_parse_cmd(args: &ParseArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Table)?;
    let corpus = load_corpus(&args.input)?;
    if let Some(path) = &args.canonical {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = io::BufWriter::new(file);
        write_wider(&corpus, &mut w)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    emit(&args.output, &emit_corpus_summary(&summarize(&corpus), format)?)
}

fn run_coverage_cmd(args: &CoverageArgs) -> CliResult<()> {
    let format = format_or(&args.output, ReportFormat::Table)?;
    let corpus = load_corpus(&args.input)?;
    let mut rows = Vec::with_capacity(args.eta.len());
    for &eta in &args.eta {
        rows.push((eta, ar_coverage(&corpus, args.anchor_ar, eta, args.filter.into())?));
    }
    let text = match format {
        ReportFormat::Json => {
            let v = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "anchor_ar": args.anchor_ar,
                "rows": rows.iter().map(|(eta, c)| serde_json::json!({
                    "domain": format!("D({:.2},{:.2})", args.anchor_ar, eta),
                    "eta": eta,
                    "coverage": (c * 1e6).round() / 1e6,
                })).collect::<Vec<_>>(),
            });
            let mut s = serde_json::to_string_pretty(&v).expect("JSON value serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("anchor_ar,eta,coverage\n");
            for (eta, c) in &rows {
                s.push_str(&format!("{:.6},{:.6},{:.6}\n", args.anchor_ar, eta, c));
            }
            s
        }
        ReportFormat::Table => {
            let mut s = String::new();
            for (eta, c) in &rows {
                s.push_str(&format!("D({:.2},{:.2})  {:.6}\n", args.anchor_ar, eta, c));
            }
            s
        }
    };
    emit(&args.output, &text)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Ams(a) => run_ams_cmd(a),
        Command::Match(a) => run_match_cmd(a),
        Command::Simulate(a) => run_simulate_cmd(a),
        Command::Rfd(a) => run_rfd_cmd(a),
        Command::Parse(a) => run_parse_cmd(a),
        Command::Coverage(a) => run_coverage_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Invalid(msg) | CliError::Io(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
