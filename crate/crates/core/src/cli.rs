//! `leader` command-line surface. Every failure ends with exactly one line on
//! stderr of the form `error kind=<kind> msg=<text>` and a nonzero exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cmr::{encode, CmrParams, Encoding};
use crate::error::Error;
use crate::eval::{
    crop_and_filter, pair_minutiae, pr_curve, precision_recall_f1, sample_ranking, RankTies,
    ThresholdLevel, DEFAULT_MARGIN,
};
use crate::io::{
    angle_to_unit, direct_win_csv, load_image, maps_to_store, match_rows_csv,
    operating_points_csv, pr_curve_svg, ranking_csv, read_f1_table, read_minutiae, read_weights,
    save_gray_png, save_rgb_png, store_to_maps, write_atomic, write_minutiae, write_weights,
    MatchRow,
};
use crate::losses::{evaluate_losses, LossWeights, DEFAULT_EPSILON};
use crate::model::{build_model, random_model, Model, ModelConfig};
use crate::postprocess::DEFAULT_TAU_Q;
use crate::tensor::Tensor;

/// Environment variable naming the default weight container.
pub const WEIGHTS_ENV: &str = "LEADER_WEIGHTS";

#[derive(Debug, Parser)]
#[command(name = "leader", version, about = "Fingerprint minutiae extraction and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the network on an image and write the extracted minutiae.
    Extract(ExtractArgs),
    /// Build position/weight/direction/type targets from annotated minutiae.
    EncodeGt(EncodeArgs),
    /// Score predicted maps against ground-truth maps.
    Loss(LossArgs),
    /// Pair extracted with ground-truth minutiae and report P/R/F1.
    Evaluate(EvaluateArgs),
    /// Sweep the quality threshold and write the precision/recall curve.
    PrCurve(PrCurveArgs),
    /// Per-sample ranking statistics over several methods' F1 tables.
    Rank(RankArgs),
    /// Project intermediate activations onto three principal components.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Weight container; defaults to $LEADER_WEIGHTS.
    #[arg(long, conflicts_with = "random_weights")]
    weights: Option<PathBuf>,
    /// Use seeded random weights instead of a container.
    #[arg(long, value_name = "SEED")]
    random_weights: Option<u64>,
    /// Model config JSON; defaults to the built-in configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    image: PathBuf,
    /// Output minutiae file.
    #[arg(long, short)]
    out: PathBuf,
    /// Quality threshold.
    #[arg(long, default_value_t = DEFAULT_TAU_Q)]
    tau: f64,
    /// Also write the dense maps (PNG previews plus a lossless container).
    #[arg(long, value_name = "DIR")]
    maps: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    minutiae: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Override the image width from the minutiae header.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// JSON file holding either CMR parameters or a tagged encoding.
    #[arg(long, conflicts_with_all = ["delta", "beta", "sigma", "lambda", "gaussian"])]
    config: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Plain Gaussian position target of this sigma (ablation baseline).
    #[arg(long, value_name = "SIGMA", conflicts_with_all = ["delta", "beta", "sigma", "lambda"])]
    gaussian: Option<f64>,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Container written by `extract --maps`.
    #[arg(long)]
    pred: PathBuf,
    /// Container written by `encode-gt`.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    alpha_p: f64,
    #[arg(long, default_value_t = 0.10)]
    alpha_d: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha_t: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Write the record here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Level {
    Loose,
    Medium,
    Strict,
    All,
}

impl Level {
    fn levels(self) -> Vec<(&'static str, ThresholdLevel)> {
        let [l, m, s] = ThresholdLevel::standard();
        let all = [("loose", l), ("medium", m), ("strict", s)];
        match self {
            Level::Loose => vec![all[0]],
            Level::Medium => vec![all[1]],
            Level::Strict => vec![all[2]],
            Level::All => all.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Regime {
    Agnostic,
    Aware,
    Both,
}

impl Regime {
    fn flags(self) -> Vec<bool> {
        match self {
            Regime::Agnostic => vec![false],
            Regime::Aware => vec![true],
            Regime::Both => vec![false, true],
        }
    }
}

fn regime_name(type_aware: bool) -> &'static str {
    if type_aware {
        "aware"
    } else {
        "agnostic"
    }
}

#[derive(Debug, Args)]
struct PairingArgs {
    #[arg(long)]
    extracted: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Foreground mask image; without it no border filtering is applied.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Minimum distance to the mask border for a minutia to count, pixels.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    pairing: PairingArgs,
    #[arg(long, value_enum, default_value_t = Level::All)]
    level: Level,
    #[arg(long, value_enum, default_value_t = Regime::Both)]
    regime: Regime,
    /// Drop extracted minutiae with quality below this before pairing.
    #[arg(long)]
    tau: Option<f64>,
    /// CSV output; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrCurveArgs {
    #[command(flatten)]
    pairing: PairingArgs,
    #[arg(long, value_enum, default_value_t = Level::Loose)]
    level: Level,
    #[arg(long, value_enum, default_value_t = Regime::Agnostic)]
    regime: Regime,
    /// CSV of operating points.
    #[arg(long, short)]
    out: PathBuf,
    /// SVG plot of the curve.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieArg {
    Competition,
    Average,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Directory of `<method>.csv` files with `sample,f1` rows.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = TieArg::Competition)]
    ties: TieArg,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Input image; repeat to share one projection across several images.
    #[arg(long, required = true)]
    image: Vec<PathBuf>,
    /// Stage to capture; repeat or comma-separate.
    #[arg(long = "taps", required = true, value_delimiter = ',')]
    taps: Vec<String>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Lib(e) => match e {
                Error::Structural(_) => "structural",
                Error::MissingTensor(_) => "missing_tensor",
                Error::ShapeMismatch { .. } => "shape_mismatch",
                Error::NonFinite(_) => "non_finite",
                Error::InvalidParameter(_) => "invalid_parameter",
                Error::Format(_) => "format",
                Error::Parse { .. } => "parse",
                Error::Checksum { .. } => "checksum",
                Error::Truncated(_) => "truncated",
                Error::DuplicateName(_) => "duplicate_name",
                Error::Container(_) => "container",
                Error::Config(_) => "config",
                Error::Io(_) => "io",
            },
        }
    }

    /// 2 usage, 3 I/O, 4 malformed input file, 5 model/shape problems.
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::InvalidParameter(_)) => 2,
            CliError::Lib(Error::Io(_)) => 3,
            CliError::Lib(
                Error::Format(_)
                | Error::Parse { .. }
                | Error::Checksum { .. }
                | Error::Truncated(_)
                | Error::DuplicateName(_)
                | Error::Container(_),
            ) => 4,
            CliError::Lib(
                Error::Structural(_)
                | Error::MissingTensor(_)
                | Error::ShapeMismatch { .. }
                | Error::Config(_),
            ) => 5,
            CliError::Lib(Error::NonFinite(_)) => 1,
        }
    }

    fn message(&self) -> String {
        let raw = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        };
        raw.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return report(&CliError::Usage(first));
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> i32 {
    eprintln!("error kind={} msg={}", e.kind(), e.message());
    e.exit_code()
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Extract(a) => extract(a),
        Command::EncodeGt(a) => encode_gt(a),
        Command::Loss(a) => loss(a),
        Command::Evaluate(a) => evaluate(a),
        Command::PrCurve(a) => curve(a),
        Command::Rank(a) => rank(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn load_model(args: &ModelArgs) -> CliResult<Model> {
    let cfg = match &args.config {
        Some(p) => at(p, ModelConfig::load(p))?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = args.random_weights {
        return Ok(random_model(&cfg, seed)?);
    }
    let path = args
        .weights
        .clone()
        .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage(format!("no weights: pass --weights, --random-weights or set {WEIGHTS_ENV}"))
        })?;
    Ok(build_model(&at(&path, read_weights(&path))?, &cfg)?)
}

/// Adds the offending path to bare I/O errors.
fn at<T>(path: &Path, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::Lib(Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        ))),
        other => CliError::Lib(other),
    })
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult {
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(Error::InvalidParameter(format!("--tau must lie in [0, 1], got {}", a.tau)).into());
    }
    let model = load_model(&a.model)?;
    let image = at(&a.image, load_image(&a.image))?;
    let (set, maps) = model.extract(&image, a.tau)?;
    write_minutiae(&a.out, &set)?;
    if let Some(dir) = &a.maps {
        create_dir(dir)?;
        save_gray_png(dir.join("p_hat.png"), &maps.position)?;
        save_gray_png(dir.join("p_tilde.png"), &maps.refined)?;
        save_gray_png(dir.join("d_hat.png"), &maps.direction.map(angle_to_unit))?;
        save_gray_png(dir.join("t_hat.png"), &maps.kind)?;
        let store = maps_to_store(&[
            ("p_hat", &maps.position),
            ("p_tilde", &maps.refined),
            ("d_hat", &maps.direction),
            ("t_hat", &maps.kind),
            ("vx", &maps.direction_x),
            ("vy", &maps.direction_y),
        ])?;
        write_weights(dir.join("maps.leadw"), &store)?;
    }
    Ok(())
}

fn encoding_from(a: &EncodeArgs) -> CliResult<Encoding> {
    if let Some(path) = &a.config {
        let text = at(path, std::fs::read_to_string(path).map_err(Error::from))?;
        let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
        // Bare parameters are the common case; the tagged form selects the
        // Gaussian baseline.
        let enc = match serde_json::from_str::<CmrParams>(&text) {
            Ok(p) => Encoding::Cmr(p),
            Err(_) => serde_json::from_str::<Encoding>(&text).map_err(bad)?,
        };
        return Ok(enc);
    }
    if let Some(sigma) = a.gaussian {
        return Ok(Encoding::Gaussian { sigma });
    }
    let d = CmrParams::default();
    Ok(Encoding::Cmr(CmrParams::new(
        a.delta.unwrap_or(d.delta),
        a.beta.unwrap_or(d.beta),
        a.sigma.unwrap_or(d.sigma),
        a.lambda.unwrap_or(d.lambda),
    )?))
}

fn encode_gt(a: EncodeArgs) -> CliResult {
    let encoding = encoding_from(&a)?;
    let gt = at(&a.minutiae, read_minutiae(&a.minutiae))?;
    let w = a.width.unwrap_or(gt.width());
    let h = a.height.unwrap_or(gt.height());
    let maps = encode(&gt, h, w, &encoding)?;
    create_dir(&a.out_dir)?;
    save_gray_png(a.out_dir.join("position.png"), &maps.position)?;
    save_gray_png(a.out_dir.join("weight.png"), &maps.weight)?;
    save_gray_png(a.out_dir.join("direction.png"), &maps.direction.map(angle_to_unit))?;
    save_gray_png(a.out_dir.join("kind.png"), &maps.kind)?;
    let store = maps_to_store(&[
        ("position", &maps.position),
        ("weight", &maps.weight),
        ("direction", &maps.direction),
        ("kind", &maps.kind),
    ])?;
    write_weights(a.out_dir.join("gt.leadw"), &store)?;
    Ok(())
}

fn loss(a: LossArgs) -> CliResult {
    let pred = at(&a.pred, read_weights(&a.pred))?;
    let gt = at(&a.gt, read_weights(&a.gt))?;
    let get = |s, n| store_to_maps(s, n);
    let weights = LossWeights {
        alpha_p: a.alpha_p,
        alpha_d: a.alpha_d,
        alpha_t: a.alpha_t,
        epsilon: a.epsilon,
    };
    let record = evaluate_losses(
        &get(&gt, "position")?,
        &get(&gt, "weight")?,
        &get(&gt, "direction")?,
        &get(&gt, "kind")?,
        &get(&pred, "p_hat")?,
        &get(&pred, "d_hat")?,
        &get(&pred, "t_hat")?,
        &weights,
    )?;
    let text = format!(
        "{}\n",
        serde_json::to_string_pretty(&record).expect("loss record serializes")
    );
    emit(a.out.as_deref(), &text)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn read_mask(path: Option<&Path>) -> CliResult<Option<Tensor>> {
    path.map(|p| at(p, load_image(p))).transpose()
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let p = &a.pairing;
    let mut extracted = at(&p.extracted, read_minutiae(&p.extracted))?;
    if let Some(tau) = a.tau {
        extracted = extracted.above_quality(tau);
    }
    let gt = at(&p.gt, read_minutiae(&p.gt))?;
    let (e, g) = match read_mask(p.mask.as_deref())? {
        Some(m) => (
            crop_and_filter(&extracted, &m, p.margin)?.set,
            crop_and_filter(&gt, &m, p.margin)?.set,
        ),
        None => (extracted, gt),
    };
    let mut rows = Vec::new();
    for (name, level) in a.level.levels() {
        for aware in a.regime.flags() {
            let r = pair_minutiae(&e, &g, &level, aware);
            let op = precision_recall_f1(&r);
            rows.push(MatchRow {
                level: name.to_string(),
                rho_t: level.rho_t,
                theta_t: level.theta_t,
                regime: regime_name(aware).to_string(),
                tp: r.true_positives,
                fp: r.false_positives,
                fn_: r.false_negatives,
                precision: op.precision,
                recall: op.recall,
                f1: op.f1,
            });
        }
    }
    emit(a.out.as_deref(), &match_rows_csv(&rows)?)
}

fn curve(a: PrCurveArgs) -> CliResult {
    let levels = a.level.levels();
    let flags = a.regime.flags();
    let ([(level_name, level)], [aware]) = (levels.as_slice(), flags.as_slice()) else {
        return Err(CliError::Usage(
            "pr-curve needs a single --level and a single --regime".into(),
        ));
    };
    let p = &a.pairing;
    let extracted = at(&p.extracted, read_minutiae(&p.extracted))?;
    let gt = at(&p.gt, read_minutiae(&p.gt))?;
    let mask = read_mask(p.mask.as_deref())?;
    let c = pr_curve(&extracted, &gt, mask.as_ref(), level, *aware, p.margin)?;
    write_atomic(&a.out, operating_points_csv(&c.points)?.as_bytes())?;
    if let Some(svg) = &a.svg {
        let title = format!("{level_name}, type-{}", regime_name(*aware));
        write_atomic(svg, pr_curve_svg(&c, &title).as_bytes())?;
    }
    Ok(())
}

fn rank(a: RankArgs) -> CliResult {
    let (methods, _, table) = at(&a.dir, read_f1_table(&a.dir))?;
    let ties = match a.ties {
        TieArg::Competition => RankTies::Competition,
        TieArg::Average => RankTies::Average,
    };
    let report = sample_ranking(&methods, &table, ties)?;
    create_dir(&a.out_dir)?;
    write_atomic(a.out_dir.join("ranking.csv"), ranking_csv(&report)?.as_bytes())?;
    write_atomic(a.out_dir.join("direct_win.csv"), direct_win_csv(&report)?.as_bytes())?;
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let known = model.tap_names();
    if let Some(bad) = a.taps.iter().find(|t| !known.contains(t)) {
        return Err(CliError::Usage(format!(
            "unknown tap `{bad}`; known taps: {}",
            known.join(",")
        )));
    }
    let tap_refs: Vec<&str> = a.taps.iter().map(String::as_str).collect();
    let mut captured = Vec::with_capacity(a.image.len());
    for path in &a.image {
        let (_, taps) = model.forward(&at(path, load_image(path))?, &tap_refs)?;
        captured.push(taps);
    }
    create_dir(&a.out_dir)?;
    for tap in &a.taps {
        let stack: Vec<Tensor> = captured.iter().map(|t| t[tap].clone()).collect();
        let rgb = crate::eval::pca_projection(&stack)?;
        for (path, img) in a.image.iter().zip(&rgb) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let name = format!("{stem}_{}.png", tap.replace('.', "_"));
            save_rgb_png(a.out_dir.join(name), img)?;
        }
    }
    Ok(())
}
