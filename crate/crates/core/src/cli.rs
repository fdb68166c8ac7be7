//! The `flowuq` command line.
//!
//! Manifests are JSON lines, one record per line. Relative paths are
//! resolved against the manifest's directory. A record looks like
//!
//! ```json
//! {"name": "a", "prediction": "a_pred.flo", "uncertainty": "a_scale.flo",
//!  "ground_truth": "a_gt.flo", "mask": "all", "members": ["a_m0.flo", "a_m1.flo"]}
//! ```
//!
//! `mask` is `"all"`, `"ground_truth"` (valid bits of a KITTI ground truth
//! PNG) or `{"file": "mask.png"}` (non-zero pixels are valid). Ground
//! truth ending in `.png` is read as KITTI. An optional first line
//! `{"options": {"steps": 100, "dataset_wise": true, "ranking": "entropy"}}`
//! sets defaults that flags override.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::ensembles::{merge_empirical, merge_predictive, MergedPrediction};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    evaluate, laplace_entropy, log_scale_ranking, member_variance, oracle_epe, variance_ranking, ImageEval,
    DEFAULT_STEPS,
};
use crate::fields::{endpoint_error, FlowField, Hypothesis, HypothesisSet, UncertaintyField, ValidMask};
use crate::io::{
    encode_png, read_bytes, read_flo_file, read_kitti_png, read_uncertainty_file, render_flow, render_heatmap,
    render_heatmap_auto, sidecar_path, write_bytes, write_curve_csv, write_flo_file, write_json, write_scale_file,
};
use crate::toytrain::{run_experiment_matrix, write_experiment, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const THREADS_ENV: &str = "FLOWUQ_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "flowuq",
    about = "Optical flow uncertainty evaluation, merging and rendering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Merge aligned member predictions into one flow and scale field.
    Merge(MergeArgs),
    /// Render a flow or scale file as PNG.
    Viz(VizArgs),
    /// Run the toy experiment matrix from a JSON config.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// `ln b_u + ln b_v`, the order of the Laplace entropy.
    Entropy,
    /// `2 b_u^2 + 2 b_v^2`.
    Variance,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Sparsification steps (fractions 0, 1/steps, ...).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Pool all pixels of all images into one curve.
    #[arg(long)]
    pub dataset_wise: bool,
    #[arg(long, value_enum)]
    pub ranking: Option<Ranking>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeMode {
    Empirical,
    Predictive,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// One manifest per member; records are matched by line.
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: MergeMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VizKind {
    /// Flow files as flow, scale files (with sidecar) as entropy.
    Auto,
    Flow,
    Entropy,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// `.flo` flow, KITTI `.png` flow, or a scale `.flo`.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub kind: VizKind,
    /// Flow magnitude mapped to full saturation (default: the image maximum).
    #[arg(long)]
    pub max_flow: Option<f64>,
    /// Entropy range mapped onto the color scale (default: the image range).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub range: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    #[default]
    All,
    GroundTruth,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    #[serde(default)]
    pub name: Option<String>,
    pub prediction: PathBuf,
    #[serde(default)]
    pub uncertainty: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub mask: MaskSource,
    #[serde(default)]
    pub members: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestOptions {
    pub steps: Option<usize>,
    pub dataset_wise: Option<bool>,
    pub ranking: Option<Ranking>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionsLine {
    options: ManifestOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub options: ManifestOptions,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn parse(text: &str, dir: &Path) -> Result<Self> {
        let mut options = ManifestOptions::default();
        let mut records = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |e: String| Error::format("manifest", format!("line {}: {e}", k + 1));
            if records.is_empty() && line.contains("\"options\"") {
                if let Ok(o) = serde_json::from_str::<OptionsLine>(line) {
                    options = o.options;
                    continue;
                }
            }
            let de = &mut serde_json::Deserializer::from_str(line);
            let rec: Record =
                serde_path_to_error::deserialize(de).map_err(|e| bad(format!("key `{}`: {}", e.path(), e.inner())))?;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::format("manifest", "no records"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            options,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_bytes(path)?).map_err(|_| Error::format("manifest", "not UTF-8"))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn name(&self, k: usize) -> String {
        self.records[k].name.clone().unwrap_or_else(|| format!("record_{k:04}"))
    }
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a `.flo` or a KITTI `.png` flow.
fn read_flow(path: &Path) -> Result<(FlowField, Option<ValidMask>)> {
    if is_png(path) {
        let (f, m) = read_kitti_png(&read_bytes(path)?)?;
        Ok((f, Some(m)))
    } else {
        Ok((read_flo_file(path)?, None))
    }
}

fn read_mask_png(path: &Path) -> Result<ValidMask> {
    let img = image::load_from_memory(&read_bytes(path)?)?.to_luma8();
    let (w, h) = img.dimensions();
    ValidMask::new(w as usize, h as usize, img.pixels().map(|p| p.0[0] > 0).collect())
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } => e,
        other => Error::format("input", format!("{}: {other}", path.display())),
    }
}

fn eval_record(m: &Manifest, k: usize, ranking: Ranking) -> Result<ImageEval> {
    let rec = &m.records[k];
    let name = m.name(k);
    let pred_path = m.resolve(&rec.prediction);
    let (pred, _) = read_flow(&pred_path).map_err(|e| with_path(&pred_path, e))?;
    let gt_path = m.resolve(
        rec.ground_truth
            .as_ref()
            .ok_or_else(|| Error::format("manifest", format!("record {name} has no ground_truth")))?,
    );
    let (gt, gt_mask) = read_flow(&gt_path).map_err(|e| with_path(&gt_path, e))?;
    let mask = match &rec.mask {
        MaskSource::All => ValidMask::all(gt.width(), gt.height())?,
        MaskSource::GroundTruth => gt_mask.ok_or_else(|| {
            Error::format(
                "manifest",
                format!("record {name}: mask from ground truth needs a KITTI png"),
            )
        })?,
        MaskSource::File(p) => {
            let p = m.resolve(p);
            read_mask_png(&p).map_err(|e| with_path(&p, e))?
        }
    };
    let errors = endpoint_error(&pred, &gt, &mask).map_err(|e| with_path(&pred_path, e))?;
    let ranking = match &rec.uncertainty {
        Some(p) => {
            let p = m.resolve(p);
            let unc = read_uncertainty_file(&p).map_err(|e| with_path(&p, e))?;
            if unc.dims() != pred.dims() {
                return Err(with_path(
                    &p,
                    Error::DimensionMismatch {
                        expected: pred.dims(),
                        actual: unc.dims(),
                    },
                ));
            }
            Some(match ranking {
                Ranking::Entropy => log_scale_ranking(&unc),
                Ranking::Variance => variance_ranking(&unc),
            })
        }
        None => None,
    };
    let (oracle, var) = if rec.members.is_empty() {
        (None, None)
    } else {
        let flows = rec
            .members
            .iter()
            .map(|p| {
                let p = m.resolve(p);
                read_flow(&p).map(|f| f.0).map_err(|e| with_path(&p, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let hyps = HypothesisSet::from_flows(flows)?;
        let var = if hyps.len() >= 2 {
            Some(member_variance(&hyps, &mask)?)
        } else {
            None
        };
        (Some(oracle_epe(&hyps, &gt, &mask)?), var)
    };
    Ok(ImageEval {
        name,
        errors,
        mask,
        ranking,
        oracle_epe: oracle,
        member_variance: var,
    })
}

/// Writes `report.json` and, when every record has an uncertainty,
/// `curve.csv` into `--out`.
pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let m = Manifest::load(&args.manifest)?;
    let steps = args.steps.or(m.options.steps).unwrap_or(DEFAULT_STEPS);
    if steps < 2 {
        return Err(Error::InvalidArgument("--steps must be >= 2".into()));
    }
    let dataset_wise = args.dataset_wise || m.options.dataset_wise.unwrap_or(false);
    let ranking = args.ranking.or(m.options.ranking).unwrap_or(Ranking::Entropy);
    let images = (0..m.records.len())
        .into_par_iter()
        .map(|k| eval_record(&m, k, ranking))
        .collect::<Result<Vec<_>>>()?;
    let ev = evaluate(&images, steps, dataset_wise)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_json(&ev.report, &args.out.join("report.json"))?;
    if let Some(c) = &ev.curve {
        write_curve_csv(c, &args.out.join("curve.csv"))?;
    }
    Ok(())
}

fn merge_record(manifests: &[Manifest], k: usize, mode: MergeMode) -> Result<(String, MergedPrediction)> {
    let name = manifests[0].name(k);
    let members = manifests
        .iter()
        .map(|m| {
            if m.name(k) != name {
                return Err(Error::format(
                    "manifest",
                    format!("record {k}: member names differ ({name} vs {})", m.name(k)),
                ));
            }
            let rec = &m.records[k];
            let p = m.resolve(&rec.prediction);
            let (flow, _) = read_flow(&p).map_err(|e| with_path(&p, e))?;
            let uncertainty = match (mode, &rec.uncertainty) {
                (MergeMode::Predictive, Some(u)) => {
                    let u = m.resolve(u);
                    Some(read_uncertainty_file(&u).map_err(|e| with_path(&u, e))?)
                }
                (MergeMode::Predictive, None) => {
                    return Err(Error::format(
                        "manifest",
                        format!("record {name}: predictive merge needs an uncertainty for every member"),
                    ))
                }
                (MergeMode::Empirical, _) => None,
            };
            Ok(Hypothesis { flow, uncertainty })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = HypothesisSet::new(members)?;
    let merged = match mode {
        MergeMode::Empirical => merge_empirical(&set)?,
        MergeMode::Predictive => merge_predictive(&set)?,
    };
    Ok((name, merged))
}

/// Raw scales `b = sqrt(var / 2)`; zero variance stays zero.
pub fn merged_scales(merged: &MergedPrediction) -> (Vec<f64>, Vec<f64>) {
    let b = |v: &[f64]| v.iter().map(|x| (x / 2.0).sqrt()).collect();
    (b(&merged.var_u), b(&merged.var_v))
}

/// Writes `<name>.flo` (the mean) and `<name>_scale.flo` plus its sidecar
/// for every record.
pub fn cmd_merge(args: &MergeArgs) -> Result<()> {
    let manifests = args
        .manifests
        .iter()
        .map(|p| Manifest::load(p))
        .collect::<Result<Vec<_>>>()?;
    let n = manifests[0].records.len();
    if let Some(m) = manifests.iter().find(|m| m.records.len() != n) {
        return Err(Error::format(
            "manifest",
            format!("member manifests have {} and {} records", n, m.records.len()),
        ));
    }
    let merged = (0..n)
        .into_par_iter()
        .map(|k| merge_record(&manifests, k, args.mode))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (name, m) in &merged {
        write_flo_file(&args.out.join(format!("{name}.flo")), &m.mean)?;
        let (b_u, b_v) = merged_scales(m);
        let (w, h) = m.mean.dims();
        write_scale_file(&args.out.join(format!("{name}_scale.flo")), w, h, &b_u, &b_v)?;
    }
    Ok(())
}

/// Writes `<input stem>.png` into `--out`.
pub fn cmd_viz(args: &VizArgs) -> Result<()> {
    let kind = match args.kind {
        VizKind::Auto if sidecar_path(&args.input).exists() => VizKind::Entropy,
        VizKind::Auto => VizKind::Flow,
        k => k,
    };
    let img = match kind {
        VizKind::Entropy => {
            let unc: UncertaintyField = read_uncertainty_file(&args.input).map_err(|e| with_path(&args.input, e))?;
            let map = laplace_entropy(&unc);
            match &args.range {
                Some(r) => render_heatmap(&map, r[0], r[1])?,
                None => render_heatmap_auto(&map),
            }
        }
        _ => {
            if matches!(args.max_flow, Some(m) if !(m > 0.0 && m.is_finite())) {
                return Err(Error::InvalidArgument("--max-flow must be > 0".into()));
            }
            let (flow, _) = read_flow(&args.input).map_err(|e| with_path(&args.input, e))?;
            render_flow(&flow, args.max_flow)
        }
    };
    let stem = args
        .input
        .file_stem()
        .ok_or_else(|| Error::InvalidArgument("input has no file name".into()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut name = stem.to_owned();
    name.push(".png");
    write_bytes(&args.out.join(name), &encode_png(&img)?)
}

pub fn cmd_toy(args: &ToyArgs) -> Result<()> {
    let text = String::from_utf8(read_bytes(&args.config)?).map_err(|_| Error::format("config", "not UTF-8"))?;
    let config = ExperimentConfig::from_json(&text)?;
    let report = run_experiment_matrix(&config)?;
    write_experiment(&report, &args.out)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn version() -> String {
    format!(
        "{} ({}-{}, {} build)",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    )
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Viz(a) => cmd_viz(a),
        Command::Toy(a) => cmd_toy(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Messages go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let version: &'static str = Box::leak(version().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("flowuq: {e}");
            exit_code(&e)
        }
    }
}
