use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vamoforge::background::SeparationMethod;
use vamoforge::graph::{build_graph, estimate_radii, prune_spurs, skeletonize, DEFAULT_PRUNE_FACTOR};
use vamoforge::pipeline::batch::{load_sources, run_batch, PatchFiles};
use vamoforge::pipeline::phantom::{make_phantom, PhantomKind, YParams};
use vamoforge::pipeline::render::{render_slices, Axis};
use vamoforge::pipeline::{generate_patch, GenConfig, Source};
use vamoforge::spline::{fit_branch_spline, BranchSpline};
use vamoforge::texture::{texture_report, TextureReport, DEFAULT_DISTANCE, DEFAULT_LEVELS};
use vamoforge::vvol::{read_vvol, write_vvol};
use vamoforge::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_GENERATION: u8 = 3;
const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "vamoforge", version, about = "Synthetic cerebrovascular MRA-TOF patch generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one B-spline per branch of a segmented mask.
    Fit {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the centerline graph of a segmented mask.
    Graph {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PRUNE_FACTOR)]
        prune_factor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an analytic test phantom (TOF, mask and description).
    Phantom {
        #[arg(long, value_enum)]
        kind: PhantomArg,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 50.0)]
        length: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one synthetic patch from a segmented crop.
    Generate {
        #[arg(long)]
        tof: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Bifurcation node id (defaults to the degree-3 node nearest the center).
        #[arg(long)]
        node: Option<usize>,
        #[arg(long, default_value = "unlabeled")]
        label: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        noise_method: Option<MethodArg>,
        #[arg(long)]
        no_aneurysm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate every patch of a configured batch.
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum)]
        noise_method: Option<MethodArg>,
    },
    /// Texture and sharpness metrics for one or more volumes.
    Metrics {
        inputs: Vec<PathBuf>,
        /// Ground-truth volume; adds a side-by-side comparison per input.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: usize,
        #[arg(long, default_value_t = DEFAULT_DISTANCE)]
        distance: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export PNG slices of a volume, with mask overlays when given.
    Render {
        #[arg(long)]
        intensity: PathBuf,
        #[arg(long)]
        vessel: Option<PathBuf>,
        #[arg(long)]
        ica: Option<PathBuf>,
        #[arg(long, default_value = "z")]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "slice")]
        prefix: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomArg {
    Cylinder,
    Y,
    CowLite,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gmm,
    Multithreshold,
}

impl From<MethodArg> for SeparationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gmm => SeparationMethod::Gmm,
            MethodArg::Multithreshold => SeparationMethod::Multithreshold,
        }
    }
}

/// A failure together with its exit status.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Configuration(_) | Error::Planning(_) => EXIT_CONFIG,
            Error::Stage { .. } => EXIT_GENERATION,
            _ => EXIT_FAILURE,
        };
        Failure { code, error }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> vamoforge::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<GenConfig, Failure> {
    match path {
        None => Ok(GenConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure { code: EXIT_CONFIG, error: Error::io(p, e) })?;
            GenConfig::from_json(&text).map_err(|error| Failure { code: EXIT_CONFIG, error })
        }
    }
}

fn apply_overrides(cfg: &mut GenConfig, seed: Option<u64>, method: Option<MethodArg>) -> CliResult {
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(m) = method {
        cfg.noise_method = m.into();
    }
    cfg.validate().map_err(|error| Failure { code: EXIT_CONFIG, error })
}

fn create_dir(dir: &Path) -> vamoforge::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct FittedBranch {
    branch_id: usize,
    rms_residual: f64,
    spline: BranchSpline,
}

#[derive(Serialize)]
struct SkippedBranch {
    branch_id: usize,
    reason: String,
}

#[derive(Serialize)]
struct SplineSet {
    schema_version: u32,
    splines: Vec<FittedBranch>,
    skipped: Vec<SkippedBranch>,
}

fn cmd_fit(mask: &Path, out: Option<&Path>) -> CliResult {
    let mask = read_vvol(mask)?;
    let graph = vamoforge::graph::extract_graph(&mask)?;
    let mut set = SplineSet { schema_version: OUTPUT_SCHEMA_VERSION, splines: Vec::new(), skipped: Vec::new() };
    for b in &graph.branches {
        let path: Vec<[f64; 3]> = graph.polyline(b).iter().map(|p| p.map(|c| c as f64)).collect();
        match fit_branch_spline(&path, &graph.polyline_radii(b)) {
            Ok(fit) => set.splines.push(FittedBranch {
                branch_id: b.id,
                rms_residual: fit.rms_residual,
                spline: fit.spline,
            }),
            Err(e) => set.skipped.push(SkippedBranch { branch_id: b.id, reason: e.to_string() }),
        }
    }
    Ok(emit_json(&set, out)?)
}

fn cmd_graph(mask: &Path, prune_factor: f64, out: Option<&Path>) -> CliResult {
    let mask = read_vvol(mask)?;
    let skeleton = skeletonize(&mask)?;
    let graph = estimate_radii(&mask, &build_graph(&skeleton)?)?;
    let graph = prune_spurs(&graph, prune_factor)?;
    Ok(emit_json(&graph, out)?)
}

fn cmd_phantom(kind: PhantomArg, radius: f64, length: f64, seed: u64, out: &Path) -> CliResult {
    let kind = match kind {
        PhantomArg::Cylinder => PhantomKind::Cylinder { radius, length },
        PhantomArg::Y => PhantomKind::Y(YParams::default()),
        PhantomArg::CowLite => PhantomKind::CowLite,
    };
    let phantom = make_phantom(&kind, seed)?;
    create_dir(out)?;
    write_vvol(&phantom.tof, out.join("tof.vvol"))?;
    write_vvol(&phantom.mask, out.join("mask.vvol"))?;
    let description = serde_json::json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "kind": kind,
        "seed": seed,
        "dims": phantom.mask.dims(),
        "bifurcations": phantom.bifurcations,
    });
    Ok(emit_json(&description, Some(&out.join("phantom.json")))?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    tof: &Path,
    mask: &Path,
    node: Option<usize>,
    label: &str,
    mut cfg: GenConfig,
    seed: Option<u64>,
    method: Option<MethodArg>,
    no_aneurysm: bool,
    out: &Path,
) -> CliResult {
    if no_aneurysm {
        cfg.aneurysm.enabled = false;
    }
    apply_overrides(&mut cfg, seed, method)?;
    let id = tof.display().to_string();
    let source = Source::new(&id, label, read_vvol(tof)?, read_vvol(mask)?, node)?;
    let patch = generate_patch(&source, &cfg, cfg.master_seed)?;
    create_dir(out)?;
    let files = PatchFiles::for_index(0);
    write_vvol(&patch.intensity, out.join(&files.intensity))?;
    write_vvol(&patch.vessel_mask, out.join(&files.vessel))?;
    write_vvol(&patch.ica_mask, out.join(&files.ica))?;
    Ok(emit_json(&patch.meta, Some(&out.join(&files.meta)))?)
}

fn cmd_batch(mut cfg: GenConfig, seed: Option<u64>, method: Option<MethodArg>, workers: usize, out: &Path) -> CliResult {
    apply_overrides(&mut cfg, seed, method)?;
    let sources = load_sources(&cfg.sources).map_err(|error| Failure { code: EXIT_CONFIG, error })?;
    let outcome = run_batch(&sources, &cfg, workers, Some(out))?;
    log::info!("wrote {} patches to {}", outcome.manifest.total, out.display());
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GENERATION,
            error: Error::Consistency(format!(
                "{} patch(es) failed; see {}",
                outcome.failures.len(),
                out.join("errors.json").display()
            )),
        })
    }
}

#[derive(Serialize)]
struct InputReport {
    path: String,
    report: TextureReport,
}

#[derive(Serialize)]
struct Comparison {
    path: String,
    model: TextureReport,
    reference: TextureReport,
    /// Per-metric model minus reference.
    difference: BTreeMap<&'static str, f64>,
}

fn difference(a: &TextureReport, b: &TextureReport) -> BTreeMap<&'static str, f64> {
    let (h, g) = (&a.haralick, &b.haralick);
    BTreeMap::from([
        ("contrast", h.contrast - g.contrast),
        ("correlation", h.correlation - g.correlation),
        ("energy", h.energy - g.energy),
        ("homogeneity", h.homogeneity - g.homogeneity),
        ("entropy", h.entropy - g.entropy),
        ("vol", a.vol - b.vol),
        ("tenengrad", a.tenengrad - b.tenengrad),
    ])
}

fn cmd_metrics(inputs: &[PathBuf], reference: Option<&Path>, levels: usize, distance: usize, out: Option<&Path>) -> CliResult {
    if inputs.is_empty() {
        return Err(Error::Parameter("metrics needs at least one input volume".into()).into());
    }
    let reference = match reference {
        Some(p) => Some((p, texture_report(&read_vvol(p)?, levels, distance)?)),
        None => None,
    };
    let mut reports = Vec::new();
    let mut comparisons = Vec::new();
    for p in inputs {
        let report = texture_report(&read_vvol(p)?, levels, distance)?;
        if let Some((_, r)) = &reference {
            comparisons.push(Comparison {
                path: p.display().to_string(),
                difference: difference(&report, r),
                model: report.clone(),
                reference: r.clone(),
            });
        }
        reports.push(InputReport { path: p.display().to_string(), report });
    }
    let mut doc = serde_json::json!({ "schema_version": OUTPUT_SCHEMA_VERSION, "reports": reports });
    if let Some((p, _)) = reference {
        doc["reference"] = p.display().to_string().into();
        doc["comparisons"] = serde_json::to_value(&comparisons).map_err(Error::from)?;
    }
    Ok(emit_json(&doc, out)?)
}

fn cmd_render(
    intensity: &Path,
    vessel: Option<&Path>,
    ica: Option<&Path>,
    axis: &str,
    out: &Path,
    prefix: &str,
) -> CliResult {
    let axis = Axis::parse(axis)?;
    let intensity = read_vvol(intensity)?;
    let vessel = vessel.map(read_vvol).transpose()?;
    let ica = ica.map(read_vvol).transpose()?;
    let written = render_slices(&intensity, vessel.as_ref(), ica.as_ref(), axis, out, prefix)?;
    log::info!("wrote {} images to {}", written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Fit { mask, out } => cmd_fit(&mask, out.as_deref()),
        Command::Graph { mask, prune_factor, out } => cmd_graph(&mask, prune_factor, out.as_deref()),
        Command::Phantom { kind, radius, length, seed, out } => cmd_phantom(kind, radius, length, seed, &out),
        Command::Generate { tof, mask, node, label, config, seed, noise_method, no_aneurysm, out } => {
            let cfg = load_config(config.as_deref())?;
            cmd_generate(&tof, &mask, node, &label, cfg, seed, noise_method, no_aneurysm, &out)
        }
        Command::Batch { config, out, seed, workers, noise_method } => {
            let cfg = load_config(config.as_deref())?;
            cmd_batch(cfg, seed, noise_method, workers, &out)
        }
        Command::Metrics { inputs, reference, levels, distance, out } => {
            cmd_metrics(&inputs, reference.as_deref(), levels, distance, out.as_deref())
        }
        Command::Render { intensity, vessel, ica, axis, out, prefix } => {
            cmd_render(&intensity, vessel.as_deref(), ica.as_deref(), &axis, &out, &prefix)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
