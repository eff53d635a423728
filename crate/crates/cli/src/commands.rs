//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynaguide_core::container::{dataset_from_container, dataset_to_container, format_list, parse_list, Container, Metadata};
use dynaguide_core::diffusion::{self, ScoreMode};
use dynaguide_core::discriminator;
use dynaguide_core::field::{destandardize, AreaWeights, Field, FrameShape, TrajectoryDataset};
use dynaguide_core::metrics::{crps, hovmoeller, bias_map, spread_skill_ratio, Band, EnsembleForecast, MetricReport, ReportValue};
use dynaguide_core::sampler::{ensemble_forecast, rollout, DiscModel, Guide, RolloutState, ScoreModel};
use dynaguide_core::training::ModelCheckpoint;

use crate::config::{Config, Experiment};
use crate::error::CliError;
use crate::pipeline::{content_hash, trajectory_report, Datasets, Pipeline};
use crate::preset;

type Result<T> = std::result::Result<T, CliError>;

/// Environment variable naming the dataset and checkpoint cache directory.
pub const CACHE_ENV: &str = "DYNAGUIDE_CACHE";

/// Discriminator-guided diffusion emulation of forced 2-D turbulence.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing input
/// file, 4 invalid configuration or input (including grid-shape mismatch).
/// Set DYNAGUIDE_CACHE to a directory to reuse datasets, checkpoints and
/// samples across runs.
#[derive(Debug, Parser)]
#[command(name = "dynaguide", version)]
pub struct Cli {
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Preset supplying every key not set otherwise.
    #[arg(long, default_value = "vorticity-desk")]
    pub preset: String,

    /// key=value file applied on top of the preset.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Single key override, repeatable (e.g. --set sampler.steps=30).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Uncond,
    Cond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Data,
    Train,
    Sample,
    Forecast,
    Evaluate,
    All,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Score network checkpoint.
    #[arg(long, value_name = "FILE")]
    pub score: PathBuf,

    /// Discriminator checkpoint (required with --guided on).
    #[arg(long, value_name = "FILE")]
    pub disc: Option<PathBuf>,

    /// Raw trajectory from `simulate`; initial states come from its test split.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,

    /// Discriminator guidance.
    #[arg(long, value_enum, default_value = "on")]
    pub guided: Switch,

    /// Guidance weight.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the vorticity solver and write the (coarsened) trajectory.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output container.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train a score network on the train split of a trajectory.
    TrainScore {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Unconditional (image) or history-conditioned (video) model.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Raw trajectory from `simulate`.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output checkpoint.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the temporal-consistency discriminator.
    TrainDisc {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// History frames seen by the discriminator.
        #[arg(long)]
        m: Option<usize>,
        /// Raw trajectory from `simulate`.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output checkpoint.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Autoregressive rollout from the start of the test split.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Frames to generate.
        #[arg(long)]
        steps: Option<usize>,
        /// Output trajectory container.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Ensemble forecasts from evenly spaced test-split states.
    Forecast {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Number of initial states.
        #[arg(long)]
        forecasts: Option<usize>,
        /// Ensemble members per initial state.
        #[arg(long)]
        members: Option<usize>,
        /// Forecast length in frames.
        #[arg(long)]
        lead: Option<usize>,
        /// Output ensemble container.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Compare a generated trajectory or ensemble against the truth.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Raw trajectory from `simulate`.
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        /// Output of `sample` or `forecast`.
        #[arg(long, value_name = "FILE")]
        gen: PathBuf,
        /// Trajectory defining extreme-event thresholds (default: truth).
        #[arg(long, value_name = "FILE")]
        reference: Option<PathBuf>,
        /// Report path; `.json` selects JSON, anything else key=value text.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Run a named experiment preset end to end into one directory.
    Preset {
        /// One of vorticity-desk, vorticity-paper, vorticity-ci, smoke.
        name: String,
        /// Last stage to run; `evaluate` and `all` write report.json.
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        /// Root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// key=value file applied on top of the preset.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Single key override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

fn read_container(path: &Path) -> Result<Container> {
    require(path)?;
    Ok(Container::read(path)?)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path).map_err(|e| CliError::from_io(path, e))?))
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    Ok(ModelCheckpoint::from_container(&read_container(path)?)?)
}

/// Preset, optional file and overrides merged into a validated experiment.
pub fn experiment(preset_name: &str, file: Option<&Path>, seed: Option<u64>, overrides: &[String], extra: &[(&str, String)]) -> Result<Experiment> {
    let mut cfg = preset::config(preset_name)?;
    if let Some(f) = file {
        cfg = cfg.overlay(&Config::read(f)?);
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim());
    }
    for (k, v) in extra {
        cfg.set(k, v.clone());
    }
    if let Some(s) = seed {
        cfg.set("seed", s.to_string());
    }
    Experiment::from_config(&cfg)
}

impl ConfigArgs {
    fn experiment(&self, extra: &[(&str, String)]) -> Result<Experiment> {
        experiment(&self.preset, self.config.as_deref(), self.seed, &self.overrides, extra)
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_output(path: &Path, c: &Container) -> Result<()> {
    ensure_parent(path)?;
    Ok(c.write(path)?)
}

/// Flat JSON object: provenance under `provenance.*`, metrics by name, and
/// the report hash.
pub fn report_json(report: &MetricReport) -> String {
    let mut obj = serde_json::Map::new();
    for (k, v) in &report.provenance {
        obj.insert(format!("provenance.{k}"), serde_json::Value::String(v.clone()));
    }
    for (k, v) in &report.entries {
        let value = match v {
            ReportValue::Scalar(x) => serde_json::json!(x),
            ReportValue::Array(xs) => serde_json::json!(xs),
            ReportValue::Text(t) => serde_json::json!(t),
        };
        obj.insert(k.clone(), value);
    }
    obj.insert("report_hash".into(), serde_json::Value::String(report.hash()));
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("report serializes");
    text.push('\n');
    text
}

fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        std::fs::write(path, report_json(report))?;
    } else {
        report.write(path)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let verbose = !cli.quiet;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A second call (tests running several commands in-process) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { cfg, out } => {
            let p = Pipeline::new(cfg.experiment(&[])?, None, cache_dir(), verbose)?;
            let ds = p.raw_dataset()?;
            write_output(&out, &p.stamp(dataset_to_container(&ds), &[]))?;
            println!("wrote {} ({} frames, {})", out.display(), ds.len(), ds.frame_shape());
        }
        Command::TrainScore { cfg, mode, data, out } => {
            let exp = cfg.experiment(&[])?;
            let input = file_hash_checked(&data)?;
            let raw = dataset_from_container(&read_container(&data)?)?;
            let p = Pipeline::new(exp, None, cache_dir(), verbose)?;
            let d = p.prepare(&raw)?;
            let mode = match mode {
                ModeArg::Uncond => ScoreMode::Unconditional,
                ModeArg::Cond => ScoreMode::Conditional,
            };
            let (_, ck) = p.score_model(&d, mode)?;
            write_output(&out, &p.stamp(ck.to_container()?, &[("input.data", &input)]))?;
            println!("wrote {} ({} parameters)", out.display(), ck.params.len());
        }
        Command::TrainDisc { cfg, m, data, out } => {
            let extra: Vec<(&str, String)> = m.map(|m| ("disc.m", m.to_string())).into_iter().collect();
            let exp = cfg.experiment(&extra)?;
            let input = file_hash_checked(&data)?;
            let raw = dataset_from_container(&read_container(&data)?)?;
            let p = Pipeline::new(exp, None, cache_dir(), verbose)?;
            let d = p.prepare(&raw)?;
            let (_, ck) = p.discriminator(&d, false)?;
            write_output(&out, &p.stamp(ck.to_container()?, &[("input.data", &input)]))?;
            println!("wrote {} ({} parameters)", out.display(), ck.params.len());
        }
        Command::Sample { cfg, sampler, steps, out } => {
            let extra = sampler_overrides(&sampler);
            let exp = cfg.experiment(&extra)?;
            let frames = steps.unwrap_or(exp.eval.rollout_frames);
            let ctx = SamplerContext::open(exp, &sampler, verbose)?;
            let cfg = ctx.pipeline.exp.sampler_config(ctx.guided, &[0x5a])?;
            let init = RolloutState::from_dataset(&ctx.data.test, 1)?;
            let guide = ctx.guide();
            let guide_ref = guide.as_ref().map(|g| g as &dyn Guide);
            let ds = rollout(&ctx.score_model(), guide_ref, &init, frames, &cfg, ctx.data.test.dt_physical())?;
            let mut physical = to_physical(&ds, &ctx.data)?;
            let start = ctx.test_offset() + 2;
            physical.attributes.insert("truth_start".into(), start.to_string());
            physical.attributes.insert("guided".into(), ctx.guided.to_string());
            let c = ctx.pipeline.stamp(dataset_to_container(&physical), &ctx.inputs());
            write_output(&out, &c)?;
            println!("wrote {} ({} frames)", out.display(), physical.len());
        }
        Command::Forecast { cfg, sampler, forecasts, members, lead, out } => {
            let mut extra = sampler_overrides(&sampler);
            for (k, v) in [("eval.forecasts", forecasts), ("eval.members", members), ("eval.leads", lead)] {
                if let Some(v) = v {
                    extra.push((k, v.to_string()));
                }
            }
            let exp = cfg.experiment(&extra)?;
            let ctx = SamplerContext::open(exp, &sampler, verbose)?;
            let e = ctx.pipeline.exp.eval.clone();
            let inits = ctx.pipeline.forecast_inits(&ctx.data);
            let states = inits.iter().map(|&n| RolloutState::from_dataset(&ctx.data.test, n)).collect::<dynaguide_core::Result<Vec<_>>>()?;
            let cfg = ctx.pipeline.exp.sampler_config(ctx.guided, &[0xf0])?;
            let guide = ctx.guide();
            let guide_ref = guide.as_ref().map(|g| g as &dyn Guide);
            let runs = ensemble_forecast(&ctx.score_model(), guide_ref, &states, e.members, e.leads, &cfg)?;
            let shape = ctx.data.test.frame_shape();
            let mut payload = Vec::with_capacity(inits.len() * e.members * e.leads * shape.len());
            for f in runs.iter().flatten().flatten() {
                payload.extend(destandardize(f, &ctx.data.stats)?.into_values());
            }
            let mut meta = Metadata::new();
            meta.insert("kind".into(), "ensemble".into());
            meta.insert("geometry".into(), ctx.data.test.geometry().as_str().into());
            let starts: Vec<f64> = inits.iter().map(|&n| (ctx.test_offset() + n + 1) as f64).collect();
            meta.insert("truth_start".into(), format_list(&starts));
            meta.insert("guided".into(), ctx.guided.to_string());
            let dims = [inits.len(), e.members, e.leads, shape.channels, shape.height, shape.width];
            let c = Container::new(dims.iter().map(|&d| d as u64).collect(), meta, payload)?;
            write_output(&out, &ctx.pipeline.stamp(c, &ctx.inputs()))?;
            println!("wrote {} ({} forecasts x {} members x {} leads)", out.display(), inits.len(), e.members, e.leads);
        }
        Command::Evaluate { cfg, truth, gen, reference, report } => {
            let exp = cfg.experiment(&[])?;
            let r = evaluate(&exp, &truth, &gen, reference.as_deref(), &report)?;
            write_report(&r, &report)?;
            println!("wrote {} (report_hash {})", report.display(), r.hash());
        }
        Command::Preset { name, stage, seed, config, overrides, out } => {
            let exp = experiment(&name, config.as_deref(), seed, &overrides, &[])?;
            let p = Pipeline::new(exp, Some(&out), cache_dir(), verbose)?;
            std::fs::write(out.join("config.txt"), p.exp.raw.to_text())?;
            if matches!(stage, Stage::Evaluate | Stage::All) {
                let r = p.run_all()?;
                write_report(&r, &out.join("report.json"))?;
                write_report(&r, &out.join("report.txt"))?;
                println!("report_hash {}", r.hash());
                return Ok(());
            }
            let data = p.datasets()?;
            if stage == Stage::Data {
                println!("wrote datasets to {}", out.display());
                return Ok(());
            }
            let models = p.models(&data)?;
            p.discriminator(&data, true)?;
            if stage == Stage::Train {
                println!("wrote checkpoints to {}", out.display());
                return Ok(());
            }
            if matches!(stage, Stage::Sample) {
                for m in crate::pipeline::Model::ALL {
                    p.rollout(&data, &models, m)?;
                }
                p.consistency_trace(&data, &models)?;
                println!("wrote rollouts to {}", out.display());
                return Ok(());
            }
            for m in [crate::pipeline::Model::Guided, crate::pipeline::Model::Conditional] {
                p.forecast(&data, &models, m)?;
            }
            println!("wrote forecasts to {}", out.display());
        }
    }
    Ok(())
}

fn file_hash_checked(path: &Path) -> Result<String> {
    require(path)?;
    file_hash(path)
}

fn sampler_overrides(s: &SamplerArgs) -> Vec<(&'static str, String)> {
    s.lambda.map(|l| ("sampler.lambda", l.to_string())).into_iter().collect()
}

fn to_physical(ds: &TrajectoryDataset, data: &Datasets) -> Result<TrajectoryDataset> {
    let frames = ds.frames().iter().map(|f| destandardize(f, &data.stats)).collect::<dynaguide_core::Result<Vec<_>>>()?;
    let mut out = TrajectoryDataset::new(ds.frame_shape(), ds.geometry(), frames, ds.dt_physical(), ds.split())?;
    out.attributes = ds.attributes.clone();
    Ok(out)
}

struct SamplerContext {
    pipeline: Pipeline,
    data: Datasets,
    score: (diffusion::ScoreNetwork, ModelCheckpoint),
    disc: Option<(discriminator::Discriminator, ModelCheckpoint)>,
    guided: bool,
    hashes: Vec<(&'static str, String)>,
}

impl SamplerContext {
    fn open(exp: Experiment, s: &SamplerArgs, verbose: bool) -> Result<Self> {
        let guided = s.guided == Switch::On;
        if guided && s.disc.is_none() {
            return Err(CliError::Usage("--guided on requires --disc".into()));
        }
        let mut hashes = vec![("input.data", file_hash_checked(&s.data)?), ("input.score", file_hash_checked(&s.score)?)];
        let score_ck = load_checkpoint(&s.score)?;
        let score = (diffusion::network_from_checkpoint(&score_ck)?, score_ck);
        let disc = match &s.disc {
            Some(p) => {
                hashes.push(("input.disc", file_hash_checked(p)?));
                let ck = load_checkpoint(p)?;
                Some((discriminator::network_from_checkpoint(&ck)?, ck))
            }
            None => None,
        };
        let raw = dataset_from_container(&read_container(&s.data)?)?;
        let pipeline = Pipeline::new(exp, None, None, verbose)?;
        let data = pipeline.prepare(&raw)?;
        let shape = data.test.frame_shape();
        let expected = score.0.unet().config().in_channels;
        if shape.channels != 1 || expected != score.0.mode().input_channels() {
            return Err(CliError::Invalid(format!("score checkpoint does not fit data of shape {shape}")));
        }
        Ok(Self { pipeline, data, score, disc, guided, hashes })
    }

    fn score_model(&self) -> ScoreModel<'_> {
        ScoreModel { net: &self.score.0, params: self.score.1.inference_params() }
    }

    fn guide(&self) -> Option<DiscModel<'_>> {
        self.disc.as_ref().map(|(net, ck)| DiscModel { net, params: ck.inference_params() })
    }

    fn test_offset(&self) -> usize {
        self.pipeline.exp.data.train_frames + self.pipeline.exp.data.val_frames
    }

    fn inputs(&self) -> Vec<(&str, &str)> {
        self.hashes.iter().map(|(k, v)| (*k, v.as_str())).collect()
    }
}

fn shape_error(truth: FrameShape, gen: FrameShape) -> CliError {
    CliError::Invalid(format!("grid shape mismatch: truth is {truth}, generated is {gen}"))
}

fn evaluate(exp: &Experiment, truth_path: &Path, gen_path: &Path, reference: Option<&Path>, report_path: &Path) -> Result<MetricReport> {
    let truth = dataset_from_container(&read_container(truth_path)?)?;
    let gen = read_container(gen_path)?;
    let reference = match reference {
        Some(p) => dataset_from_container(&read_container(p)?)?,
        None => truth.clone(),
    };
    let mut report = MetricReport::new();
    report.provenance.insert("config_hash".into(), exp.config_hash());
    report.provenance.insert("input.truth".into(), file_hash(truth_path)?);
    report.provenance.insert("input.gen".into(), file_hash(gen_path)?);
    let shape = truth.frame_shape();
    let w = AreaWeights::uniform(shape.height);
    let stem = report_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    let sibling = |suffix: &str| report_path.with_file_name(format!("{stem}-{suffix}.stdg"));
    match gen.get("kind")? {
        "dataset" => {
            let gen = dataset_from_container(&gen)?;
            if gen.frame_shape() != shape {
                return Err(shape_error(shape, gen.frame_shape()));
            }
            if reference.frame_shape() != shape {
                return Err(shape_error(shape, reference.frame_shape()));
            }
            let start: usize = gen.attributes.get("truth_start").and_then(|s| s.parse().ok()).unwrap_or(0);
            if start >= truth.len() {
                return Err(CliError::Invalid(format!("generated trajectory starts at truth frame {start}, truth has {}", truth.len())));
            }
            let truth_frames = &truth.frames()[start..];
            trajectory_report(&mut report, "gen", gen.frames(), truth_frames, reference.frames(), &w, &exp.eval, exp.eval_seed(&[4]))?;
            trajectory_report(&mut report, "truth", truth_frames, truth_frames, reference.frames(), &w, &exp.eval, exp.eval_seed(&[4]))?;
            ensure_parent(report_path)?;
            if let Ok(h) = hovmoeller(gen.frames(), Band::center_columns(shape.width, exp.eval.hovmoeller_columns)) {
                let mut meta = Metadata::new();
                meta.insert("band".into(), h.band.describe());
                dynaguide_core::container::array_container("hovmoeller_gen", &[h.times, h.positions], &h.values, meta)?.write(&sibling("hovmoeller"))?;
            }
            let n = gen.len().min(truth_frames.len());
            let b = bias_map(&gen.frames()[..n], &truth_frames[..n], &w)?;
            dynaguide_core::container::array_container("bias_gen", &[shape.channels, shape.height, shape.width], &b.values, Metadata::new())?.write(&sibling("bias"))?;
        }
        "ensemble" => {
            if gen.dims.len() != 6 {
                return Err(CliError::Invalid(format!("ensemble needs 6 dims, found {}", gen.dims.len())));
            }
            let d: Vec<usize> = gen.dims.iter().map(|&x| x as usize).collect();
            let gshape = FrameShape::new(d[3], d[4], d[5]);
            if gshape != shape {
                return Err(shape_error(shape, gshape));
            }
            let starts = parse_list(gen.get("truth_start")?)?;
            if starts.len() != d[0] {
                return Err(CliError::Invalid("ensemble truth_start does not match its forecast count".into()));
            }
            let frame = shape.len();
            let field = |k: usize| Field::new(shape, truth.geometry(), gen.payload[k * frame..(k + 1) * frame].to_vec());
            let mut values = Vec::with_capacity(d[0]);
            let mut truths = Vec::with_capacity(d[0]);
            for (f, &s) in starts.iter().enumerate() {
                let s = s as usize;
                if s + d[2] > truth.len() {
                    return Err(CliError::Invalid(format!("forecast {f} runs past the end of the truth trajectory")));
                }
                let members = (0..d[1])
                    .map(|b| (0..d[2]).map(|j| field((f * d[1] + b) * d[2] + j)).collect::<dynaguide_core::Result<Vec<_>>>())
                    .collect::<dynaguide_core::Result<Vec<_>>>()?;
                values.push(members);
                truths.push(truth.frames()[s..s + d[2]].to_vec());
            }
            let ens = EnsembleForecast::new(values, truths, w)?;
            let mut curve = Vec::new();
            let mut ssr = Vec::new();
            for j in 0..d[2] {
                curve.push(crps(&ens, j)?);
                ssr.push(spread_skill_ratio(&ens, j)?.ssr);
            }
            report.array("forecast.crps", curve);
            report.array("forecast.ssr", ssr);
        }
        other => return Err(CliError::Invalid(format!("cannot evaluate a container of kind {other:?}"))),
    }
    Ok(report)
}
