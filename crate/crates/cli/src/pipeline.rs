//! Stage drivers: data → models → rollouts and forecasts → metrics.
//!
//! Every expensive artifact is a pure function of the configuration, so it
//! can be memoized in a cache directory keyed by a hash of the inputs that
//! determine it. All artifacts are also written to the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dynaguide_core::container::{array_container, format_list, Container, Metadata};
use dynaguide_core::diffusion::{self, ScoreMode, ScoreNetwork};
use dynaguide_core::discriminator::{self, evaluate_classifier, binomial_test_half, mean_q_at_offset, Discriminator};
use dynaguide_core::field::{
    apply_standardization, standardize, AreaWeights, Field, FrameShape, NormStats, TrajectoryDataset,
};
use dynaguide_core::metrics::{
    acf, bias_map, block_bootstrap_mean_ci, crps, eof, hovmoeller, pattern_correlation, sha256_hex, spatial_means,
    spread_skill_ratio, w1_consecutive, waiting_times, Band, EnsembleForecast, MetricReport,
};
use dynaguide_core::rng;
use dynaguide_core::sampler::{
    ensemble_forecast, rollout, sample_next, DiscModel, Guide, RolloutState, SampleTrace, ScoreModel,
};
use dynaguide_core::spectral::simulate;
use dynaguide_core::training::{ModelCheckpoint, TrainState};

use crate::config::{streams, Experiment};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut framed = format!("blob {}\0", bytes.len()).into_bytes();
    framed.extend_from_slice(bytes);
    sha256_hex(&framed)
}

pub fn dataset_hash(ds: &TrajectoryDataset) -> String {
    content_hash(&dynaguide_core::container::dataset_to_container(ds).to_bytes())
}

/// Block average by `factor` in both spatial directions.
pub fn coarsen(ds: &TrajectoryDataset, factor: usize) -> Result<TrajectoryDataset> {
    if factor == 1 {
        return Ok(ds.clone());
    }
    let s = ds.frame_shape();
    let (h, w) = (s.height / factor, s.width / factor);
    let shape = FrameShape::new(s.channels, h, w);
    let norm = (factor * factor) as f64;
    let frames = ds
        .frames()
        .iter()
        .map(|f| {
            let v = f.values();
            let mut out = vec![0.0f32; shape.len()];
            for c in 0..s.channels {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0f64;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                acc += v[c * s.plane() + (y * factor + dy) * s.width + x * factor + dx] as f64;
                            }
                        }
                        out[c * h * w + y * w + x] = (acc / norm) as f32;
                    }
                }
            }
            Field::new(shape, f.geometry(), out)
        })
        .collect::<dynaguide_core::Result<Vec<_>>>()?;
    let mut out = TrajectoryDataset::new(shape, ds.geometry(), frames, ds.dt_physical(), ds.split())?;
    out.attributes = ds.attributes.clone();
    out.attributes.insert("coarsen".into(), factor.to_string());
    Ok(out)
}

/// Standardized train/val/test splits of one simulated trajectory.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: TrajectoryDataset,
    pub val: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub stats: NormStats,
    pub hash: String,
}

/// The three model families of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Guided,
    Conditional,
    Unconditional,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Guided, Model::Conditional, Model::Unconditional];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Guided => "guided",
            Model::Conditional => "cond",
            Model::Unconditional => "uncond",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Model::Guided => 1,
            Model::Conditional => 2,
            Model::Unconditional => 3,
        }
    }
}

pub struct Models {
    pub uncond: (ScoreNetwork, ModelCheckpoint),
    pub cond: (ScoreNetwork, ModelCheckpoint),
    pub disc: (Discriminator, ModelCheckpoint),
}

impl Models {
    fn score(&self, model: Model) -> ScoreModel<'_> {
        let (net, ck) = if model == Model::Conditional { &self.cond } else { &self.uncond };
        ScoreModel { net, params: ck.inference_params() }
    }

    fn guide(&self) -> DiscModel<'_> {
        DiscModel { net: &self.disc.0, params: self.disc.1.inference_params() }
    }
}

pub struct Pipeline {
    pub exp: Experiment,
    out: Option<PathBuf>,
    cache: Option<PathBuf>,
    verbose: bool,
    started: Instant,
}

fn checkpoint_hash(ck: &ModelCheckpoint) -> Result<String> {
    Ok(content_hash(&ck.to_container()?.to_bytes()))
}

impl Pipeline {
    /// With `out` set, every artifact is also written there.
    pub fn new(exp: Experiment, out: Option<&Path>, cache: Option<PathBuf>, verbose: bool) -> Result<Self> {
        if let Some(o) = out {
            std::fs::create_dir_all(o)?;
        }
        if let Some(c) = &cache {
            std::fs::create_dir_all(c)?;
        }
        Ok(Self { exp, out: out.map(Path::to_path_buf), cache, verbose, started: Instant::now() })
    }

    fn emit(&self, file: &str, c: &Container) -> Result<()> {
        match &self.out {
            Some(o) => Ok(c.write(&o.join(file))?),
            None => Ok(()),
        }
    }

    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[{:>8.1}s] {msg}", self.started.elapsed().as_secs_f64());
        }
    }

    fn key(&self, parts: &[&str]) -> String {
        sha256_hex(parts.join("\n--\n").as_bytes())[..20].to_string()
    }

    /// Loads `name-key.stdg` from the cache, or computes and stores it.
    /// The artifact is copied to the output directory under `name.stdg`.
    fn memo(&self, name: &str, key: &str, compute: impl FnOnce() -> Result<Container>) -> Result<Container> {
        let cached = self.cache.as_ref().map(|d| d.join(format!("{name}-{key}.stdg")));
        let c = match &cached {
            Some(p) if p.exists() => {
                self.log(&format!("{name}: cached"));
                Container::read(p)?
            }
            _ => {
                let t = Instant::now();
                let c = compute()?;
                self.log(&format!("{name}: computed in {:.1}s", t.elapsed().as_secs_f64()));
                if let Some(p) = &cached {
                    let tmp = p.with_extension("partial");
                    c.write(&tmp)?;
                    std::fs::rename(&tmp, p)?;
                }
                c
            }
        };
        if self.out.is_some() {
            self.emit(&format!("{name}.stdg"), &self.stamp(c.clone(), &[("cache_key", key)]))?;
        }
        Ok(c)
    }

    /// Adds the config hash and the given input hashes to the metadata.
    pub fn stamp(&self, mut c: Container, inputs: &[(&str, &str)]) -> Container {
        c.metadata.insert("provenance.config_hash".into(), self.exp.config_hash());
        for (k, v) in inputs {
            c.metadata.insert(format!("provenance.{k}"), v.to_string());
        }
        c
    }

    fn data_key(&self) -> String {
        self.key(&[&self.exp.raw.section_text(&["sim.", "data."]), &self.exp.seed.to_string()])
    }

    /// The simulated trajectory after coarsening, in physical units.
    pub fn raw_dataset(&self) -> Result<TrajectoryDataset> {
        let key = self.data_key();
        let factor = self.exp.data.coarsen;
        let c = self.memo("dataset", &key, || {
            let raw = simulate(&self.exp.sim)?;
            Ok(dynaguide_core::container::dataset_to_container(&coarsen(&raw, factor)?))
        })?;
        Ok(dynaguide_core::container::dataset_from_container(&c)?)
    }

    pub fn datasets(&self) -> Result<Datasets> {
        let full = self.raw_dataset()?;
        let data = self.prepare(&full)?;
        for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
            self.emit(&format!("dataset-{name}.stdg"), &dynaguide_core::container::dataset_to_container(ds))?;
        }
        Ok(data)
    }

    /// Contiguous split and train-statistics standardization of a raw
    /// trajectory.
    pub fn prepare(&self, full: &TrajectoryDataset) -> Result<Datasets> {
        let d = &self.exp.data;
        if full.norm_stats().is_some() {
            return Err(CliError::Invalid("expected a raw (unstandardized) trajectory".into()));
        }
        if full.len() < d.total_frames() {
            return Err(CliError::Invalid(format!(
                "trajectory has {} frames, configuration needs {}",
                full.len(),
                d.total_frames()
            )));
        }
        let (train, val, test) = full.slice(0..d.total_frames(), full.split()).split_contiguous(d.train_frames, d.val_frames)?;
        let train = standardize(&train)?;
        let stats = train.norm_stats().cloned().expect("standardized");
        let val = apply_standardization(&val, &stats)?;
        let test = apply_standardization(&test, &stats)?;
        Ok(Datasets { train, val, test, stats, hash: dataset_hash(full) })
    }

    fn record_history(ck: &mut ModelCheckpoint, epoch_losses: &[f64]) {
        ck.config.insert("history.epoch_loss".into(), format_list(epoch_losses));
    }

    pub fn score_model(&self, data: &Datasets, mode: ScoreMode) -> Result<(ScoreNetwork, ModelCheckpoint)> {
        let cfg = self.exp.score_config(mode);
        let key = self.key(&[&data.hash, &self.exp.raw.section_text(&["score."]), mode.as_str(), &self.exp.seed.to_string()]);
        let c = self.memo(&format!("score-{}", mode.as_str()), &key, || {
            let mut epoch_losses = Vec::new();
            let mut seen = 0;
            let mut ck = diffusion::train(&cfg, &data.train, |epoch, st: &TrainState| {
                let new = &st.losses[seen..];
                epoch_losses.push(new.iter().sum::<f64>() / new.len().max(1) as f64);
                seen = st.losses.len();
                self.log(&format!("score-{} epoch {epoch}: loss {:.4}", mode.as_str(), epoch_losses.last().unwrap()));
                Ok(())
            })?;
            Self::record_history(&mut ck, &epoch_losses);
            ck.config.insert("norm.mean".into(), format_list(&data.stats.mean));
            ck.config.insert("norm.std".into(), format_list(&data.stats.std));
            Ok(ck.to_container()?)
        })?;
        let ck = ModelCheckpoint::from_container(&c)?;
        Ok((diffusion::network_from_checkpoint(&ck)?, ck))
    }

    /// The guidance discriminator, or with `shuffled` a control trained on
    /// the temporally shuffled training split.
    pub fn discriminator(&self, data: &Datasets, shuffled: bool) -> Result<(Discriminator, ModelCheckpoint)> {
        let mut cfg = self.exp.disc.clone();
        let label = if shuffled { "disc-control" } else { "disc" };
        if shuffled {
            cfg.train.seed = rng::derive_seed(self.exp.seed, &[streams::DISC_CONTROL]);
        }
        let key = self.key(&[&data.hash, &self.exp.raw.section_text(&["disc."]), label, &self.exp.seed.to_string()]);
        let c = self.memo(label, &key, || {
            let train = if shuffled {
                data.train.shuffled(&mut rng::stream(self.exp.seed, &[streams::DISC_CONTROL, 1]))
            } else {
                data.train.clone()
            };
            let mut epoch_losses = Vec::new();
            let mut seen = 0;
            let mut ck = discriminator::train_discriminator(&cfg, &train, |_| {}, |epoch, st| {
                let new = &st.losses[seen..];
                epoch_losses.push(new.iter().sum::<f64>() / new.len().max(1) as f64);
                seen = st.losses.len();
                self.log(&format!("{label} epoch {epoch}: loss {:.4}", epoch_losses.last().unwrap()));
                Ok(())
            })?;
            Self::record_history(&mut ck, &epoch_losses);
            Ok(ck.to_container()?)
        })?;
        let ck = ModelCheckpoint::from_container(&c)?;
        Ok((discriminator::network_from_checkpoint(&ck)?, ck))
    }

    pub fn models(&self, data: &Datasets) -> Result<Models> {
        Ok(Models {
            uncond: self.score_model(data, ScoreMode::Unconditional)?,
            cond: self.score_model(data, ScoreMode::Conditional)?,
            disc: self.discriminator(data, false)?,
        })
    }

    fn models_key(&self, models: &Models) -> Result<String> {
        Ok(self.key(&[
            &checkpoint_hash(&models.uncond.1)?,
            &checkpoint_hash(&models.cond.1)?,
            &checkpoint_hash(&models.disc.1)?,
            &self.exp.raw.section_text(&["sampler.", "eval."]),
            &self.exp.seed.to_string(),
        ]))
    }

    /// Free-running rollout from the first two test frames.
    pub fn rollout(&self, data: &Datasets, models: &Models, model: Model) -> Result<TrajectoryDataset> {
        let key = self.key(&[&self.models_key(models)?, model.as_str()]);
        let frames = if model == Model::Unconditional { self.exp.eval.uncond_frames } else { self.exp.eval.rollout_frames };
        let c = self.memo(&format!("rollout-{}", model.as_str()), &key, || {
            let cfg = self.exp.sampler_config(model == Model::Guided, &[model.stream()])?;
            let init = RolloutState::from_dataset(&data.test, 1)?;
            let guide = models.guide();
            let guide: Option<&dyn Guide> = (model == Model::Guided).then_some(&guide as &dyn Guide);
            let ds = rollout(&models.score(model), guide, &init, frames, &cfg, data.test.dt_physical())?;
            Ok(dynaguide_core::container::dataset_to_container(&ds))
        })?;
        Ok(dynaguide_core::container::dataset_from_container(&c)?)
    }

    /// Mean reported consistency per sampler step, guided and unguided,
    /// over `eval.trace_samples` initial states. Rows: guided, unguided.
    pub fn consistency_trace(&self, data: &Datasets, models: &Models) -> Result<(Vec<f64>, Vec<f64>)> {
        let key = self.key(&[&self.models_key(models)?, "trace"]);
        let n = self.exp.eval.trace_samples;
        let steps = self.exp.sampler.steps;
        let c = self.memo("trace", &key, || {
            let mut rows = vec![vec![0.0f64; steps]; 2];
            let anchors = spread_indices(1, data.test.len() - 1, n);
            for (s, &a) in anchors.iter().enumerate() {
                let state = RolloutState::from_dataset(&data.test, a)?;
                for (row, guided) in [(0, true), (1, false)] {
                    let cfg = self.exp.sampler_config(guided, &[0x7ace, s as u64])?;
                    let mut trace = SampleTrace::default();
                    let guide = models.guide();
                    let mut r = rng::rng_from_seed(cfg.seed);
                    sample_next(&models.score(Model::Guided), Some(&guide), &state, &cfg, &mut r, Some(&mut trace))?;
                    for (acc, q) in rows[row].iter_mut().zip(&trace.q) {
                        *acc += q / anchors.len() as f64;
                    }
                }
            }
            let values: Vec<f64> = rows.concat();
            Ok(array_container("consistency_trace", &[2, steps], &values, Metadata::new())?)
        })?;
        let v: Vec<f64> = c.payload.iter().map(|&x| x as f64).collect();
        Ok((v[..steps].to_vec(), v[steps..].to_vec()))
    }

    /// Forecast initial indices into the test split.
    pub fn forecast_inits(&self, data: &Datasets) -> Vec<usize> {
        let leads = self.exp.eval.leads;
        spread_indices(1, data.test.len() - leads - 1, self.exp.eval.forecasts)
    }

    pub fn forecast(&self, data: &Datasets, models: &Models, model: Model) -> Result<EnsembleForecast> {
        let e = &self.exp.eval;
        let key = self.key(&[&self.models_key(models)?, "forecast", model.as_str()]);
        let inits = self.forecast_inits(data);
        let shape = data.test.frame_shape();
        let c = self.memo(&format!("forecast-{}", model.as_str()), &key, || {
            let cfg = self.exp.sampler_config(model == Model::Guided, &[0xf0, model.stream()])?;
            let states = inits.iter().map(|&n| RolloutState::from_dataset(&data.test, n)).collect::<dynaguide_core::Result<Vec<_>>>()?;
            let guide = models.guide();
            let guide: Option<&dyn Guide> = (model == Model::Guided).then_some(&guide as &dyn Guide);
            let runs = ensemble_forecast(&models.score(model), guide, &states, e.members, e.leads, &cfg)?;
            let payload: Vec<f32> = runs.iter().flatten().flatten().flat_map(|f| f.values().iter().copied()).collect();
            let dims = [inits.len(), e.members, e.leads, shape.channels, shape.height, shape.width];
            let mut meta = Metadata::new();
            meta.insert("kind".into(), "ensemble".into());
            meta.insert("inits".into(), format_list(&inits.iter().map(|&i| i as f64).collect::<Vec<_>>()));
            Ok(Container::new(dims.iter().map(|&d| d as u64).collect(), meta, payload)?)
        })?;
        let frame = shape.len();
        let field = |k: usize| Field::new(shape, data.test.geometry(), c.payload[k * frame..(k + 1) * frame].to_vec());
        let mut values = Vec::with_capacity(inits.len());
        let mut truth = Vec::with_capacity(inits.len());
        for (f, &n) in inits.iter().enumerate() {
            let mut members = Vec::with_capacity(e.members);
            for b in 0..e.members {
                let base = (f * e.members + b) * e.leads;
                members.push((0..e.leads).map(|j| field(base + j)).collect::<dynaguide_core::Result<Vec<_>>>()?);
            }
            values.push(members);
            truth.push((1..=e.leads).map(|j| data.test.frame(n + j).clone()).collect());
        }
        Ok(EnsembleForecast::new(values, truth, AreaWeights::uniform(shape.height))?)
    }

    /// Everything: data, models, discriminator diagnostics, consistency
    /// trace, rollouts, forecasts and their metrics in one report.
    pub fn run_all(&self) -> Result<MetricReport> {
        let e = &self.exp.eval;
        let data = self.datasets()?;
        let mut report = MetricReport::new();
        report.provenance.insert("config_hash".into(), self.exp.config_hash());
        report.provenance.insert("dataset_hash".into(), data.hash.clone());
        report.provenance.insert("preset".into(), self.exp.name.clone());
        report.provenance.insert("seed".into(), self.exp.seed.to_string());
        let train_values: Vec<Field> = data.train.frames().to_vec();
        let train_std = pooled_std(&train_values);
        report.scalar("data.train_std", train_std);
        report.scalar("data.lag1_acf_test", acf(data.test.frames(), &uniform(&data), 1, None)?.values[1]);

        let models = self.models(&data)?;
        for (name, ck) in [("score_uncond", &models.uncond.1), ("score_cond", &models.cond.1), ("disc", &models.disc.1)] {
            if let Some(h) = ck.config.get("history.epoch_loss") {
                report.array(format!("train.{name}.epoch_loss"), dynaguide_core::container::parse_list(h)?);
            }
            report.scalar(format!("train.{name}.params"), ck.params.len() as f64);
        }
        self.discriminator_diagnostics(&data, &models, &mut report)?;

        let (q_guided, q_unguided) = self.consistency_trace(&data, &models)?;
        let tail = (self.exp.sampler.steps as f64 * 0.1).ceil() as usize;
        let tail_mean = |q: &[f64]| q[q.len() - tail..].iter().sum::<f64>() / tail as f64;
        report.scalar("trace.q_guided_final", tail_mean(&q_guided));
        report.scalar("trace.q_unguided_final", tail_mean(&q_unguided));
        report.array("trace.q_guided", q_guided);
        report.array("trace.q_unguided", q_unguided);

        let truth = data.test.frames()[2..].to_vec();
        self.trajectory_metrics(&mut report, "truth", &truth, &truth, &data)?;
        for model in Model::ALL {
            let ds = self.rollout(&data, &models, model)?;
            self.trajectory_metrics(&mut report, model.as_str(), ds.frames(), &truth, &data)?;
            let stds: Vec<f64> = ds.frames().iter().map(|f| f.std() / train_std).collect();
            report.scalar(format!("rollout.{}.frames", model.as_str()), ds.len() as f64);
            report.scalar(format!("rollout.{}.std_ratio_min", model.as_str()), stds.iter().copied().fold(f64::INFINITY, f64::min));
            report.scalar(format!("rollout.{}.std_ratio_max", model.as_str()), stds.iter().copied().fold(0.0, f64::max));
        }

        for model in [Model::Guided, Model::Conditional] {
            let ens = self.forecast(&data, &models, model)?;
            let mut curve = Vec::with_capacity(e.leads);
            let mut ssr = Vec::with_capacity(e.leads);
            let mut spread = Vec::with_capacity(e.leads);
            let mut skill = Vec::with_capacity(e.leads);
            for j in 0..e.leads {
                curve.push(crps(&ens, j)?);
                let s = spread_skill_ratio(&ens, j)?;
                ssr.push(s.ssr);
                spread.push(s.spread);
                skill.push(s.skill);
            }
            let m = model.as_str();
            report.array(format!("forecast.{m}.crps"), curve);
            report.array(format!("forecast.{m}.ssr"), ssr);
            report.array(format!("forecast.{m}.spread"), spread);
            report.array(format!("forecast.{m}.skill"), skill);
        }
        Ok(report)
    }

    /// Held-out AUC on a σ grid, offset ordering of `q`, and the shuffled-data
    /// control evaluated on a shuffled test split.
    pub fn discriminator_diagnostics(&self, data: &Datasets, models: &Models, report: &mut MetricReport) -> Result<()> {
        let e = &self.exp.eval;
        let (disc, ck) = &models.disc;
        let m = disc.m();
        let anchors = spread_indices(m, data.test.len() - 2, e.auc_anchors);
        let mut aucs = Vec::new();
        for (i, &sigma) in e.auc_sigmas.iter().enumerate() {
            let ev = evaluate_classifier(disc, ck.inference_params(), &data.test, &anchors, sigma, self.exp.eval_seed(&[1, i as u64]))?;
            aucs.push(ev.auc());
            report.scalar(format!("disc.auc.sigma_{sigma}"), ev.auc());
        }
        report.array("disc.auc_sigmas", e.auc_sigmas.clone());
        report.array("disc.auc", aucs.clone());
        report.scalar("disc.auc_min", aucs.iter().copied().fold(f64::INFINITY, f64::min));

        let sigma = self.exp.sampler.sigma_min;
        let inner: Vec<usize> = anchors.iter().copied().filter(|&n| n + 2 < data.test.len()).collect();
        let seed = self.exp.eval_seed(&[2]);
        report.scalar("disc.q_next", mean_q_at_offset(disc, ck.inference_params(), &data.test, &inner, Some(1), sigma, seed)?);
        report.scalar("disc.q_lag2", mean_q_at_offset(disc, ck.inference_params(), &data.test, &inner, Some(2), sigma, seed)?);
        report.scalar("disc.q_random", mean_q_at_offset(disc, ck.inference_params(), &data.test, &inner, None, sigma, seed)?);

        let (control, cck) = self.discriminator(data, true)?;
        let shuffled_test = data.test.shuffled(&mut rng::stream(self.exp.seed, &[streams::DISC_CONTROL, 2]));
        let mut correct = 0;
        let mut trials = 0;
        for (i, &sigma) in e.auc_sigmas.iter().enumerate() {
            let ev = evaluate_classifier(&control, cck.inference_params(), &shuffled_test, &anchors, sigma, self.exp.eval_seed(&[3, i as u64]))?;
            let (_, k, n) = ev.accuracy();
            correct += k;
            trials += n;
        }
        report.scalar("disc.control.correct", correct as f64);
        report.scalar("disc.control.trials", trials as f64);
        report.scalar("disc.control.accuracy", correct as f64 / trials as f64);
        report.scalar("disc.control.p_value", binomial_test_half(correct, trials));
        Ok(())
    }

    /// ACF, Hovmoeller W1, bias against truth, waiting times and EOFs of a
    /// trajectory, under keys prefixed by `name`.
    pub fn trajectory_metrics(
        &self,
        report: &mut MetricReport,
        name: &str,
        traj: &[Field],
        truth: &[Field],
        data: &Datasets,
    ) -> Result<()> {
        let e = &self.exp.eval;
        let w = uniform(data);
        trajectory_report(report, name, traj, truth, data.train.frames(), &w, e, self.exp.eval_seed(&[4]))?;
        if let Ok(h) = hovmoeller(traj, Band::center_columns(data.test.frame_shape().width, e.hovmoeller_columns)) {
            let c = array_container(&format!("hovmoeller_{name}"), &[h.times, h.positions], &h.values, Metadata::new())?;
            self.emit(&format!("hovmoeller-{name}.stdg"), &c)?;
        }
        if name != "truth" {
            let n = traj.len().min(truth.len());
            let b = bias_map(&traj[..n], &truth[..n], &w)?;
            let s = b.shape;
            let c = array_container(&format!("bias_{name}"), &[s.channels, s.height, s.width], &b.values, Metadata::new())?;
            self.emit(&format!("bias-{name}.stdg"), &c)?;
        }
        Ok(())
    }
}

fn uniform(data: &Datasets) -> AreaWeights {
    AreaWeights::uniform(data.test.frame_shape().height)
}

/// `count` indices spread evenly over `[lo, hi)`.
pub fn spread_indices(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let span = hi.saturating_sub(lo);
    if span == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(span);
    (0..count).map(|i| lo + i * span / count).collect()
}

pub fn pooled_std(frames: &[Field]) -> f64 {
    let n: usize = frames.iter().map(|f| f.values().len()).sum();
    let mean = frames.iter().flat_map(|f| f.values()).map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = frames.iter().flat_map(|f| f.values()).map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Metrics of one trajectory against a truth trajectory and a reference
/// (training) trajectory, under keys `<section>.<name>`.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_report(
    report: &mut MetricReport,
    name: &str,
    traj: &[Field],
    truth: &[Field],
    reference: &[Field],
    w: &AreaWeights,
    e: &crate::config::EvalProtocol,
    seed: u64,
) -> Result<()> {
    if traj.len() > e.acf_lags {
        let a = acf(traj, w, e.acf_lags, None)?;
        report.scalar(format!("acf.{name}.lag1"), a.values[1]);
        report.array(format!("acf.{name}"), a.values);
    }
    let width = traj[0].shape().width;
    if let Ok(h) = hovmoeller(traj, Band::center_columns(width, e.hovmoeller_columns)) {
        if let Ok(d) = w1_consecutive(&h) {
            report.scalar(format!("w1.{name}.mean"), d.iter().sum::<f64>() / d.len() as f64);
            report.array(format!("w1.{name}"), d);
        }
    }
    let wt = waiting_times(traj, reference, e.waiting_pct)?;
    report.scalar(format!("waiting.{name}.mean_gap"), wt.mean_gap().unwrap_or(f64::NAN));
    report.array(format!("waiting.{name}.counts"), wt.counts.iter().map(|&c| c as f64).collect());
    if let Ok(modes) = eof(traj, w, e.eof_modes) {
        report.array(format!("eof.{name}.explained"), modes.explained.clone());
        if let Ok(reference_modes) = eof(truth, w, e.eof_modes) {
            let corr = modes.modes.iter().zip(&reference_modes.modes).map(|(a, b)| pattern_correlation(a, b).abs()).collect();
            report.array(format!("eof.{name}.pattern_corr"), corr);
        }
    }
    let means = spatial_means(traj, w)?;
    report.scalar(format!("mean.{name}"), means.iter().sum::<f64>() / means.len() as f64);
    if name != "truth" {
        let n = traj.len().min(truth.len());
        let b = bias_map(&traj[..n], &truth[..n], w)?;
        let truth_means = spatial_means(&truth[..n], w)?;
        let diffs: Vec<f64> = truth_means.iter().zip(&means).map(|(y, x)| y - x).collect();
        let mut r = rng::rng_from_seed(seed);
        let (lo, hi) = block_bootstrap_mean_ci(&diffs, e.bootstrap_block.min(n), e.bootstrap_resamples, 0.95, &mut r)?;
        report.scalar(format!("bias.{name}.global_mean"), b.global_mean);
        report.scalar(format!("bias.{name}.mean_abs"), b.mean_abs);
        report.scalar(format!("bias.{name}.ci_lo"), lo);
        report.scalar(format!("bias.{name}.ci_hi"), hi);
        let rmse = dynaguide_core::metrics::rmse(&traj[..n], &truth[..n], w)?;
        report.scalar(format!("rmse.{name}"), rmse);
    }
    Ok(())
}
