//! Flat `section.key=value` experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;

use dynaguide_core::diffusion::{DiffusionConfig, LogNormalSigma, NoiseSchedule, ScoreMode};
use dynaguide_core::discriminator::{DiscriminatorConfig, NegativeSampler};
use dynaguide_core::field::Geometry;
use dynaguide_core::metrics::sha256_hex;
use dynaguide_core::nn::{EncoderConfig, UNetConfig};
use dynaguide_core::rng::derive_seed;
use dynaguide_core::sampler::SamplerConfig;
use dynaguide_core::spectral::SimConfig;
use dynaguide_core::training::TrainConfig;

use crate::error::CliError;

/// Ordered key/value pairs; later assignments override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("config line {}: expected key=value, got {raw:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim());
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// `self` with every entry of `other` applied on top.
    pub fn overlay(&self, other: &Config) -> Config {
        let mut out = self.clone();
        out.entries.extend(other.entries.clone());
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Entries whose key starts with one of `prefixes`.
    pub fn section_text(&self, prefixes: &[&str]) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    fn raw(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::Invalid(format!("missing config key {key}")))
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key)?;
        raw.parse().map_err(|_| CliError::Invalid(format!("config key {key}: cannot parse {raw:?}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|t| t.trim().parse().map_err(|_| CliError::Invalid(format!("config key {key}: cannot parse {raw:?}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Block-average factor applied to simulated frames.
    pub coarsen: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
}

impl DataConfig {
    pub fn total_frames(&self) -> usize {
        self.train_frames + self.val_frames + self.test_frames
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub steps: usize,
    pub s_churn: f64,
    pub s_noise: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    pub lambda: f64,
}

impl SamplerSettings {
    pub fn build(&self, guided: bool, seed: u64) -> Result<SamplerConfig, CliError> {
        let cfg = SamplerConfig {
            schedule: NoiseSchedule::new(self.sigma_min, self.sigma_max, self.rho, self.steps)?,
            s_churn: self.s_churn,
            s_noise: self.s_noise,
            s_tmin: self.s_tmin,
            s_tmax: self.s_tmax,
            lambda: self.lambda,
            guided,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Evaluation protocol of a preset run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub forecasts: usize,
    pub members: usize,
    pub leads: usize,
    /// Length of the free-running guided and conditional rollouts.
    pub rollout_frames: usize,
    /// Independent unconditional samples.
    pub uncond_frames: usize,
    /// Initial states of the consistency-trace experiment.
    pub trace_samples: usize,
    pub auc_sigmas: Vec<f64>,
    pub auc_anchors: usize,
    pub hovmoeller_columns: usize,
    pub acf_lags: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_block: usize,
    pub waiting_pct: f64,
    pub eof_modes: usize,
}

/// A fully typed experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub score: DiffusionConfig,
    pub disc: DiscriminatorConfig,
    pub sampler: SamplerSettings,
    pub eval: EvalProtocol,
    pub raw: Config,
}

/// Keys every experiment must define.
pub const KEYS: &[&str] = &[
    "name",
    "seed",
    "sim.grid",
    "sim.dt",
    "sim.nu",
    "sim.hyper_order",
    "sim.mu",
    "sim.k_f",
    "sim.delta_f",
    "sim.eps_inject",
    "sim.subsample",
    "sim.spinup_steps",
    "data.coarsen",
    "data.train_frames",
    "data.val_frames",
    "data.test_frames",
    "score.widths",
    "score.res_blocks",
    "score.emb_features",
    "score.emb_dim",
    "score.sigma_data",
    "score.p_mean",
    "score.p_std",
    "score.batch_size",
    "score.lr",
    "score.weight_decay",
    "score.ema_rate",
    "score.epochs",
    "score.warmup_steps",
    "disc.widths",
    "disc.res_blocks",
    "disc.emb_features",
    "disc.emb_dim",
    "disc.mlp_width",
    "disc.mlp_layers",
    "disc.m",
    "disc.crop",
    "disc.p_mean",
    "disc.p_std",
    "disc.neg_mu",
    "disc.neg_sigma",
    "disc.batch_size",
    "disc.lr",
    "disc.weight_decay",
    "disc.ema_rate",
    "disc.epochs",
    "disc.warmup_steps",
    "sampler.sigma_min",
    "sampler.sigma_max",
    "sampler.rho",
    "sampler.steps",
    "sampler.s_churn",
    "sampler.s_noise",
    "sampler.s_tmin",
    "sampler.s_tmax",
    "sampler.lambda",
    "eval.forecasts",
    "eval.members",
    "eval.leads",
    "eval.rollout_frames",
    "eval.uncond_frames",
    "eval.trace_samples",
    "eval.auc_sigmas",
    "eval.auc_anchors",
    "eval.hovmoeller_columns",
    "eval.acf_lags",
    "eval.bootstrap_resamples",
    "eval.bootstrap_block",
    "eval.waiting_pct",
    "eval.eof_modes",
];

/// Keys recorded for provenance but not used by the desk implementation.
pub const INERT_PREFIX: &str = "inert.";

/// Seed streams derived from the experiment seed.
pub mod streams {
    pub const SIM: u64 = 1;
    pub const SCORE_UNCOND: u64 = 2;
    pub const SCORE_COND: u64 = 3;
    pub const DISC: u64 = 4;
    pub const DISC_CONTROL: u64 = 5;
    pub const SAMPLER: u64 = 6;
    pub const EVAL: u64 = 7;
}

impl Experiment {
    pub fn from_config(raw: &Config) -> Result<Self, CliError> {
        if let Some(k) = raw.keys().find(|k| !KEYS.contains(k) && !k.starts_with(INERT_PREFIX)) {
            return Err(CliError::Invalid(format!("unknown config key {k}")));
        }
        let c = raw;
        let seed: u64 = c.parse_as("seed")?;
        let data = DataConfig {
            coarsen: c.parse_as("data.coarsen")?,
            train_frames: c.parse_as("data.train_frames")?,
            val_frames: c.parse_as("data.val_frames")?,
            test_frames: c.parse_as("data.test_frames")?,
        };
        let sim = SimConfig {
            grid: c.parse_as("sim.grid")?,
            dt: c.parse_as("sim.dt")?,
            nu: c.parse_as("sim.nu")?,
            hyper_order: c.parse_as("sim.hyper_order")?,
            mu: c.parse_as("sim.mu")?,
            k_f: c.parse_as("sim.k_f")?,
            delta_f: c.parse_as("sim.delta_f")?,
            eps_inject: c.parse_as("sim.eps_inject")?,
            subsample: c.parse_as("sim.subsample")?,
            spinup_steps: c.parse_as("sim.spinup_steps")?,
            frames: data.total_frames(),
            seed: derive_seed(seed, &[streams::SIM]),
        };
        sim.validate()?;
        if data.coarsen == 0 || !sim.grid.is_multiple_of(data.coarsen) {
            return Err(CliError::Invalid(format!("data.coarsen = {} must divide sim.grid = {}", data.coarsen, sim.grid)));
        }
        if data.train_frames < 4 || data.test_frames < 4 {
            return Err(CliError::Invalid("data.train_frames and data.test_frames must be at least 4".into()));
        }
        let train = |p: &str, stream: u64| -> Result<TrainConfig, CliError> {
            let t = TrainConfig {
                lr: c.parse_as(&format!("{p}.lr"))?,
                weight_decay: c.parse_as(&format!("{p}.weight_decay"))?,
                ema_rate: c.parse_as(&format!("{p}.ema_rate"))?,
                batch_size: c.parse_as(&format!("{p}.batch_size"))?,
                epochs: c.parse_as(&format!("{p}.epochs"))?,
                warmup_steps: c.parse_as(&format!("{p}.warmup_steps"))?,
                seed: derive_seed(seed, &[stream]),
            };
            t.validate()?;
            Ok(t)
        };
        let score = DiffusionConfig {
            mode: ScoreMode::Unconditional,
            arch: UNetConfig {
                in_channels: 1,
                widths: c.list("score.widths")?,
                res_blocks: c.parse_as("score.res_blocks")?,
                emb_features: c.parse_as("score.emb_features")?,
                emb_dim: c.parse_as("score.emb_dim")?,
                geometry: Geometry::PeriodicBoth,
            },
            sigma_data: c.parse_as("score.sigma_data")?,
            noise: LogNormalSigma { p_mean: c.parse_as("score.p_mean")?, p_std: c.parse_as("score.p_std")? },
            train: train("score", streams::SCORE_UNCOND)?,
        };
        score.network()?;
        let m: usize = c.parse_as("disc.m")?;
        let disc = DiscriminatorConfig {
            arch: EncoderConfig {
                in_channels: m + 2,
                widths: c.list("disc.widths")?,
                res_blocks: c.parse_as("disc.res_blocks")?,
                emb_features: c.parse_as("disc.emb_features")?,
                emb_dim: c.parse_as("disc.emb_dim")?,
                mlp_width: c.parse_as("disc.mlp_width")?,
                mlp_layers: c.parse_as("disc.mlp_layers")?,
                geometry: Geometry::PeriodicBoth,
            },
            m,
            noise: LogNormalSigma { p_mean: c.parse_as("disc.p_mean")?, p_std: c.parse_as("disc.p_std")? },
            negatives: NegativeSampler {
                mu_step: c.parse_as("disc.neg_mu")?,
                sigma_step: c.parse_as("disc.neg_sigma")?,
                ..NegativeSampler::default()
            },
            crop: c.parse_as("disc.crop")?,
            train: train("disc", streams::DISC)?,
        };
        disc.network()?;
        disc.negatives.validate()?;
        let sampler = SamplerSettings {
            sigma_min: c.parse_as("sampler.sigma_min")?,
            sigma_max: c.parse_as("sampler.sigma_max")?,
            rho: c.parse_as("sampler.rho")?,
            steps: c.parse_as("sampler.steps")?,
            s_churn: c.parse_as("sampler.s_churn")?,
            s_noise: c.parse_as("sampler.s_noise")?,
            s_tmin: c.parse_as("sampler.s_tmin")?,
            s_tmax: c.parse_as("sampler.s_tmax")?,
            lambda: c.parse_as("sampler.lambda")?,
        };
        sampler.build(true, 0)?;
        let eval = EvalProtocol {
            forecasts: c.parse_as("eval.forecasts")?,
            members: c.parse_as("eval.members")?,
            leads: c.parse_as("eval.leads")?,
            rollout_frames: c.parse_as("eval.rollout_frames")?,
            uncond_frames: c.parse_as("eval.uncond_frames")?,
            trace_samples: c.parse_as("eval.trace_samples")?,
            auc_sigmas: c.list("eval.auc_sigmas")?,
            auc_anchors: c.parse_as("eval.auc_anchors")?,
            hovmoeller_columns: c.parse_as("eval.hovmoeller_columns")?,
            acf_lags: c.parse_as("eval.acf_lags")?,
            bootstrap_resamples: c.parse_as("eval.bootstrap_resamples")?,
            bootstrap_block: c.parse_as("eval.bootstrap_block")?,
            waiting_pct: c.parse_as("eval.waiting_pct")?,
            eof_modes: c.parse_as("eval.eof_modes")?,
        };
        let e = Self { name: c.raw("name")?.to_string(), seed, sim, data, score, disc, sampler, eval, raw: raw.clone() };
        e.check_protocol()?;
        Ok(e)
    }

    fn check_protocol(&self) -> Result<(), CliError> {
        let (d, e) = (&self.data, &self.eval);
        let need = |what: &str, have: usize, want: usize| {
            if have < want {
                Err(CliError::Invalid(format!("{what}: {have} test frames, protocol needs {want}")))
            } else {
                Ok(())
            }
        };
        need("eval.rollout_frames", d.test_frames, e.rollout_frames.min(1) + 2)?;
        need("eval.forecasts/eval.leads", d.test_frames, e.leads + 2 + e.forecasts.min(1))?;
        if e.members < 2 {
            return Err(CliError::Invalid("eval.members must be at least 2 for spread".into()));
        }
        if e.acf_lags == 0 || e.auc_sigmas.is_empty() || e.eof_modes == 0 {
            return Err(CliError::Invalid("eval.acf_lags, eval.auc_sigmas and eval.eof_modes must be non-empty".into()));
        }
        Ok(())
    }

    /// Score network configuration for one mode.
    pub fn score_config(&self, mode: ScoreMode) -> DiffusionConfig {
        let mut cfg = self.score.clone();
        cfg.mode = mode;
        cfg.arch.in_channels = mode.input_channels();
        if mode == ScoreMode::Conditional {
            cfg.train.seed = derive_seed(self.seed, &[streams::SCORE_COND]);
        }
        cfg
    }

    pub fn sampler_config(&self, guided: bool, stream: &[u64]) -> Result<SamplerConfig, CliError> {
        let seed = derive_seed(self.seed, &[&[streams::SAMPLER][..], stream].concat());
        self.sampler.build(guided, seed)
    }

    pub fn eval_seed(&self, stream: &[u64]) -> u64 {
        derive_seed(self.seed, &[&[streams::EVAL][..], stream].concat())
    }

    pub fn config_hash(&self) -> String {
        self.raw.hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset;

    #[test]
    fn parse_ignores_comments_and_later_keys_win() {
        let c = Config::parse("# comment\na = 1\nb=x # trailing\n\na=2\n").unwrap();
        assert_eq!(c.get("a"), Some("2"));
        assert_eq!(c.get("b"), Some("x"));
        assert!(Config::parse("novalue").is_err());
    }

    #[test]
    fn text_round_trip_preserves_hash() {
        let c = preset::config("vorticity-desk").unwrap();
        let back = Config::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn every_preset_is_valid() {
        for name in preset::NAMES {
            let e = Experiment::from_config(&preset::config(name).unwrap()).unwrap();
            assert_eq!(e.name, *name);
        }
    }

    #[test]
    fn unknown_and_bad_keys_are_rejected() {
        let base = preset::config("smoke").unwrap();
        let mut c = base.clone();
        c.set("sim.typo", "1");
        assert!(matches!(Experiment::from_config(&c), Err(CliError::Invalid(m)) if m.contains("sim.typo")));
        let mut c = base.clone();
        c.set("sim.dt", "-1");
        assert!(matches!(Experiment::from_config(&c), Err(CliError::Invalid(_))));
        let mut c = base;
        c.set("inert.note", "kept");
        assert!(Experiment::from_config(&c).is_ok());
    }

    #[test]
    fn seeds_are_derived_per_stream() {
        let e = Experiment::from_config(&preset::config("smoke").unwrap()).unwrap();
        let u = e.score_config(ScoreMode::Unconditional);
        let c = e.score_config(ScoreMode::Conditional);
        assert_ne!(u.train.seed, c.train.seed);
        assert_eq!(c.arch.in_channels, 3);
        assert_ne!(e.sampler_config(true, &[0]).unwrap().seed, e.sampler_config(true, &[1]).unwrap().seed);
    }
}
