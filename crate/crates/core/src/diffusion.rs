//! Variance-exploding denoising diffusion with EDM preconditioning.
//!
//! A denoiser `D(x; σ) = c_skip(σ)·x + c_out(σ)·F(c_in(σ)·x; c_noise(σ))`
//! wraps the raw network `F`; the score follows as `(D(x) − x)/σ²`.

use std::str::FromStr;

use crate::autodiff::{Scalar, Tape, Var};
use crate::container::{parse_value, Metadata};
use crate::error::{Error, Result};
use crate::field::{Field, TrajectoryDataset};
use crate::nn::{Bound, UNet, UNetConfig};
use crate::rng::{self, Rng, SimRng};
use crate::training::{ModelCheckpoint, TrainConfig, TrainState};

/// `σ_0 > … > σ_{N−1}` by the ρ-warped interpolation between `σ_max` and
/// `σ_min`, followed by a terminal `σ_N = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64, steps: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::Config(format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        if steps < 2 {
            return Err(Error::Config(format!("need at least 2 sampler steps, got {steps}")));
        }
        let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
        let mut sigmas: Vec<f64> = (0..steps)
            .map(|i| (a + i as f64 / (steps - 1) as f64 * (b - a)).powf(rho))
            .collect();
        sigmas[0] = sigma_max;
        sigmas[steps - 1] = sigma_min;
        sigmas.push(0.0);
        Ok(Self { sigma_min, sigma_max, rho, sigmas })
    }

    /// Number of solver steps `N`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// All `N + 1` levels including the terminal zero.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Lower bound applied to σ before taking its logarithm, so that clean
/// inputs (σ = 0) still receive a finite noise embedding.
pub const SIGMA_EMBED_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioner {
    pub sigma_data: f64,
}

impl Preconditioner {
    pub fn new(sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(Error::Config(format!("sigma_data must be positive, got {sigma_data}")));
        }
        Ok(Self { sigma_data })
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(&self, sigma: f64) -> f64 {
        c_noise(sigma)
    }

    /// Loss weight `(σ² + σ_data²)/(σ·σ_data)²`, the inverse of `c_out²`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let sd = self.sigma_data;
        (sigma * sigma + sd * sd) / (sigma * sd).powi(2)
    }
}

/// Noise-level input of the networks: `ln(σ)/4`.
pub fn c_noise(sigma: f64) -> f64 {
    sigma.max(SIGMA_EMBED_FLOOR).ln() / 4.0
}

/// Score `(D(x) − x)/σ²` from a denoised estimate.
pub fn score_from_denoised(x: &[f32], denoised: &[f32], sigma: f64) -> Vec<f32> {
    let inv = 1.0 / (sigma * sigma);
    x.iter()
        .zip(denoised)
        .map(|(&x, &d)| ((d as f64 - x as f64) * inv) as f32)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Models `p(x^{n+1})`; one input channel.
    Unconditional,
    /// Models `p(x^{n+1} | x^n, x^{n−1})`; the two clean frames enter as
    /// extra input channels.
    Conditional,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Unconditional => "uncond",
            ScoreMode::Conditional => "cond",
        }
    }

    pub fn input_channels(self) -> usize {
        match self {
            ScoreMode::Unconditional => 1,
            ScoreMode::Conditional => 3,
        }
    }

    /// Clean history frames each training target needs before it.
    pub fn history(self) -> usize {
        match self {
            ScoreMode::Unconditional => 0,
            ScoreMode::Conditional => 2,
        }
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncond" => Ok(ScoreMode::Unconditional),
            "cond" => Ok(ScoreMode::Conditional),
            other => Err(Error::Config(format!("unknown score mode {other:?} (expected uncond or cond)"))),
        }
    }
}

/// A batch of single-channel frames `[B, 1, H, W]`, optionally with the
/// clean conditioning pair `[B, 2, H, W]` (current frame first).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch<S> {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<S>,
    pub cond: Option<Vec<S>>,
}

impl<S: Scalar> FrameBatch<S> {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Number of conditioning channels, zero without conditioning.
    pub fn cond_channels(&self) -> usize {
        let n = self.batch * self.plane();
        match &self.cond {
            Some(c) if n > 0 => c.len() / n,
            _ => 0,
        }
    }

    pub(crate) fn check(&self, cond_channels: usize) -> Result<()> {
        let n = self.batch * self.plane();
        if self.frames.len() != n {
            return Err(Error::ShapeMismatch { left: vec![self.batch, 1, self.height, self.width], right: vec![self.frames.len()] });
        }
        if let Some(c) = &self.cond {
            if c.len() != cond_channels * n {
                return Err(Error::ShapeMismatch {
                    left: vec![self.batch, cond_channels, self.height, self.width],
                    right: vec![c.len()],
                });
            }
        }
        Ok(())
    }
}

/// Preconditioned score network in either mode.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    mode: ScoreMode,
    net: UNet,
    pre: Preconditioner,
}

impl ScoreNetwork {
    /// `arch.in_channels` is overridden by the mode.
    pub fn new(mode: ScoreMode, mut arch: UNetConfig, pre: Preconditioner) -> Result<Self> {
        arch.in_channels = mode.input_channels();
        Ok(Self { mode, net: UNet::new(arch)?, pre })
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn preconditioner(&self) -> Preconditioner {
        self.pre
    }

    pub fn unet(&self) -> &UNet {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.layout().len()
    }

    pub fn init_params(&self, rng: &mut SimRng) -> Vec<f32> {
        self.net.layout().init(rng)
    }

    pub fn to_metadata(&self) -> Metadata {
        let mut m = self.net.config().to_metadata("arch.");
        m.insert("mode".into(), self.mode.as_str().into());
        m.insert("sigma_data".into(), format!("{:?}", self.pre.sigma_data));
        m
    }

    pub fn from_metadata(m: &Metadata) -> Result<Self> {
        let mode: ScoreMode = parse_value(m, "mode")?;
        let arch = UNetConfig::from_metadata(m, "arch.")?;
        Self::new(mode, arch, Preconditioner::new(parse_value(m, "sigma_data")?)?)
    }

    fn check_input<S: Scalar>(&self, x: &FrameBatch<S>, sigmas: &[f64]) -> Result<()> {
        x.check(2)?;
        match (self.mode, &x.cond) {
            (ScoreMode::Conditional, None) => {
                return Err(Error::Missing("conditional score network needs the two preceding frames".into()))
            }
            (ScoreMode::Unconditional, Some(_)) => {
                return Err(Error::Config("unconditional score network takes no conditioning frames".into()))
            }
            _ => {}
        }
        if sigmas.len() != x.batch {
            return Err(Error::ShapeMismatch { left: vec![x.batch], right: vec![sigmas.len()] });
        }
        let m = self.net.config().side_multiple();
        if !x.height.is_multiple_of(m) || !x.width.is_multiple_of(m) {
            return Err(Error::ShapeMismatch { left: vec![x.height, x.width], right: vec![m, m] });
        }
        Ok(())
    }

    /// Records `D(x; σ)` for a noisy batch on the tape.
    pub fn denoise_on_tape<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        p: &Bound,
        x: &FrameBatch<S>,
        sigmas: &[f64],
    ) -> Result<Var> {
        self.check_input(x, sigmas)?;
        let (b, h, w, plane) = (x.batch, x.height, x.width, x.plane());
        let cin = self.mode.input_channels();
        let mut input = Vec::with_capacity(b * cin * plane);
        for i in 0..b {
            let c_in = S::of(self.pre.c_in(sigmas[i]));
            input.extend(x.frames[i * plane..(i + 1) * plane].iter().map(|&v| v * c_in));
            if let Some(c) = &x.cond {
                input.extend_from_slice(&c[2 * i * plane..2 * (i + 1) * plane]);
            }
        }
        let input = t.constant(&[b, cin, h, w], input);
        let c_noise: Vec<f64> = sigmas.iter().map(|&s| c_noise(s)).collect();
        let raw = self.net.forward(t, p, input, &c_noise);
        let c_out: Vec<S> = sigmas.iter().map(|&s| S::of(self.pre.c_out(s))).collect();
        let scaled = t.scale_batch(raw, c_out);
        let skip: Vec<S> = (0..b * plane)
            .map(|k| x.frames[k] * S::of(self.pre.c_skip(sigmas[k / plane])))
            .collect();
        let skip = t.constant(&[b, 1, h, w], skip);
        Ok(t.add(skip, scaled))
    }

    /// `D(x; σ)` for a batch, with one σ per element.
    pub fn denoise(&self, params: &[f32], x: &FrameBatch<f32>, sigmas: &[f64]) -> Result<Vec<f32>> {
        let mut t = Tape::new();
        let p = self.net.layout().bind(&mut t, params, false);
        let d = self.denoise_on_tape(&mut t, &p, x, sigmas)?;
        Ok(t.into_value(d))
    }

    /// Single-frame convenience over [`ScoreNetwork::denoise`].
    pub fn denoise_field(
        &self,
        params: &[f32],
        x: &Field,
        sigma: f64,
        cond: Option<(&Field, &Field)>,
    ) -> Result<Field> {
        let s = x.shape();
        if s.channels != 1 {
            return Err(Error::ShapeMismatch { left: vec![1], right: vec![s.channels] });
        }
        let cond = match cond {
            Some((cur, prev)) => {
                for f in [cur, prev] {
                    if f.shape() != s {
                        return Err(Error::ShapeMismatch { left: s.dims(), right: f.shape().dims() });
                    }
                }
                Some([cur.values(), prev.values()].concat())
            }
            None => None,
        };
        let batch = FrameBatch { batch: 1, height: s.height, width: s.width, frames: x.values().to_vec(), cond };
        let d = self.denoise(params, &batch, &[sigma])?;
        Field::new(s, x.geometry(), d)
    }

    /// Weighted denoising loss on a batch whose noise has been drawn
    /// already: `noise` is standard normal and is scaled by each σ here.
    pub fn loss_on_tape<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        p: &Bound,
        clean: &FrameBatch<S>,
        sigmas: &[f64],
        noise: &[S],
    ) -> Result<Var> {
        clean.check(2)?;
        let plane = clean.plane();
        if noise.len() != clean.frames.len() {
            return Err(Error::ShapeMismatch { left: vec![clean.frames.len()], right: vec![noise.len()] });
        }
        let noisy = FrameBatch {
            frames: clean
                .frames
                .iter()
                .zip(noise)
                .enumerate()
                .map(|(k, (&x, &n))| x + n * S::of(sigmas[k / plane]))
                .collect(),
            ..clean.clone()
        };
        let d = self.denoise_on_tape(t, p, &noisy, sigmas)?;
        let weights = sigmas.iter().map(|&s| S::of(self.pre.loss_weight(s))).collect();
        Ok(t.weighted_mse(d, clean.frames.clone(), weights))
    }

    /// Draws `ln σ ~ N(p_mean, p_std²)` and Gaussian noise, returning the
    /// loss and its gradient with respect to every parameter.
    pub fn training_loss(
        &self,
        params: &[f32],
        clean: &FrameBatch<f32>,
        noise_dist: LogNormalSigma,
        rng: &mut SimRng,
    ) -> Result<(f64, Vec<f32>)> {
        let sigmas: Vec<f64> = (0..clean.batch).map(|_| noise_dist.sample(rng)).collect();
        let mut noise = vec![0.0f32; clean.frames.len()];
        rng::fill_normal_f32(rng, &mut noise, 1.0);
        let mut t = Tape::new();
        let p = self.net.layout().bind(&mut t, params, true);
        let loss = self.loss_on_tape(&mut t, &p, clean, &sigmas, &noise)?;
        let value = t.value(loss)[0] as f64;
        if !value.is_finite() {
            let sigma = sigmas.iter().copied().fold(f64::NAN, f64::max);
            return Err(Error::NonFiniteLoss { loss: value, sigma });
        }
        let grads = t.backward(loss);
        Ok((value, self.net.layout().gather(&p, &grads)))
    }
}

/// Training distribution of noise levels: `ln σ ~ N(p_mean, p_std²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalSigma {
    pub p_mean: f64,
    pub p_std: f64,
}

impl LogNormalSigma {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.p_mean + self.p_std * rng::normal(rng)).exp()
    }
}

/// Everything needed to train one score network.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub mode: ScoreMode,
    pub arch: UNetConfig,
    pub sigma_data: f64,
    pub noise: LogNormalSigma,
    pub train: TrainConfig,
}

impl DiffusionConfig {
    pub fn network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::new(self.mode, self.arch.clone(), Preconditioner::new(self.sigma_data)?)
    }

    fn snapshot(&self, net: &ScoreNetwork) -> Metadata {
        let mut m = net.to_metadata();
        m.insert("p_mean".into(), format!("{:?}", self.noise.p_mean));
        m.insert("p_std".into(), format!("{:?}", self.noise.p_std));
        m.extend(self.train.to_metadata("train."));
        m
    }
}

/// Stacks frames `indices` (and, in conditional mode, frames `n−1`, `n−2`
/// for each target `n`) into a batch.
pub fn gather_batch(ds: &TrajectoryDataset, indices: &[usize], mode: ScoreMode) -> Result<FrameBatch<f32>> {
    let s = ds.frame_shape();
    if s.channels != 1 {
        return Err(Error::ShapeMismatch { left: vec![1], right: vec![s.channels] });
    }
    let plane = s.plane();
    let mut frames = Vec::with_capacity(indices.len() * plane);
    let mut cond = (mode == ScoreMode::Conditional).then(|| Vec::with_capacity(2 * indices.len() * plane));
    for &n in indices {
        frames.extend_from_slice(ds.frame(n).values());
        if let Some(c) = cond.as_mut() {
            c.extend_from_slice(ds.frame(n - 1).values());
            c.extend_from_slice(ds.frame(n - 2).values());
        }
    }
    Ok(FrameBatch { batch: indices.len(), height: s.height, width: s.width, frames, cond })
}

/// Shuffled minibatches of the valid target indices for one epoch.
pub fn epoch_batches(first: usize, end: usize, batch: usize, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (first..end).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Steps per epoch for `targets` samples.
pub fn steps_per_epoch(targets: usize, batch: usize) -> usize {
    targets.div_ceil(batch)
}

/// Trains a score network on a standardized training split. `on_epoch`
/// runs after every epoch (periodic checkpointing); on divergence the
/// error is returned and the last state handed to `on_epoch` stands.
pub fn train(
    cfg: &DiffusionConfig,
    ds: &TrajectoryDataset,
    mut on_epoch: impl FnMut(usize, &TrainState) -> Result<()>,
) -> Result<ModelCheckpoint> {
    let net = cfg.network()?;
    let first = cfg.mode.history();
    if ds.len() <= first {
        return Err(Error::DatasetTooShort { frames: ds.len(), required: first + 1 });
    }
    let mut init_rng = rng::stream(cfg.train.seed, &[0x5c0e, 0]);
    let mut state = TrainState::new(net.init_params(&mut init_rng), &cfg.train)?;
    let mut batch_rng = rng::stream(cfg.train.seed, &[0x5c0e, 1]);
    let mut noise_rng = rng::stream(cfg.train.seed, &[0x5c0e, 2]);
    for epoch in 0..cfg.train.epochs {
        for indices in epoch_batches(first, ds.len(), cfg.train.batch_size, &mut batch_rng) {
            let batch = gather_batch(ds, &indices, cfg.mode)?;
            let (loss, grads) = net.training_loss(&state.params, &batch, cfg.noise, &mut noise_rng)?;
            state.apply(loss, &grads)?;
        }
        on_epoch(epoch, &state)?;
    }
    Ok(state.checkpoint("score", cfg.snapshot(&net)))
}

/// Rebuilds the network described by a score checkpoint.
pub fn network_from_checkpoint(ck: &ModelCheckpoint) -> Result<ScoreNetwork> {
    if ck.kind != "score" {
        return Err(Error::Malformed(format!("expected a score checkpoint, found {:?}", ck.kind)));
    }
    let net = ScoreNetwork::from_metadata(&ck.config)?;
    if net.param_count() != ck.params.len() {
        return Err(Error::ShapeMismatch { left: vec![net.param_count()], right: vec![ck.params.len()] });
    }
    Ok(net)
}
