//! Time-consistency discriminator: a noise-conditioned encoder that
//! scores whether a noisy candidate frame is the true successor of its
//! clean history, trained with cross-entropy against temporally displaced
//! negatives.
//!
//! Input channels are `[candidate, x^n, x^{n−1}, …, x^{n−m}]`.

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::autodiff::{Scalar, Tape, Var};
use crate::container::{parse_value, Metadata};
use crate::diffusion::{c_noise, FrameBatch, LogNormalSigma};
use crate::error::{Error, Result};
use crate::field::{Field, Geometry, TrajectoryDataset};
use crate::nn::{Bound, Encoder, EncoderConfig};
use crate::rng::{self, Rng, SimRng};
use crate::training::{ModelCheckpoint, TrainConfig, TrainState};

/// Probability clamp used when reporting `q`; the guidance path works on
/// the raw logit and never clamps.
pub const REPORT_EPS: f64 = 1e-6;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(logit)` clamped to `[ε, 1 − ε]`.
pub fn reported_probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(REPORT_EPS, 1.0 - REPORT_EPS)
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Encoder,
    history: usize,
}

/// Input gradient of the logit for each batch element, with the logits
/// themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub grad: Vec<f32>,
    pub logits: Vec<f64>,
}

impl Discriminator {
    /// `m` is the number of history frames beyond the current one;
    /// `arch.in_channels` is set to `m + 2`.
    pub fn new(mut arch: EncoderConfig, m: usize) -> Result<Self> {
        arch.in_channels = m + 2;
        Ok(Self { net: Encoder::new(arch)?, history: m })
    }

    pub fn m(&self) -> usize {
        self.history
    }

    pub fn encoder(&self) -> &Encoder {
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
        m.insert("m".into(), self.history.to_string());
        m
    }

    pub fn from_metadata(m: &Metadata) -> Result<Self> {
        Self::new(EncoderConfig::from_metadata(m, "arch.")?, parse_value(m, "m")?)
    }

    fn check_input(&self, x: &FrameBatch<f32>, sigmas: &[f64]) -> Result<()> {
        x.check(self.history + 1)?;
        if x.cond_channels() != self.history + 1 {
            return Err(Error::ShapeMismatch {
                left: vec![x.batch, self.history + 1, x.height, x.width],
                right: vec![x.batch, x.cond_channels(), x.height, x.width],
            });
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

    /// Logits `[B, 1]` for candidates `[B, 1, H, W]` and history
    /// `[B, m+1, H, W]` already on the tape.
    pub fn logit_on_tape<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, candidate: Var, history: Var, sigmas: &[f64]) -> Var {
        let x = t.concat(candidate, history);
        let c_noise: Vec<f64> = sigmas.iter().map(|&s| c_noise(s)).collect();
        self.net.forward(t, p, x, &c_noise)
    }

    fn record(&self, t: &mut Tape<f32>, params: &[f32], x: &FrameBatch<f32>, sigmas: &[f64], grad: bool) -> Result<(Var, Var)> {
        self.check_input(x, sigmas)?;
        let p = self.net.layout().bind(t, params, false);
        let (b, h, w) = (x.batch, x.height, x.width);
        let cand = t.leaf(&[b, 1, h, w], x.frames.clone(), grad);
        let hist = t.constant(&[b, self.history + 1, h, w], x.cond.clone().unwrap_or_default());
        Ok((cand, self.logit_on_tape(t, &p, cand, hist, sigmas)))
    }

    pub fn logits(&self, params: &[f32], x: &FrameBatch<f32>, sigmas: &[f64]) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let (_, z) = self.record(&mut t, params, x, sigmas, false)?;
        Ok(t.value(z).iter().map(|&v| v as f64).collect())
    }

    /// Consistency probabilities `q = sigmoid(logit)`.
    pub fn predict(&self, params: &[f32], x: &FrameBatch<f32>, sigmas: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(params, x, sigmas)?.into_iter().map(sigmoid).collect())
    }

    /// `∇_x log(D/(1−D))`, which is the gradient of the logit.
    pub fn guidance(&self, params: &[f32], x: &FrameBatch<f32>, sigmas: &[f64]) -> Result<Guidance> {
        let mut t = Tape::new();
        let (cand, z) = self.record(&mut t, params, x, sigmas, true)?;
        let logits: Vec<f64> = t.value(z).iter().map(|&v| v as f64).collect();
        let total = t.sum_all(z);
        let mut grads = t.backward(total);
        let grad = grads.take(cand).unwrap_or_else(|| vec![0.0; x.frames.len()]);
        let plane = x.plane();
        for (i, chunk) in grad.chunks(plane).enumerate() {
            if chunk.iter().any(|g| !g.is_finite()) || !logits[i].is_finite() {
                let norm = chunk.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
                return Err(Error::NonFiniteGuidance { sigma: sigmas[i], norm });
            }
        }
        Ok(Guidance { grad, logits })
    }

    fn field_batch(&self, x: &Field, history: &[&Field]) -> Result<FrameBatch<f32>> {
        let s = x.shape();
        if s.channels != 1 {
            return Err(Error::ShapeMismatch { left: vec![1], right: vec![s.channels] });
        }
        if history.len() != self.history + 1 {
            return Err(Error::ShapeMismatch { left: vec![self.history + 1], right: vec![history.len()] });
        }
        let mut cond = Vec::with_capacity(history.len() * s.len());
        for f in history {
            if f.shape() != s {
                return Err(Error::ShapeMismatch { left: s.dims(), right: f.shape().dims() });
            }
            cond.extend_from_slice(f.values());
        }
        Ok(FrameBatch { batch: 1, height: s.height, width: s.width, frames: x.values().to_vec(), cond: Some(cond) })
    }

    /// `q` for one candidate; `history` is `[x^n, x^{n−1}, …]`.
    pub fn predict_field(&self, params: &[f32], x: &Field, history: &[&Field], sigma: f64) -> Result<f64> {
        Ok(self.predict(params, &self.field_batch(x, history)?, &[sigma])?[0])
    }

    pub fn guidance_field(&self, params: &[f32], x: &Field, history: &[&Field], sigma: f64) -> Result<Field> {
        let g = self.guidance(params, &self.field_batch(x, history)?, &[sigma])?;
        Field::new(x.shape(), x.geometry(), g.grad)
    }
}

/// Integer offsets `l = round(N(μ, σ_step²))` for negatives `x^{n+l}`,
/// rejecting excluded offsets and indices outside the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampler {
    pub mu_step: f64,
    pub sigma_step: f64,
    pub exclusion: Vec<i64>,
}

impl Default for NegativeSampler {
    fn default() -> Self {
        Self { mu_step: 1.0, sigma_step: 2.0, exclusion: vec![1] }
    }
}

impl NegativeSampler {
    /// Offsets that reproduce a history frame (`l ∈ [−m, 0]`) are excluded
    /// as well; used for evaluation, where such copies would be detectable
    /// even without temporal structure.
    pub fn excluding_history(m: usize) -> Self {
        let mut s = Self::default();
        s.exclusion.extend(-(m as i64)..=0);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_step > 0.0 && self.sigma_step.is_finite() && self.mu_step.is_finite()) {
            return Err(Error::Config(format!("bad negative sampler ({}, {})", self.mu_step, self.sigma_step)));
        }
        if !self.exclusion.contains(&1) {
            return Err(Error::Config("negative offsets must exclude the true successor l = 1".into()));
        }
        Ok(())
    }

    /// Draws `l` such that `n + l ∈ [0, len)`. Returns `None` if no
    /// admissible offset is reachable in a bounded number of draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, len: usize) -> Option<i64> {
        for _ in 0..10_000 {
            let l = (self.mu_step + self.sigma_step * rng::normal(rng)).round() as i64;
            let idx = n as i64 + l;
            if !self.exclusion.contains(&l) && (0..len as i64).contains(&idx) {
                return Some(l);
            }
        }
        None
    }
}

/// A square window `side × side` with top-left corner `(y, x)`; indices
/// wrap around periodic axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub y: usize,
    pub x: usize,
    pub side: usize,
}

impl CropWindow {
    pub fn full(height: usize, width: usize) -> Self {
        Self { y: 0, x: 0, side: height.min(width) }
    }

    /// Side uniform over the multiples of `multiple` in `[H/2, H]` (H the
    /// shorter grid side), corner uniform; on a non-periodic height axis
    /// the window stays inside the grid.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, geometry: Geometry, multiple: usize) -> Self {
        let short = height.min(width);
        let lo = (short / 2).div_ceil(multiple) * multiple;
        let hi = short / multiple * multiple;
        let side = if lo > hi { hi } else { lo + multiple * rng.random_range(0..=(hi - lo) / multiple) };
        let y = if geometry.periodic_height() { rng.random_range(0..height) } else { rng.random_range(0..=height - side) };
        let x = rng.random_range(0..width);
        Self { y, x, side }
    }

    /// Copies the window out of one `height × width` plane.
    pub fn extract(&self, plane: &[f32], height: usize, width: usize, out: &mut Vec<f32>) {
        for r in 0..self.side {
            let row = &plane[((self.y + r) % height) * width..][..width];
            for c in 0..self.side {
                out.push(row[(self.x + c) % width]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub arch: EncoderConfig,
    pub m: usize,
    pub noise: LogNormalSigma,
    pub negatives: NegativeSampler,
    pub crop: bool,
    pub train: TrainConfig,
}

impl DiscriminatorConfig {
    pub fn network(&self) -> Result<Discriminator> {
        self.negatives.validate()?;
        Discriminator::new(self.arch.clone(), self.m)
    }

    fn snapshot(&self, d: &Discriminator) -> Metadata {
        let mut m = d.to_metadata();
        m.insert("p_mean".into(), format!("{:?}", self.noise.p_mean));
        m.insert("p_std".into(), format!("{:?}", self.noise.p_std));
        m.insert("neg.mu_step".into(), format!("{:?}", self.negatives.mu_step));
        m.insert("neg.sigma_step".into(), format!("{:?}", self.negatives.sigma_step));
        m.insert("crop".into(), self.crop.to_string());
        m.extend(self.train.to_metadata("train."));
        m
    }
}

/// What one training step saw; positives are `n+1`, negatives `n+l`, and
/// each pair shares its σ and the step's crop window.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub crop: CropWindow,
    /// `(n, l, σ)` per pair.
    pub pairs: Vec<(usize, i64, f64)>,
    pub loss: f64,
}

/// Labelled pairs: the positive `(n, 1)` and the negative `(n, l)` share
/// `σ`, noise is independent.
pub fn pair_batch(
    ds: &TrajectoryDataset,
    m: usize,
    pairs: &[(usize, i64, f64)],
    crop: CropWindow,
    rng: &mut SimRng,
) -> (FrameBatch<f32>, Vec<f64>, Vec<f32>) {
    let s = ds.frame_shape();
    let (h, w) = (s.height, s.width);
    let side = crop.side;
    let b = 2 * pairs.len();
    let mut frames = Vec::with_capacity(b * side * side);
    let mut cond = Vec::with_capacity(b * (m + 1) * side * side);
    let mut sigmas = Vec::with_capacity(b);
    let mut labels = Vec::with_capacity(b);
    for (offset, label) in [(None, 1.0f32), (Some(()), 0.0)] {
        for &(n, l, sigma) in pairs {
            let target = if offset.is_none() { n + 1 } else { (n as i64 + l) as usize };
            let start = frames.len();
            crop.extract(ds.frame(target).values(), h, w, &mut frames);
            for v in &mut frames[start..] {
                *v += (sigma * rng::normal(rng)) as f32;
            }
            for k in 0..=m {
                crop.extract(ds.frame(n - k).values(), h, w, &mut cond);
            }
            sigmas.push(sigma);
            labels.push(label);
        }
    }
    (FrameBatch { batch: b, height: side, width: side, frames, cond: Some(cond) }, sigmas, labels)
}

/// Cross-entropy training on a standardized split.
pub fn train_discriminator(
    cfg: &DiscriminatorConfig,
    ds: &TrajectoryDataset,
    mut on_step: impl FnMut(&StepRecord),
    mut on_epoch: impl FnMut(usize, &TrainState) -> Result<()>,
) -> Result<ModelCheckpoint> {
    let disc = cfg.network()?;
    let m = cfg.m;
    if ds.len() < m + 2 {
        return Err(Error::DatasetTooShort { frames: ds.len(), required: m + 2 });
    }
    let s = ds.frame_shape();
    if s.channels != 1 {
        return Err(Error::ShapeMismatch { left: vec![1], right: vec![s.channels] });
    }
    let layout = disc.encoder().layout();
    let mut state = TrainState::new(disc.init_params(&mut rng::stream(cfg.train.seed, &[0xd15c, 0])), &cfg.train)?;
    let mut order_rng = rng::stream(cfg.train.seed, &[0xd15c, 1]);
    let mut pair_rng = rng::stream(cfg.train.seed, &[0xd15c, 2]);
    let mut noise_rng = rng::stream(cfg.train.seed, &[0xd15c, 3]);
    let multiple = disc.encoder().config().side_multiple();
    for epoch in 0..cfg.train.epochs {
        // Anchors n need n − m ≥ 0 and n + 1 < len.
        for anchors in crate::diffusion::epoch_batches(m, ds.len() - 1, cfg.train.batch_size, &mut order_rng) {
            let crop = if cfg.crop {
                CropWindow::draw(&mut pair_rng, s.height, s.width, ds.geometry(), multiple)
            } else {
                CropWindow::full(s.height, s.width)
            };
            let mut pairs = Vec::with_capacity(anchors.len());
            for n in anchors {
                let l = cfg
                    .negatives
                    .sample(&mut pair_rng, n, ds.len())
                    .ok_or(Error::DatasetTooShort { frames: ds.len(), required: m + 3 })?;
                pairs.push((n, l, cfg.noise.sample(&mut pair_rng)));
            }
            let (batch, sigmas, labels) = pair_batch(ds, m, &pairs, crop, &mut noise_rng);
            let mut t = Tape::new();
            let p = layout.bind(&mut t, &state.params, true);
            let cand = t.constant(&[batch.batch, 1, batch.height, batch.width], batch.frames);
            let hist = t.constant(&[batch.batch, m + 1, batch.height, batch.width], batch.cond.unwrap_or_default());
            let z = disc.logit_on_tape(&mut t, &p, cand, hist, &sigmas);
            let loss = t.bce_with_logits(z, labels);
            let value = t.value(loss)[0] as f64;
            if !value.is_finite() {
                return Err(Error::Diverged { step: state.step() + 1 });
            }
            let grads = layout.gather(&p, &t.backward(loss));
            state.apply(value, &grads)?;
            on_step(&StepRecord { step: state.step(), crop, pairs, loss: value });
        }
        on_epoch(epoch, &state)?;
    }
    Ok(state.checkpoint("discriminator", cfg.snapshot(&disc)))
}

pub fn network_from_checkpoint(ck: &ModelCheckpoint) -> Result<Discriminator> {
    if ck.kind != "discriminator" {
        return Err(Error::Malformed(format!("expected a discriminator checkpoint, found {:?}", ck.kind)));
    }
    let d = Discriminator::from_metadata(&ck.config)?;
    if d.param_count() != ck.params.len() {
        return Err(Error::ShapeMismatch { left: vec![d.param_count()], right: vec![ck.params.len()] });
    }
    Ok(d)
}

/// Area under the ROC curve by the rank-sum statistic (ties share ranks).
pub fn auc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Exact two-sided binomial test of `successes` out of `trials` against
/// success probability 1/2.
pub fn binomial_test_half(successes: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, trials).expect("valid binomial");
    let lower = dist.cdf(successes);
    let upper = if successes == 0 { 1.0 } else { 1.0 - dist.cdf(successes - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

/// Held-out evaluation at a fixed σ: one positive and one negative per
/// anchor, negatives drawn with history offsets excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEval {
    pub sigma: f64,
    pub positive_q: Vec<f64>,
    pub negative_q: Vec<f64>,
}

impl ClassifierEval {
    pub fn auc(&self) -> f64 {
        auc(&self.positive_q, &self.negative_q)
    }

    /// Fraction of correct decisions at the 1/2 threshold, and its count.
    pub fn accuracy(&self) -> (f64, u64, u64) {
        let correct = self.positive_q.iter().filter(|&&q| q > 0.5).count() + self.negative_q.iter().filter(|&&q| q <= 0.5).count();
        let n = self.positive_q.len() + self.negative_q.len();
        (correct as f64 / n as f64, correct as u64, n as u64)
    }
}

pub fn evaluate_classifier(
    disc: &Discriminator,
    params: &[f32],
    ds: &TrajectoryDataset,
    anchors: &[usize],
    sigma: f64,
    seed: u64,
) -> Result<ClassifierEval> {
    let m = disc.m();
    let sampler = NegativeSampler::excluding_history(m);
    let mut rng = rng::stream(seed, &[0xe7a1]);
    let mut pairs = Vec::with_capacity(anchors.len());
    for &n in anchors {
        if n < m || n + 1 >= ds.len() {
            return Err(Error::Config(format!("anchor {n} outside [{m}, {})", ds.len() - 1)));
        }
        let l = sampler.sample(&mut rng, n, ds.len()).ok_or(Error::DatasetTooShort { frames: ds.len(), required: m + 3 })?;
        pairs.push((n, l, sigma));
    }
    let s = ds.frame_shape();
    let mut positive_q = Vec::new();
    let mut negative_q = Vec::new();
    for chunk in pairs.chunks(16) {
        let (batch, sigmas, labels) = pair_batch(ds, m, chunk, CropWindow::full(s.height, s.width), &mut rng);
        for (q, y) in disc.predict(params, &batch, &sigmas)?.into_iter().zip(labels) {
            if y == 1.0 { positive_q.push(q) } else { negative_q.push(q) }
        }
    }
    Ok(ClassifierEval { sigma, positive_q, negative_q })
}

/// Mean `q` over anchors for candidates at fixed offset `l` (or a random
/// frame of `pool` when `l` is `None`), at noise level σ.
pub fn mean_q_at_offset(
    disc: &Discriminator,
    params: &[f32],
    ds: &TrajectoryDataset,
    anchors: &[usize],
    offset: Option<i64>,
    sigma: f64,
    seed: u64,
) -> Result<f64> {
    let m = disc.m();
    let mut rng = rng::stream(seed, &[0x0ff5]);
    let mut total = 0.0;
    for &n in anchors {
        let target = match offset {
            Some(l) => n as i64 + l,
            None => loop {
                let k = rng.random_range(0..ds.len()) as i64;
                if (k - n as i64).abs() > 10 {
                    break k;
                }
            },
        };
        if n < m || !(0..ds.len() as i64).contains(&target) {
            return Err(Error::Config(format!("anchor {n} with target {target} outside the dataset")));
        }
        let mut x = ds.frame(target as usize).values().to_vec();
        for v in &mut x {
            *v += (sigma * rng::normal(&mut rng)) as f32;
        }
        let x = Field::new(ds.frame_shape(), ds.geometry(), x)?;
        let hist: Vec<&Field> = (0..=m).map(|k| ds.frame(n - k)).collect();
        total += disc.predict_field(params, &x, &hist, sigma)?;
    }
    Ok(total / anchors.len().max(1) as f64)
}
