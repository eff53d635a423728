//! Stochastic second-order sampler with churn and time-consistency
//! guidance in both solver stages, plus autoregressive rollout and
//! ensemble forecast drivers.

use rayon::prelude::*;

use crate::diffusion::{FrameBatch, NoiseSchedule, ScoreMode, ScoreNetwork};
use crate::discriminator::{reported_probability, Discriminator};
use crate::error::{Error, Result};
use crate::field::{Field, FrameShape, Geometry, Split, TrajectoryDataset};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub s_churn: f64,
    pub s_noise: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    pub lambda: f64,
    pub guided: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_churn >= 0.0 && self.s_noise >= 0.0 && self.s_tmin <= self.s_tmax) {
            return Err(Error::Config(format!(
                "bad churn parameters S_churn={} S_noise={} S_tmin={} S_tmax={}",
                self.s_churn, self.s_noise, self.s_tmin, self.s_tmax
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::Config(format!("guidance strength must be finite, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Churn coefficient of step `i`.
    pub fn gamma(&self, i: usize) -> f64 {
        let t = self.schedule.sigmas()[i];
        if (self.s_tmin..=self.s_tmax).contains(&t) {
            (self.s_churn / self.schedule.steps() as f64).min(std::f64::consts::SQRT_2 - 1.0)
        } else {
            0.0
        }
    }

    /// Guidance weight at noise level `t`. Constant; the single place a
    /// time-dependent weight would enter.
    pub fn guidance_weight(&self, _t: f64) -> f64 {
        self.lambda
    }
}

/// The two most recent clean frames in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    pub current: Field,
    pub previous: Field,
    pub step: usize,
}

impl RolloutState {
    pub fn new(current: Field, previous: Field) -> Result<Self> {
        if current.shape() != previous.shape() || current.shape().channels != 1 {
            return Err(Error::ShapeMismatch { left: current.shape().dims(), right: previous.shape().dims() });
        }
        Ok(Self { current, previous, step: 0 })
    }

    /// Frames `n` and `n−1` of a dataset.
    pub fn from_dataset(ds: &TrajectoryDataset, n: usize) -> Result<Self> {
        if n == 0 || n >= ds.len() {
            return Err(Error::Config(format!("initial index {n} needs a predecessor inside {} frames", ds.len())));
        }
        Self::new(ds.frame(n).clone(), ds.frame(n - 1).clone())
    }

    fn advance(&mut self, next: Field) {
        self.previous = std::mem::replace(&mut self.current, next);
        self.step += 1;
    }

    fn history(&self) -> Vec<f32> {
        [self.current.values(), self.previous.values()].concat()
    }
}

/// Denoiser `D(x; σ)` of one frame given the rollout history.
pub trait Denoiser: Sync {
    fn denoise(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<Vec<f32>>;
}

/// Source of the guidance gradient `∇_x logit` and the logit itself.
pub trait Guide: Sync {
    fn logit_gradient(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<(Vec<f32>, f64)>;
    fn logit(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<f64>;
}

/// A score network bound to its inference parameters.
#[derive(Debug, Clone, Copy)]
pub struct ScoreModel<'a> {
    pub net: &'a ScoreNetwork,
    pub params: &'a [f32],
}

impl Denoiser for ScoreModel<'_> {
    fn denoise(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<Vec<f32>> {
        let s = state.current.shape();
        let cond = (self.net.mode() == ScoreMode::Conditional).then(|| state.history());
        let batch = FrameBatch { batch: 1, height: s.height, width: s.width, frames: x.to_vec(), cond };
        self.net.denoise(self.params, &batch, &[sigma])
    }
}

/// A discriminator bound to its inference parameters; only `m = 1` fits
/// the two-frame rollout window.
#[derive(Debug, Clone, Copy)]
pub struct DiscModel<'a> {
    pub net: &'a Discriminator,
    pub params: &'a [f32],
}

impl DiscModel<'_> {
    fn batch(&self, x: &[f32], state: &RolloutState) -> Result<FrameBatch<f32>> {
        if self.net.m() != 1 {
            return Err(Error::Config(format!("rollout guidance needs m = 1, discriminator has m = {}", self.net.m())));
        }
        let s = state.current.shape();
        Ok(FrameBatch { batch: 1, height: s.height, width: s.width, frames: x.to_vec(), cond: Some(state.history()) })
    }
}

impl Guide for DiscModel<'_> {
    fn logit_gradient(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<(Vec<f32>, f64)> {
        let g = self.net.guidance(self.params, &self.batch(x, state)?, &[sigma])?;
        Ok((g.grad, g.logits[0]))
    }

    fn logit(&self, x: &[f32], sigma: f64, state: &RolloutState) -> Result<f64> {
        Ok(self.net.logits(self.params, &self.batch(x, state)?, &[sigma])?[0])
    }
}

/// Per-step instrumentation of one call to [`sample_next`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleTrace {
    /// Guidance gradient evaluations per step.
    pub guidance_calls: Vec<u32>,
    /// Denoiser evaluations per step.
    pub denoise_calls: Vec<u32>,
    /// Churned noise level `t̂_i` per step.
    pub t_hat: Vec<f64>,
    /// Reported consistency probability at `(x̂_i, t̂_i)` per step, when a
    /// discriminator is available.
    pub q: Vec<f64>,
}

fn check_finite(x: &[f32], step: usize, stage: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteSample { step, stage })
    }
}

/// ODE slope `(x − D)/t + λ·(−t·∇logit)`; the guidance term is skipped
/// entirely when its weight is zero.
fn slope(x: &[f32], denoised: &[f32], t: f64, lambda: f64, grad: Option<&[f32]>) -> Vec<f64> {
    let mut s: Vec<f64> = x.iter().zip(denoised).map(|(&x, &d)| (x as f64 - d as f64) / t).collect();
    if let Some(g) = grad {
        if lambda != 0.0 {
            for (s, &g) in s.iter_mut().zip(g) {
                *s += lambda * (-t * g as f64);
            }
        }
    }
    s
}

/// Draws `x^{n+1}` given the rollout state. With `cfg.guided` set, `guide`
/// must be present and its gradient enters both solver stages; without it
/// a present `guide` is only used to record `q` in the trace.
pub fn sample_next(
    score: &dyn Denoiser,
    guide: Option<&dyn Guide>,
    state: &RolloutState,
    cfg: &SamplerConfig,
    rng: &mut SimRng,
    mut trace: Option<&mut SampleTrace>,
) -> Result<Field> {
    cfg.validate()?;
    if cfg.guided && guide.is_none() {
        return Err(Error::Missing("guided sampling needs a discriminator".into()));
    }
    let shape = state.current.shape();
    let sigmas = cfg.schedule.sigmas();
    let n_steps = cfg.schedule.steps();
    let len = shape.len();
    let mut x = vec![0.0f32; len];
    rng::fill_normal_f32(rng, &mut x, sigmas[0] as f32);
    let mut eps = vec![0.0f32; len];
    for i in 0..n_steps {
        let (t, t_next) = (sigmas[i], sigmas[i + 1]);
        rng::fill_normal_f32(rng, &mut eps, cfg.s_noise as f32);
        let t_hat = t + cfg.gamma(i) * t;
        let churn = (t_hat * t_hat - t * t).max(0.0).sqrt();
        let x_hat: Vec<f32> = x.iter().zip(&eps).map(|(&x, &e)| (x as f64 + churn * e as f64) as f32).collect();
        check_finite(&x_hat, i, "churn")?;
        let mut calls = (0u32, 0u32);

        let d = score.denoise(&x_hat, t_hat, state)?;
        calls.1 += 1;
        let (grad, logit) = match (cfg.guided, guide) {
            (true, Some(g)) => {
                let (grad, z) = g.logit_gradient(&x_hat, t_hat, state)?;
                calls.0 += 1;
                (Some(grad), Some(z))
            }
            (false, Some(g)) if trace.is_some() => (None, Some(g.logit(&x_hat, t_hat, state)?)),
            _ => (None, None),
        };
        let s1 = slope(&x_hat, &d, t_hat, cfg.guidance_weight(t_hat), grad.as_deref());
        let h = t_next - t_hat;
        let mut x_next: Vec<f32> = x_hat.iter().zip(&s1).map(|(&x, &s)| (x as f64 + h * s) as f32).collect();
        check_finite(&x_next, i, "euler")?;

        if t_next != 0.0 {
            let d2 = score.denoise(&x_next, t_next, state)?;
            calls.1 += 1;
            let grad2 = if cfg.guided {
                let g = guide.expect("checked above");
                calls.0 += 1;
                Some(g.logit_gradient(&x_next, t_next, state)?.0)
            } else {
                None
            };
            let s2 = slope(&x_next, &d2, t_next, cfg.guidance_weight(t_next), grad2.as_deref());
            x_next = x_hat
                .iter()
                .zip(s1.iter().zip(&s2))
                .map(|(&x, (&a, &b))| (x as f64 + h * (0.5 * a + 0.5 * b)) as f32)
                .collect();
            check_finite(&x_next, i, "heun")?;
        }
        x = x_next;
        if let Some(tr) = trace.as_deref_mut() {
            tr.guidance_calls.push(calls.0);
            tr.denoise_calls.push(calls.1);
            tr.t_hat.push(t_hat);
            if let Some(z) = logit {
                tr.q.push(reported_probability(z));
            }
        }
    }
    Field::new(shape, state.current.geometry(), x).map_err(|_| Error::NonFiniteSample { step: n_steps, stage: "output" })
}

/// Autoregressive rollout of `steps` frames; the RNG of frame `k` is the
/// stream `(cfg.seed, k)`.
pub fn rollout(
    score: &dyn Denoiser,
    guide: Option<&dyn Guide>,
    init: &RolloutState,
    steps: usize,
    cfg: &SamplerConfig,
    dt_physical: f64,
) -> Result<TrajectoryDataset> {
    let shape = init.current.shape();
    let geometry = init.current.geometry();
    let mut state = init.clone();
    let mut frames = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut rng = rng::stream(cfg.seed, &[k as u64]);
        let next = sample_next(score, guide, &state, cfg, &mut rng, None)
            .map_err(|e| Error::Rollout { frame: k, source: Box::new(e) })?;
        frames.push(next.clone());
        state.advance(next);
    }
    TrajectoryDataset::new(shape, geometry, frames, dt_physical, Split::Test)
}

/// Seed of member `b` of forecast `f`.
pub fn member_seed(root: u64, forecast: usize, member: usize) -> u64 {
    rng::derive_seed(root, &[0xf0ca, forecast as u64, member as u64])
}

/// `lead`-step rollouts for every initial state and member, indexed
/// `[forecast][member][lead]`. Members run in parallel on the current
/// thread pool; results do not depend on the pool size.
pub fn ensemble_forecast(
    score: &dyn Denoiser,
    guide: Option<&dyn Guide>,
    inits: &[RolloutState],
    members: usize,
    lead: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<Vec<Field>>>> {
    let jobs: Vec<(usize, usize)> = (0..inits.len()).flat_map(|f| (0..members).map(move |b| (f, b))).collect();
    let runs: Vec<Result<Vec<Field>>> = jobs
        .par_iter()
        .map(|&(f, b)| {
            let member_cfg = SamplerConfig { seed: member_seed(cfg.seed, f, b), ..cfg.clone() };
            Ok(rollout(score, guide, &inits[f], lead, &member_cfg, 1.0)?.frames().to_vec())
        })
        .collect();
    let mut out: Vec<Vec<Vec<Field>>> = (0..inits.len()).map(|_| Vec::with_capacity(members)).collect();
    for ((f, _), run) in jobs.into_iter().zip(runs) {
        out[f].push(run?);
    }
    Ok(out)
}

/// Frame shape helper for synthetic tests and tools.
pub fn zero_state(shape: FrameShape, geometry: Geometry) -> RolloutState {
    RolloutState { current: Field::zeros(shape, geometry), previous: Field::zeros(shape, geometry), step: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Exact denoiser of independent `N(mu, s²)` pixels.
    struct GaussianTarget {
        mu: f64,
        s: f64,
    }

    impl Denoiser for GaussianTarget {
        fn denoise(&self, x: &[f32], sigma: f64, _: &RolloutState) -> Result<Vec<f32>> {
            let (s2, v) = (self.s * self.s, sigma * sigma);
            Ok(x.iter().map(|&x| ((s2 * x as f64 + v * self.mu) / (s2 + v)) as f32).collect())
        }
    }

    /// Noisy-input log-likelihood ratio for an observation `target` of
    /// a unit Gaussian prior with unit observation noise; guiding the
    /// `N(0, 1)` target with weight 1 yields `N(target/2, 1/2)` exactly.
    struct GaussianGuide {
        target: f64,
        calls: AtomicUsize,
    }

    impl Guide for GaussianGuide {
        fn logit_gradient(&self, x: &[f32], sigma: f64, _: &RolloutState) -> Result<(Vec<f32>, f64)> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let v = sigma * sigma;
            let g = x.iter().map(|&x| ((self.target * (1.0 + v) - x as f64) / ((1.0 + v) * (1.0 + 2.0 * v))) as f32).collect();
            Ok((g, 0.0))
        }

        fn logit(&self, _: &[f32], _: f64, _: &RolloutState) -> Result<f64> {
            Ok(0.0)
        }
    }

    fn cfg(steps: usize, lambda: f64, guided: bool) -> SamplerConfig {
        SamplerConfig {
            schedule: NoiseSchedule::new(0.002, 80.0, 7.0, steps).unwrap(),
            s_churn: 55.0,
            s_noise: 1.005,
            s_tmin: 0.0,
            s_tmax: 1000.0,
            lambda,
            guided,
            seed: 3,
        }
    }

    fn state(side: usize) -> RolloutState {
        zero_state(FrameShape::new(1, side, side), Geometry::PeriodicBoth)
    }

    #[test]
    fn gamma_follows_the_churn_formula() {
        let mut c = cfg(50, 0.0, false);
        assert!((c.gamma(0) - (55.0f64 / 50.0).min(2f64.sqrt() - 1.0)).abs() < 1e-15);
        c.s_churn = 10.0;
        assert!((c.gamma(3) - 0.2).abs() < 1e-15);
        c.s_tmax = 1.0;
        let sig = c.schedule.sigmas().to_vec();
        for i in 0..50 {
            assert_eq!(c.gamma(i) > 0.0, sig[i] <= 1.0);
        }
        let mut r = rng::rng_from_seed(1);
        use crate::rng::Rng;
        for _ in 0..200 {
            let n = r.random_range(2..120);
            let c = SamplerConfig {
                schedule: NoiseSchedule::new(0.002, 80.0, 7.0, n).unwrap(),
                s_churn: r.random_range(0.0..100.0),
                s_tmin: r.random_range(0.0..1.0),
                s_tmax: r.random_range(1.0..100.0),
                ..cfg(2, 0.0, false)
            };
            for i in 0..n {
                let t = c.schedule.sigmas()[i];
                let want = if t >= c.s_tmin && t <= c.s_tmax { (c.s_churn / n as f64).min(2f64.sqrt() - 1.0) } else { 0.0 };
                assert_eq!(c.gamma(i), want);
            }
        }
    }

    #[test]
    fn zero_lambda_is_bit_identical_to_unguided() {
        let target = GaussianTarget { mu: 0.3, s: 0.7 };
        let guide = GaussianGuide { target: 5.0, calls: AtomicUsize::new(0) };
        let st = state(4);
        let a = sample_next(&target, None, &st, &cfg(20, 0.0, false), &mut rng::rng_from_seed(9), None).unwrap();
        let mut tr = SampleTrace::default();
        let b = sample_next(&target, Some(&guide), &st, &cfg(20, 0.0, true), &mut rng::rng_from_seed(9), Some(&mut tr)).unwrap();
        assert_eq!(a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(guide.calls.load(Ordering::Relaxed), 2 * 19 + 1);
        let mut want = vec![2u32; 19];
        want.push(1);
        assert_eq!(tr.guidance_calls, want);
        assert_eq!(tr.denoise_calls, want);
        assert_eq!(tr.q.len(), 20);
        // A nonzero weight changes the result.
        let c = sample_next(&target, Some(&guide), &st, &cfg(20, 1.0, true), &mut rng::rng_from_seed(9), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn guidance_shifts_samples_toward_the_guide() {
        let target = GaussianTarget { mu: 0.0, s: 1.0 };
        let guide = GaussianGuide { target: 2.0, calls: AtomicUsize::new(0) };
        let st = state(8);
        let mut c = cfg(100, 1.0, true);
        c.s_churn = 10.0;
        let mut r = rng::rng_from_seed(4);
        let mut xs = Vec::new();
        for _ in 0..20 {
            xs.extend(sample_next(&target, Some(&guide), &st, &c, &mut r, None).unwrap().values().iter().map(|&v| v as f64));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 4.0 * (0.5 / n).sqrt(), "guided mean {mean}");
        assert!((var - 0.5).abs() < 4.0 * 0.5 * (2.0 / n).sqrt() + 0.01, "guided variance {var}");
    }

    #[test]
    fn deterministic_heun_differs_only_through_initial_noise() {
        let target = GaussianTarget { mu: 0.0, s: 1.0 };
        let mut c = cfg(50, 0.0, false);
        c.s_tmax = 1e-6;
        assert!((0..50).all(|i| c.gamma(i) == 0.0));
        let st = state(4);
        let a = sample_next(&target, None, &st, &c, &mut rng::rng_from_seed(1), None).unwrap();
        let b = sample_next(&target, None, &st, &c, &mut rng::rng_from_seed(1), None).unwrap();
        assert_eq!(a, b);
        // The probability-flow map of a unit Gaussian is x_T ↦ x_T/√(1+σ_max²);
        // Heun at 50 steps is within 1% of it.
        let mut r = rng::rng_from_seed(1);
        let mut x_t = vec![0.0f32; 16];
        rng::fill_normal_f32(&mut r, &mut x_t, 80.0);
        for (v, x) in a.values().iter().zip(&x_t) {
            let exact = *x as f64 / (1.0f64 + 6400.0).sqrt();
            assert!((*v as f64 - exact).abs() < 0.01 * exact.abs() + 1e-4, "{v} vs {exact}");
        }
    }

    #[test]
    fn unguided_sampler_recovers_a_gaussian_target() {
        let target = GaussianTarget { mu: 0.5, s: 0.8 };
        let st = zero_state(FrameShape::new(1, 10, 10), Geometry::PeriodicBoth);
        // Discretization bias of the variance stays below the Monte-Carlo
        // error with 100 steps and mild churn.
        let mut c = cfg(100, 0.0, false);
        c.s_churn = 10.0;
        c.s_noise = 1.0;
        let mut r = rng::rng_from_seed(12);
        let mut xs = Vec::new();
        for _ in 0..100 {
            xs.extend(sample_next(&target, None, &st, &c, &mut r, None).unwrap().values().iter().map(|&v| v as f64));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 10k samples: standard errors 0.008 (mean) and 0.009 (variance).
        assert!((mean - 0.5).abs() < 4.0 * 0.8 / n.sqrt(), "mean {mean}");
        assert!((var - 0.64).abs() < 4.0 * 0.64 * (2.0 / n).sqrt(), "var {var}");
    }

    #[test]
    fn guided_without_guide_is_an_error() {
        let target = GaussianTarget { mu: 0.0, s: 1.0 };
        let r = sample_next(&target, None, &state(2), &cfg(4, 1.0, true), &mut rng::rng_from_seed(0), None);
        assert!(matches!(r, Err(Error::Missing(_))));
    }

    struct Exploding;

    impl Denoiser for Exploding {
        fn denoise(&self, x: &[f32], _: f64, _: &RolloutState) -> Result<Vec<f32>> {
            Ok(vec![f32::NAN; x.len()])
        }
    }

    #[test]
    fn non_finite_states_are_reported_with_frame_and_stage() {
        let r = rollout(&Exploding, None, &state(2), 3, &cfg(4, 0.0, false), 1.0);
        match r {
            Err(Error::Rollout { frame: 0, source }) => {
                assert!(matches!(*source, Error::NonFiniteSample { step: 0, stage: "euler" }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rollouts_shift_the_window_and_ensembles_are_reproducible() {
        let target = GaussianTarget { mu: 0.0, s: 1.0 };
        let st = state(2);
        assert!(rollout(&target, None, &st, 0, &cfg(4, 0.0, false), 0.5).unwrap().is_empty());
        let traj = rollout(&target, None, &st, 3, &cfg(4, 0.0, false), 0.5).unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(traj.dt_physical(), 0.5);
        let inits = vec![st.clone(), st.clone()];
        let a = ensemble_forecast(&target, None, &inits, 3, 2, &cfg(4, 0.0, false)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let b = pool.install(|| ensemble_forecast(&target, None, &inits, 3, 2, &cfg(4, 0.0, false))).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a[0].len(), a[0][0].len()), (2, 3, 2));
        assert_ne!(a[0][0], a[0][1]);
        assert_ne!(a[0][0], a[1][0]);
        // One member reproduces a single rollout with that member's seed.
        let single = ensemble_forecast(&target, None, &inits[..1], 1, 2, &cfg(4, 0.0, false)).unwrap();
        let c = SamplerConfig { seed: member_seed(3, 0, 0), ..cfg(4, 0.0, false) };
        assert_eq!(single[0][0], rollout(&target, None, &st, 2, &c, 1.0).unwrap().frames());
    }
}
