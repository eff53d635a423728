//! Parameter storage, layers, optimizer and EMA.
//!
//! Parameters live in one flat vector described by a [`ParamLayout`].
//! A forward pass binds the vector onto a tape as leaves ([`Bound`]), so
//! the same network code runs on live weights, EMA weights or `f64`
//! copies for gradient checks.

mod encoder;
mod unet;

pub use encoder::{Encoder, EncoderConfig};
pub use unet::{UNet, UNetConfig};

use std::fmt::Write as _;

use crate::autodiff::{Grads, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{Rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let entry = ParamEntry { name: name.into(), shape: shape.to_vec(), offset: self.total, init };
        self.total += entry.len();
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Draws initial values. Values are generated in `f64` and rounded, so
    /// `f32` and `f64` instantiations agree to rounding.
    pub fn init<S: Scalar>(&self, rng: &mut SimRng) -> Vec<S> {
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            match e.init {
                Init::Zeros => out.extend(std::iter::repeat_n(S::zero(), e.len())),
                Init::Ones => out.extend(std::iter::repeat_n(S::one(), e.len())),
                Init::Uniform(b) => out.extend((0..e.len()).map(|_| S::of(rng.random_range(-b..=b)))),
            }
        }
        out
    }

    /// One line per tensor: `name shape`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "{} {}", e.name, dims.join("x"));
        }
        s
    }

    pub fn bind<S: Scalar>(&self, tape: &mut Tape<S>, values: &[S], needs_grad: bool) -> Bound {
        assert_eq!(values.len(), self.total, "parameter vector length");
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(&e.shape, values[e.offset..e.offset + e.len()].to_vec(), needs_grad))
            .collect();
        Bound { vars }
    }

    /// Flattens per-tensor gradients back into layout order; tensors that
    /// received no gradient contribute zeros.
    pub fn gather<S: Scalar>(&self, bound: &Bound, grads: &Grads<S>) -> Vec<S> {
        let mut out = vec![S::zero(); self.total];
        for (e, v) in self.entries.iter().zip(&bound.vars) {
            if let Some(g) = grads.get(*v) {
                out[e.offset..e.offset + e.len()].copy_from_slice(g);
            }
        }
        out
    }
}

/// Tape leaves for every parameter tensor of one layout.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Largest group count not above 8 that divides `channels`.
pub fn groups_for(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, kernel: usize, zero: bool) -> Self {
        let fan = cin * kernel * kernel;
        let init = if zero { Init::Zeros } else { Init::Uniform(fan_in_bound(fan)) };
        let w = layout.add(format!("{name}.weight"), &[cout, fan], init);
        let b = layout.add(format!("{name}.bias"), &[cout], Init::Zeros);
        Self { w, b, cin, cout, kernel }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, periodic_h: bool) -> Var {
        t.conv2d(x, p.var(self.w), p.var(self.b), self.kernel, periodic_h)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    w: ParamId,
    b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize, zero: bool) -> Self {
        let init = if zero { Init::Zeros } else { Init::Uniform(fan_in_bound(inputs)) };
        let w = layout.add(format!("{name}.weight"), &[outputs, inputs], init);
        let b = layout.add(format!("{name}.bias"), &[outputs], Init::Zeros);
        Self { w, b, inputs, outputs }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Var {
        t.linear(x, p.var(self.w), p.var(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl Norm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize) -> Self {
        let gamma = layout.add(format!("{name}.gamma"), &[channels], Init::Ones);
        let beta = layout.add(format!("{name}.beta"), &[channels], Init::Zeros);
        Self { gamma, beta, groups: groups_for(channels) }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Var {
        t.group_norm(x, p.var(self.gamma), p.var(self.beta), self.groups)
    }
}

/// Pre-activation residual block with an additive per-channel embedding.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    emb: Dense,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, emb_dim: usize) -> Self {
        Self {
            norm1: Norm::new(layout, &format!("{name}.norm1"), cin),
            conv1: Conv::new(layout, &format!("{name}.conv1"), cin, cout, 3, false),
            emb: Dense::new(layout, &format!("{name}.emb"), emb_dim, cout, false),
            norm2: Norm::new(layout, &format!("{name}.norm2"), cout),
            conv2: Conv::new(layout, &format!("{name}.conv2"), cout, cout, 3, false),
            skip: (cin != cout).then(|| Conv::new(layout, &format!("{name}.skip"), cin, cout, 1, false)),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, emb: Var, periodic_h: bool) -> Var {
        let h = self.norm1.forward(t, p, x);
        let h = t.silu(h);
        let h = self.conv1.forward(t, p, h, periodic_h);
        let e = self.emb.forward(t, p, emb);
        let h = t.add_channel(h, e);
        let h = self.norm2.forward(t, p, h);
        let h = t.silu(h);
        let h = self.conv2.forward(t, p, h, periodic_h);
        let s = match &self.skip {
            Some(c) => c.forward(t, p, x, periodic_h),
            None => x,
        };
        t.add(s, h)
    }
}

/// Sinusoidal features of a scalar noise level followed by a two-layer MLP.
#[derive(Debug, Clone)]
pub struct NoiseEmbedding {
    features: usize,
    fc1: Dense,
    fc2: Dense,
}

pub const MAX_POSITIONS: f64 = 10_000.0;

/// `[cos(c f_0) .. cos(c f_{n-1}), sin(c f_0) .. sin(c f_{n-1})]` with
/// geometric frequencies from 1 down to `1/MAX_POSITIONS`.
pub fn sinusoidal<S: Scalar>(c_noise: &[f64], features: usize) -> Vec<S> {
    let half = features / 2;
    let mut out = Vec::with_capacity(c_noise.len() * features);
    for &c in c_noise {
        let freqs = (0..half).map(|i| (1.0 / MAX_POSITIONS).powf(i as f64 / (half.max(2) - 1) as f64));
        let args: Vec<f64> = freqs.map(|f| c * f).collect();
        out.extend(args.iter().map(|a| S::of(a.cos())));
        out.extend(args.iter().map(|a| S::of(a.sin())));
    }
    out
}

impl NoiseEmbedding {
    pub fn new(layout: &mut ParamLayout, name: &str, features: usize, dim: usize) -> Self {
        Self {
            features,
            fc1: Dense::new(layout, &format!("{name}.fc1"), features, dim, false),
            fc2: Dense::new(layout, &format!("{name}.fc2"), dim, dim, false),
        }
    }

    /// Returns the activated embedding `[B, dim]`.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, c_noise: &[f64]) -> Var {
        let feats = t.constant(&[c_noise.len(), self.features], sinusoidal(c_noise, self.features));
        let h = self.fc1.forward(t, p, feats);
        let h = t.silu(h);
        let h = self.fc2.forward(t, p, h);
        t.silu(h)
    }
}

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamW {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = b1 * self.m[i] as f64 + (1.0 - b1) * g;
            let v = b2 * self.v[i] as f64 + (1.0 - b2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let p = params[i] as f64;
            let upd = (m / c1) / ((v / c2).sqrt() + self.eps) + self.weight_decay * p;
            params[i] = (p - self.lr * upd) as f32;
        }
    }
}

/// Exponential moving average of parameters: `ema ← r·ema + (1−r)·param`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub rate: f64,
    pub shadow: Vec<f32>,
}

impl Ema {
    pub fn new(rate: f64, init: &[f32]) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("EMA rate must lie in [0, 1], got {rate}")));
        }
        Ok(Self { rate, shadow: init.to_vec() })
    }

    pub fn update(&mut self, params: &[f32]) {
        let r = self.rate;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = (r * *s as f64 + (1.0 - r) * p as f64) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn ema_matches_closed_form() {
        let r = 0.9;
        let seq: Vec<f32> = vec![1.0, -2.0, 0.5, 3.0, 4.0];
        let p0 = 0.25f32;
        let mut ema = Ema::new(r, &[p0]).unwrap();
        for p in &seq {
            ema.update(&[*p]);
        }
        let t = seq.len() as i32;
        let closed = r.powi(t) * p0 as f64
            + (1.0 - r) * seq.iter().enumerate().map(|(i, p)| r.powi(t - 1 - i as i32) * *p as f64).sum::<f64>();
        assert!((ema.shadow[0] as f64 - closed).abs() < 1e-6);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 1e-2, 0.0);
        let mut p = vec![1.0f32, -1.0];
        opt.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-6 && (p[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.1, 0.5);
        let mut p = vec![2.0f32];
        opt.update(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-6);
    }

    #[test]
    fn layout_offsets_and_init() {
        let mut l = ParamLayout::new();
        let a = l.add("a", &[2, 3], Init::Ones);
        let b = l.add("b", &[4], Init::Uniform(0.1));
        assert_eq!(l.len(), 10);
        assert_eq!(l.entry(b).offset, 6);
        let v: Vec<f64> = l.init(&mut rng::rng_from_seed(0));
        assert!(v[..6].iter().all(|x| *x == 1.0));
        assert!(v[6..].iter().all(|x| x.abs() <= 0.1));
        assert_eq!(l.entry(a).name, "a");
        assert_eq!(l.describe(), "a 2x3\nb 4\n");
    }

    #[test]
    fn group_counts_divide_channels() {
        for c in [1, 3, 4, 6, 16, 48, 96, 128] {
            assert_eq!(c % groups_for(c), 0);
        }
        assert_eq!(groups_for(96), 8);
    }
}
