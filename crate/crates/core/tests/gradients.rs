//! Reverse-mode gradients of every layer type, of both training losses and
//! of the discriminator logit against central finite differences.
//!
//! 64-bit tapes must agree to 1e-6 relative; 32-bit tapes are compared
//! with the 64-bit differences at 1e-3 relative.

use dynaguide_core::autodiff::{Scalar, Tape, Var};
use dynaguide_core::diffusion::{FrameBatch, Preconditioner, ScoreMode, ScoreNetwork};
use dynaguide_core::discriminator::Discriminator;
use dynaguide_core::field::Geometry;
use dynaguide_core::nn::{Bound, Conv, Dense, EncoderConfig, NoiseEmbedding, Norm, ParamLayout, ResBlock, UNetConfig};
use dynaguide_core::rng;

/// A differentiable scalar function of parameters and (optionally) one input.
trait Case {
    fn name(&self) -> &str;
    fn layout(&self) -> &ParamLayout;
    /// Shape of the differentiable input, if any.
    fn input_shape(&self) -> Option<Vec<usize>>;
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var;
}

fn random(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut r = rng::rng_from_seed(seed);
    (0..n).map(|_| scale * rng::normal(&mut r)).collect()
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Squared error against a fixed random target, batch entries weighted
/// unequally so per-sample reductions are exercised.
fn mse_head<S: Scalar>(t: &mut Tape<S>, y: Var, seed: u64) -> Var {
    let n = t.value(y).len();
    let b = t.shape(y)[0];
    let target = random(n, seed, 1.0).into_iter().map(S::of).collect();
    let weights = (0..b).map(|i| S::of(1.0 + 0.5 * i as f64)).collect();
    t.weighted_mse(y, target, weights)
}

struct Inputs {
    params: Vec<f64>,
    x: Option<Vec<f64>>,
}

fn inputs<C: Case>(case: &C, seed: u64) -> Inputs {
    let mut params: Vec<f64> = case.layout().init(&mut rng::rng_from_seed(seed));
    // Zero-initialized entries (biases, output layers) would hide terms.
    for (v, n) in params.iter_mut().zip(random(case.layout().len(), seed + 1, 0.1)) {
        *v += n;
    }
    let x = case.input_shape().map(|s| random(numel(&s), seed + 2, 1.0));
    Inputs { params, x }
}

fn evaluate<S: Scalar, C: Case>(case: &C, params: &[f64], x: Option<&[f64]>, grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let mut t = Tape::<S>::new();
    let p_values: Vec<S> = params.iter().map(|&v| S::of(v)).collect();
    let p = case.layout().bind(&mut t, &p_values, grad);
    let xv = match (case.input_shape(), x) {
        (Some(shape), Some(x)) => Some(t.leaf(&shape, x.iter().map(|&v| S::of(v)).collect(), grad)),
        _ => None,
    };
    let loss = case.loss(&mut t, &p, xv);
    let value = t.value(loss)[0].to_f64().unwrap();
    if !grad {
        return (value, Vec::new(), Vec::new());
    }
    let mut g = t.backward(loss);
    let gp = case.layout().gather(&p, &g).iter().map(|v| v.to_f64().unwrap()).collect();
    let gx = xv.and_then(|v| g.take(v)).map(|v| v.iter().map(|x| x.to_f64().unwrap()).collect()).unwrap_or_default();
    (value, gp, gx)
}

/// Indices spread over `0..n`, at most `count` of them.
fn probe(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..count).map(|i| i * n / count).collect();
    idx.push(n - 1);
    idx
}

/// Five-point central differences in 64-bit arithmetic for the probed
/// coordinates; truncation error is O(h⁴).
fn central_differences<C: Case>(case: &C, inp: &Inputs, wrt_input: bool, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            stencil(|d| {
                let mut p = inp.params.clone();
                let mut x = inp.x.clone();
                let slot = if wrt_input { &mut x.as_mut().unwrap()[i] } else { &mut p[i] };
                *slot += d;
                evaluate::<f64, C>(case, &p, x.as_deref(), false).0
            })
        })
        .collect()
}

fn stencil(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3;
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

fn check<C: Case>(case: &C, seed: u64) {
    let inp = inputs(case, seed);
    let (_, gp64, gx64) = evaluate::<f64, C>(case, &inp.params, inp.x.as_deref(), true);
    let (_, gp32, gx32) = evaluate::<f32, C>(case, &inp.params, inp.x.as_deref(), true);
    let mut groups = vec![("params", false, gp64, gp32)];
    if inp.x.is_some() {
        groups.push(("input", true, gx64, gx32));
    }
    for (what, wrt_input, g64, g32) in groups {
        let idx = probe(g64.len(), 48);
        let fd = central_differences(case, &inp, wrt_input, &idx);
        let scale = g64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, &i) in idx.iter().enumerate() {
            let floor = 1e-3 * scale;
            let denom = fd[k].abs().max(g64[i].abs()).max(floor).max(1e-12);
            let rel64 = (fd[k] - g64[i]).abs() / denom;
            assert!(rel64 <= 1e-6, "{} {what}[{i}]: f64 analytic {} vs fd {} (rel {rel64:e})", case.name(), g64[i], fd[k]);
            let rel32 = (fd[k] - g32[i]).abs() / denom;
            assert!(rel32 <= 1e-3, "{} {what}[{i}]: f32 analytic {} vs fd {} (rel {rel32:e})", case.name(), g32[i], fd[k]);
        }
    }
}

struct ConvCase {
    layout: ParamLayout,
    conv: Conv,
    periodic_h: bool,
    name: String,
}

impl ConvCase {
    fn new(kernel: usize, periodic_h: bool) -> Self {
        let mut layout = ParamLayout::new();
        let conv = Conv::new(&mut layout, "conv", 2, 3, kernel, false);
        Self { layout, conv, periodic_h, name: format!("conv{kernel}x{kernel} periodic_h={periodic_h}") }
    }
}

impl Case for ConvCase {
    fn name(&self) -> &str {
        &self.name
    }
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![2, 2, 4, 6])
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var {
        let y = self.conv.forward(t, p, x.unwrap(), self.periodic_h);
        mse_head(t, y, 11)
    }
}

#[test]
fn convolution_gradients() {
    for (kernel, periodic_h) in [(3, true), (3, false), (1, true)] {
        check(&ConvCase::new(kernel, periodic_h), 1);
    }
}

struct DenseCase {
    layout: ParamLayout,
    fc1: Dense,
    fc2: Dense,
}

impl Case for DenseCase {
    fn name(&self) -> &str {
        "dense+silu"
    }
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![3, 5])
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var {
        let h = self.fc1.forward(t, p, x.unwrap());
        let h = t.silu(h);
        let y = self.fc2.forward(t, p, h);
        mse_head(t, y, 12)
    }
}

#[test]
fn dense_gradients() {
    let mut layout = ParamLayout::new();
    let fc1 = Dense::new(&mut layout, "fc1", 5, 6, false);
    let fc2 = Dense::new(&mut layout, "fc2", 6, 2, false);
    check(&DenseCase { layout, fc1, fc2 }, 2);
}

struct NormCase {
    layout: ParamLayout,
    norm: Norm,
}

impl Case for NormCase {
    fn name(&self) -> &str {
        "group norm"
    }
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![2, 6, 4, 4])
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var {
        let y = self.norm.forward(t, p, x.unwrap());
        mse_head(t, y, 13)
    }
}

#[test]
fn group_norm_gradients() {
    let mut layout = ParamLayout::new();
    let norm = Norm::new(&mut layout, "norm", 6);
    check(&NormCase { layout, norm }, 3);
}

struct ResCase {
    layout: ParamLayout,
    emb: NoiseEmbedding,
    block: ResBlock,
}

impl Case for ResCase {
    fn name(&self) -> &str {
        "residual block + noise embedding"
    }
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![2, 2, 4, 4])
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var {
        let e = self.emb.forward(t, p, &[-0.3, 1.1]);
        let y = self.block.forward(t, p, x.unwrap(), e, false);
        mse_head(t, y, 14)
    }
}

#[test]
fn residual_block_gradients() {
    let mut layout = ParamLayout::new();
    let emb = NoiseEmbedding::new(&mut layout, "emb", 4, 5);
    let block = ResBlock::new(&mut layout, "res", 2, 4, 5);
    check(&ResCase { layout, emb, block }, 4);
}

struct ResampleCase {
    layout: ParamLayout,
    down: Conv,
    up: Conv,
    head: Dense,
}

impl Case for ResampleCase {
    fn name(&self) -> &str {
        "pool/upsample/concat/global pool"
    }
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![2, 2, 4, 4])
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Option<Var>) -> Var {
        let x = x.unwrap();
        let h = self.down.forward(t, p, x, true);
        let h = t.avg_pool2(h);
        let h = t.upsample2(h);
        let h = t.concat(h, x);
        let h = self.up.forward(t, p, h, true);
        let pooled = t.global_avg_pool(h);
        let y = self.head.forward(t, p, pooled);
        let a = mse_head(t, y, 15);
        let scaled = t.scale_batch(h, vec![S::of(0.5), S::of(2.0)]);
        let b = mse_head(t, scaled, 16);
        t.add(a, b)
    }
}

#[test]
fn resampling_gradients() {
    let mut layout = ParamLayout::new();
    let down = Conv::new(&mut layout, "down", 2, 3, 3, false);
    let up = Conv::new(&mut layout, "up", 5, 3, 3, false);
    let head = Dense::new(&mut layout, "head", 3, 2, false);
    check(&ResampleCase { layout, down, up, head }, 5);
}

struct ScoreLossCase {
    net: ScoreNetwork,
    clean: FrameBatch<f64>,
    noise: Vec<f64>,
    name: String,
}

impl ScoreLossCase {
    fn new(mode: ScoreMode) -> Self {
        let arch = UNetConfig { in_channels: 1, widths: vec![3, 4], res_blocks: 1, emb_features: 4, emb_dim: 4, geometry: Geometry::PeriodicBoth };
        let net = ScoreNetwork::new(mode, arch, Preconditioner::new(0.5).unwrap()).unwrap();
        let cond = (mode == ScoreMode::Conditional).then(|| random(2 * 2 * 16, 21, 1.0));
        let clean = FrameBatch { batch: 2, height: 4, width: 4, frames: random(32, 22, 1.0), cond };
        Self { net, clean, noise: random(32, 23, 1.0), name: format!("denoising loss ({})", mode.as_str()) }
    }
}

impl Case for ScoreLossCase {
    fn name(&self) -> &str {
        &self.name
    }
    fn layout(&self) -> &ParamLayout {
        self.net.unet().layout()
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        None
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, _: Option<Var>) -> Var {
        let cast = |v: &[f64]| v.iter().map(|&x| S::of(x)).collect::<Vec<S>>();
        let clean = FrameBatch {
            batch: self.clean.batch,
            height: self.clean.height,
            width: self.clean.width,
            frames: cast(&self.clean.frames),
            cond: self.clean.cond.as_deref().map(cast),
        };
        self.net.loss_on_tape(t, p, &clean, &[0.05, 3.0], &cast(&self.noise)).unwrap()
    }
}

#[test]
fn denoising_loss_gradients() {
    check(&ScoreLossCase::new(ScoreMode::Unconditional), 6);
    check(&ScoreLossCase::new(ScoreMode::Conditional), 7);
}

fn encoder_arch() -> EncoderConfig {
    EncoderConfig {
        in_channels: 0,
        widths: vec![3, 4],
        res_blocks: 1,
        emb_features: 4,
        emb_dim: 4,
        mlp_width: 6,
        mlp_layers: 2,
        geometry: Geometry::PeriodicBoth,
    }
}

/// Logit sum or cross-entropy of the discriminator on fixed inputs.
struct DiscCase {
    disc: Discriminator,
    cand: Vec<f64>,
    hist: Vec<f64>,
    cross_entropy: bool,
}

impl DiscCase {
    fn new(m: usize, cross_entropy: bool) -> Self {
        let disc = Discriminator::new(encoder_arch(), m).unwrap();
        Self { disc, cand: random(32, 40, 1.0), hist: random(2 * (m + 1) * 16, 41, 1.0), cross_entropy }
    }
}

impl Case for DiscCase {
    fn name(&self) -> &str {
        if self.cross_entropy { "discriminator cross-entropy" } else { "discriminator logit" }
    }
    fn layout(&self) -> &ParamLayout {
        self.disc.encoder().layout()
    }
    fn input_shape(&self) -> Option<Vec<usize>> {
        None
    }
    fn loss<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, _: Option<Var>) -> Var {
        let cast = |v: &[f64]| v.iter().map(|&x| S::of(x)).collect::<Vec<S>>();
        let cand = t.constant(&[2, 1, 4, 4], cast(&self.cand));
        let hist = t.constant(&[2, self.disc.m() + 1, 4, 4], cast(&self.hist));
        let z = self.disc.logit_on_tape(t, p, cand, hist, &[0.01, 0.7]);
        if self.cross_entropy { t.bce_with_logits(z, vec![S::of(1.0), S::of(0.0)]) } else { t.sum_all(z) }
    }
}

#[test]
fn discriminator_parameter_gradients() {
    for m in [1, 2] {
        check(&DiscCase::new(m, true), 8 + m as u64);
        check(&DiscCase::new(m, false), 10 + m as u64);
    }
}

/// The guidance gradient is the logit's input gradient; check it directly
/// with leaves for candidate and history.
#[test]
fn discriminator_input_gradients() {
    let disc = Discriminator::new(encoder_arch(), 1).unwrap();
    let mut params: Vec<f64> = disc.encoder().layout().init(&mut rng::rng_from_seed(30));
    for (v, n) in params.iter_mut().zip(random(disc.param_count(), 31, 0.1)) {
        *v += n;
    }
    let cand = random(32, 32, 1.0);
    let hist = random(64, 33, 1.0);
    let sigmas = [0.002, 0.1];
    let logit = |c: &[f64], h: &[f64], grad: bool| {
        let mut t = Tape::<f64>::new();
        let p = disc.encoder().layout().bind(&mut t, &params, false);
        let cv = t.leaf(&[2, 1, 4, 4], c.to_vec(), grad);
        let hv = t.leaf(&[2, 2, 4, 4], h.to_vec(), grad);
        let z = disc.logit_on_tape(&mut t, &p, cv, hv, &sigmas);
        let total = t.sum_all(z);
        let value = t.value(total)[0];
        if !grad {
            return (value, Vec::new(), Vec::new());
        }
        let mut g = t.backward(total);
        (value, g.take(cv).unwrap(), g.take(hv).unwrap())
    };
    let (_, gc, gh) = logit(&cand, &hist, true);
    let scale = gc.iter().chain(&gh).fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..cand.len() {
        let fd = stencil(|d| {
            let mut c = cand.clone();
            c[i] += d;
            logit(&c, &hist, false).0
        });
        let denom = fd.abs().max(gc[i].abs()).max(1e-3 * scale);
        assert!((fd - gc[i]).abs() <= 1e-6 * denom, "candidate[{i}]: {} vs {fd}", gc[i]);
    }
    for i in probe(hist.len(), 32) {
        let fd = stencil(|d| {
            let mut h = hist.clone();
            h[i] += d;
            logit(&cand, &h, false).0
        });
        let denom = fd.abs().max(gh[i].abs()).max(1e-3 * scale);
        assert!((fd - gh[i]).abs() <= 1e-6 * denom, "history[{i}]: {} vs {fd}", gh[i]);
    }
    // The f32 guidance path used by the sampler agrees at 1e-3.
    let p32: Vec<f32> = params.iter().map(|&v| v as f32).collect();
    let batch = FrameBatch {
        batch: 2,
        height: 4,
        width: 4,
        frames: cand.iter().map(|&v| v as f32).collect(),
        cond: Some(hist.iter().map(|&v| v as f32).collect()),
    };
    let g32 = disc.guidance(&p32, &batch, &sigmas).unwrap();
    for (a, b) in g32.grad.iter().zip(&gc) {
        assert!((*a as f64 - b).abs() <= 1e-3 * b.abs().max(1e-3 * scale), "{a} vs {b}");
    }
}

#[test]
fn probe_covers_ends() {
    assert_eq!(probe(3, 10), vec![0, 1, 2]);
    let p = probe(100, 4);
    assert_eq!(p.first(), Some(&0));
    assert_eq!(p.last(), Some(&99));
}
