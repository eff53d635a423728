//! A small reverse-mode automatic differentiation tape over dense tensors.
//!
//! Values are row-major; image tensors are `[B, C, H, W]` and feature
//! tensors `[B, F]`. Every operation records its inputs and whatever it
//! needs for the backward pass. Nodes that do not depend on a leaf with
//! `needs_grad` are skipped during [`Tape::backward`].

mod conv;
mod scalar;

pub use conv::{col2im, im2col, ConvGeom};
pub use scalar::{dot, gemm, gemm_view, sum, Scalar, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, kernel: usize, periodic_h: bool },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    AddChannel { x: Var, e: Var },
    Silu(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<S>, rstd: Vec<S> },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    ScaleBatch { x: Var, scale: Vec<S> },
    Scale { x: Var, s: S },
    WeightedMse { pred: Var, target: Vec<S>, weights: Vec<S> },
    BceWithLogits { logits: Var, labels: Vec<S> },
    SumAll(Var),
}

#[derive(Debug, Clone)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    col: Vec<S>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads[v.0].take()
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    x.sigmoid()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), col: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn into_value(mut self, v: Var) -> Vec<S> {
        std::mem::take(&mut self.nodes[v.0].value)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, shape: &[usize], value: Vec<S>, needs_grad: bool) -> Var {
        assert_eq!(numel(shape), value.len(), "leaf shape {shape:?}");
        self.push(shape.to_vec(), value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, shape: &[usize], value: Vec<S>) -> Var {
        self.leaf(shape, value, false)
    }

    /// Stride-1 "same" convolution. `w` is `[C_out, C_in·k·k]`, `b` is `[C_out]`.
    ///
    /// Each batch element is an independent matrix product, so results do
    /// not depend on the batch size.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, kernel: usize, periodic_h: bool) -> Var {
        let [bs, cin, h, wd] = self.dims4(x);
        let cout = self.nodes[b.0].value.len();
        assert_eq!(self.nodes[w.0].value.len(), cout * cin * kernel * kernel, "conv weight size");
        let g = ConvGeom { batch: bs, channels: cin, height: h, width: wd, kernel, periodic_h };
        let hw = h * wd;
        let rows = g.rows();
        let bias = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(bs * cout * hw);
        for i in 0..bs * cout {
            out.extend(std::iter::repeat_n(bias[i % cout], hw));
        }
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if kernel == 1 {
            for bi in 0..bs {
                let xb = View::row_major(bi * cin * hw, hw);
                gemm_view(cout, rows, hw, wv, View::row_major(0, rows), xv, xb, &mut out, View::row_major(bi * cout * hw, hw), true);
            }
        } else {
            let mut col = std::mem::take(&mut self.col);
            im2col(&g, xv, &mut col);
            for bi in 0..bs {
                let cb = View { offset: bi * hw, rs: bs * hw, cs: 1 };
                gemm_view(cout, rows, hw, wv, View::row_major(0, rows), &col, cb, &mut out, View::row_major(bi * cout * hw, hw), true);
            }
            self.col = col;
        }
        let ng = self.ng(&[x, w, b]);
        self.push(vec![bs, cout, h, wd], out, Op::Conv2d { x, w, b, kernel, periodic_h }, ng)
    }

    /// `y = x Wᵀ + b` with `x [B, I]`, `w [O, I]`, `b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = &self.nodes[x.0].shape;
        assert_eq!(xs.len(), 2, "linear expects [B, I]");
        let (bs, i) = (xs[0], xs[1]);
        let o = self.nodes[b.0].value.len();
        assert_eq!(self.nodes[w.0].value.len(), o * i, "linear weight size");
        let mut out = vec![S::zero(); bs * o];
        for r in 0..bs {
            out[r * o..(r + 1) * o].copy_from_slice(&self.nodes[b.0].value);
        }
        gemm(bs, i, o, &self.nodes[x.0].value, false, &self.nodes[w.0].value, true, &mut out, true);
        let ng = self.ng(&[x, w, b]);
        self.push(vec![bs, o], out, Op::Linear { x, w, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "add shapes");
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x + *y)
            .collect();
        let ng = self.ng(&[a, b]);
        self.push(self.nodes[a.0].shape.clone(), out, Op::Add(a, b), ng)
    }

    /// Broadcasts `e [B, C]` over the spatial axes of `x [B, C, H, W]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Var {
        let [bs, c, h, w] = self.dims4(x);
        assert_eq!(self.nodes[e.0].shape, vec![bs, c], "add_channel shapes");
        let hw = h * w;
        let ev = &self.nodes[e.0].value;
        let mut out = self.nodes[x.0].value.clone();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let add = ev[i];
            chunk.iter_mut().for_each(|v| *v = *v + add);
        }
        let ng = self.ng(&[x, e]);
        self.push(vec![bs, c, h, w], out, Op::AddChannel { x, e }, ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|&v| v * sigmoid(v)).collect();
        let ng = self.ng(&[x]);
        self.push(self.nodes[x.0].shape.clone(), out, Op::Silu(x), ng)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let [bs, c, h, w] = self.dims4(x);
        assert!(groups > 0 && c % groups == 0, "{c} channels into {groups} groups");
        let hw = h * w;
        let cg = c / groups;
        let per = cg * hw;
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let eps = S::of(GROUP_NORM_EPS);
        let mut out = vec![S::zero(); xv.len()];
        let mut means = Vec::with_capacity(bs * groups);
        let mut rstds = Vec::with_capacity(bs * groups);
        let n = S::of(per as f64);
        for bg in 0..bs * groups {
            let seg = &xv[bg * per..(bg + 1) * per];
            let mean = sum(seg) / n;
            let mut acc = S::zero();
            for chunk in seg.chunks(hw) {
                let mut part = [S::zero(); 8];
                let it = chunk.chunks_exact(8);
                let rest = it.remainder();
                for v in it {
                    for i in 0..8 {
                        let d = v[i] - mean;
                        part[i] = part[i] + d * d;
                    }
                }
                let mut tail = S::zero();
                for &v in rest {
                    tail = tail + (v - mean) * (v - mean);
                }
                acc = acc + sum(&part) + tail;
            }
            let rstd = S::one() / (acc / n + eps).sqrt();
            means.push(mean);
            rstds.push(rstd);
            let g0 = (bg % groups) * cg;
            for j in 0..cg {
                let ch = g0 + j;
                let scale = rstd * gv[ch];
                let shift = bv[ch] - mean * scale;
                let range = bg * per + j * hw..bg * per + (j + 1) * hw;
                for (o, &v) in out[range.clone()].iter_mut().zip(&xv[range]) {
                    *o = v * scale + shift;
                }
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        self.push(
            vec![bs, c, h, w],
            out,
            Op::GroupNorm { x, gamma, beta, groups, mean: means, rstd: rstds },
            ng,
        )
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let [bs, c, h, w] = self.dims4(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sides, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let xv = &self.nodes[x.0].value;
        let q = S::of(0.25);
        let mut out = vec![S::zero(); bs * c * ho * wo];
        for p in 0..bs * c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = p * h * w;
                    let s = xv[base + 2 * y * w + 2 * xx]
                        + xv[base + 2 * y * w + 2 * xx + 1]
                        + xv[base + (2 * y + 1) * w + 2 * xx]
                        + xv[base + (2 * y + 1) * w + 2 * xx + 1];
                    out[p * ho * wo + y * wo + xx] = s * q;
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(vec![bs, c, ho, wo], out, Op::AvgPool2(x), ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [bs, c, h, w] = self.dims4(x);
        let (ho, wo) = (2 * h, 2 * w);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![S::zero(); bs * c * ho * wo];
        for p in 0..bs * c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[p * ho * wo + y * wo + xx] = xv[p * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(vec![bs, c, ho, wo], out, Op::Upsample2(x), ng)
    }

    /// Channel concatenation of two image tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let [bs, ca, h, w] = self.dims4(a);
        let [bb, cb, hb, wb] = self.dims4(b);
        assert!(bs == bb && h == hb && w == wb, "concat shapes");
        let hw = h * w;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Vec::with_capacity(bs * (ca + cb) * hw);
        for i in 0..bs {
            out.extend_from_slice(&av[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv[i * cb * hw..(i + 1) * cb * hw]);
        }
        let ng = self.ng(&[a, b]);
        self.push(vec![bs, ca + cb, h, w], out, Op::Concat(a, b), ng)
    }

    /// `[B, C, H, W]` → `[B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [bs, c, h, w] = self.dims4(x);
        let hw = h * w;
        let n = S::of(hw as f64);
        let out = self.nodes[x.0].value.chunks(hw).map(|ch| ch.iter().copied().sum::<S>() / n).collect();
        let ng = self.ng(&[x]);
        self.push(vec![bs, c], out, Op::GlobalAvgPool(x), ng)
    }

    /// Multiplies batch element `i` by the constant `scale[i]`.
    pub fn scale_batch(&mut self, x: Var, scale: Vec<S>) -> Var {
        let bs = self.nodes[x.0].shape[0];
        assert_eq!(scale.len(), bs, "scale_batch length");
        let per = self.nodes[x.0].value.len() / bs.max(1);
        let out = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v * scale[i / per])
            .collect();
        let ng = self.ng(&[x]);
        self.push(self.nodes[x.0].shape.clone(), out, Op::ScaleBatch { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let out = self.nodes[x.0].value.iter().map(|&v| v * s).collect();
        let ng = self.ng(&[x]);
        self.push(self.nodes[x.0].shape.clone(), out, Op::Scale { x, s }, ng)
    }

    /// `(1/B) Σ_b weights[b] · mean((pred_b − target_b)²)`.
    pub fn weighted_mse(&mut self, pred: Var, target: Vec<S>, weights: Vec<S>) -> Var {
        let pv = &self.nodes[pred.0].value;
        assert_eq!(pv.len(), target.len(), "weighted_mse target size");
        let bs = weights.len();
        let per = pv.len() / bs;
        let mut total = S::zero();
        for b in 0..bs {
            let sq: S = pv[b * per..(b + 1) * per]
                .iter()
                .zip(&target[b * per..(b + 1) * per])
                .map(|(p, t)| (*p - *t) * (*p - *t))
                .sum();
            total = total + weights[b] * sq / S::of(per as f64);
        }
        let out = vec![total / S::of(bs as f64)];
        let ng = self.ng(&[pred]);
        self.push(vec![1], out, Op::WeightedMse { pred, target, weights }, ng)
    }

    /// Mean binary cross-entropy of `logits [B, 1]` against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<S>) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.len(), labels.len(), "bce label count");
        let mut total = S::zero();
        for (&z, &y) in lv.iter().zip(&labels) {
            // max(z, 0) − z·y + ln(1 + e^{−|z|})
            total = total + z.max(S::zero()) - z * y + (-z.abs()).exp().ln_1p();
        }
        let out = vec![total / S::of(labels.len() as f64)];
        let ng = self.ng(&[logits]);
        self.push(vec![1], out, Op::BceWithLogits { logits, labels }, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(vec![1], vec![s], Op::SumAll(x), ng)
    }

    fn dims4(&self, v: Var) -> [usize; 4] {
        let s = &self.nodes[v.0].shape;
        assert_eq!(s.len(), 4, "expected [B, C, H, W], got {s:?}");
        [s[0], s[1], s[2], s[3]]
    }

    /// Reverse sweep from `root`, seeded with ones.
    ///
    /// Only leaf gradients are retained in the result.
    pub fn backward(&self, root: Var) -> Grads<S> {
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![S::one(); self.nodes[root.0].value.len()]);
        let mut scratch = Vec::new();
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads, &mut scratch);
        }
        Grads { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>], scratch: &mut Vec<S>) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, kernel, periodic_h } => {
                let [bs, cin, h, wd] = self.dims4(*x);
                let cout = node.shape[1];
                let hw = h * wd;
                let geom = ConvGeom {
                    batch: bs,
                    channels: cin,
                    height: h,
                    width: wd,
                    kernel: *kernel,
                    periodic_h: *periodic_h,
                };
                let rows = geom.rows();
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, chunk) in g.chunks(hw).enumerate() {
                        let o = i % cout;
                        gb[o] = gb[o] + sum(chunk);
                    }
                }
                let need_w = self.nodes[w.0].needs_grad;
                let need_x = self.nodes[x.0].needs_grad;
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let gview = |bi: usize| View::row_major(bi * cout * hw, hw);
                if need_w {
                    let (src, cview): (&[S], Box<dyn Fn(usize) -> View>) = if *kernel == 1 {
                        (xv, Box::new(move |bi| View::row_major(bi * cin * hw, hw)))
                    } else {
                        im2col(&geom, xv, scratch);
                        (scratch, Box::new(move |bi| View { offset: bi * hw, rs: bs * hw, cs: 1 }))
                    };
                    let gw = self.acc(grads, *w).expect("needs grad");
                    for bi in 0..bs {
                        gemm_view(cout, hw, rows, g, gview(bi), src, cview(bi).t(), gw, View::row_major(0, rows), true);
                    }
                }
                if need_x {
                    let wt = View::row_major(0, rows).t();
                    if *kernel == 1 {
                        let gx = self.acc(grads, *x).expect("needs grad");
                        for bi in 0..bs {
                            gemm_view(rows, cout, hw, wv, wt, g, gview(bi), gx, View::row_major(bi * cin * hw, hw), true);
                        }
                    } else {
                        // Overwritten by the products below.
                        scratch.resize(rows * bs * hw, S::zero());
                        for bi in 0..bs {
                            let dv = View { offset: bi * hw, rs: bs * hw, cs: 1 };
                            gemm_view(rows, cout, hw, wv, wt, g, gview(bi), scratch, dv, false);
                        }
                        let gx = self.acc(grads, *x).expect("needs grad");
                        col2im(&geom, scratch, gx);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = &self.nodes[x.0].shape;
                let (bs, i) = (xs[0], xs[1]);
                let o = node.shape[1];
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..bs {
                        for (d, s) in gb.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                            *d = *d + *s;
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    gemm(o, bs, i, g, true, &self.nodes[x.0].value, false, gw, true);
                }
                if let Some(gx) = self.acc(grads, *x) {
                    gemm(bs, o, i, g, false, &self.nodes[w.0].value, false, gx, true);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(ga) = self.acc(grads, *v) {
                        for (d, s) in ga.iter_mut().zip(g) {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::AddChannel { x, e } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d = *d + *s;
                    }
                }
                let hw = node.shape[2] * node.shape[3];
                if let Some(ge) = self.acc(grads, *e) {
                    for (i, chunk) in g.chunks(hw).enumerate() {
                        ge[i] = ge[i] + chunk.iter().copied().sum::<S>();
                    }
                }
            }
            Op::Silu(x) => {
                let xv = &self.nodes[x.0].value;
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &s), &v) in gx.iter_mut().zip(g).zip(xv) {
                        let sg = sigmoid(v);
                        *d = *d + s * sg * (S::one() + v * (S::one() - sg));
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                let [bs, c, h, w] = self.dims4(*x);
                let hw = h * w;
                let cg = c / groups;
                let per = cg * hw;
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gamma.0].value;
                let n = S::of(per as f64);
                let need_x = self.nodes[x.0].needs_grad;
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = if need_x { vec![S::zero(); xv.len()] } else { Vec::new() };
                for bg in 0..bs * groups {
                    let (m, r) = (mean[bg], rstd[bg]);
                    let g0 = (bg % groups) * cg;
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for j in 0..cg {
                        let ch = g0 + j;
                        let range = bg * per + j * hw..bg * per + (j + 1) * hw;
                        let (gs, xs) = (&g[range.clone()], &xv[range]);
                        // Σ g·x̂ = r (Σ g·x − m Σ g)
                        let sg = sum(gs);
                        let sgx = r * (dot(gs, xs) - m * sg);
                        dgamma[ch] = dgamma[ch] + sgx;
                        dbeta[ch] = dbeta[ch] + sg;
                        sum_dxhat = sum_dxhat + gv[ch] * sg;
                        sum_dxhat_xhat = sum_dxhat_xhat + gv[ch] * sgx;
                    }
                    if need_x {
                        let (md, mdx) = (sum_dxhat / n, sum_dxhat_xhat / n);
                        for j in 0..cg {
                            let ch = g0 + j;
                            let range = bg * per + j * hw..bg * per + (j + 1) * hw;
                            let a = r * gv[ch];
                            let bcoef = r * mdx * r;
                            let cconst = -r * md + r * mdx * r * m;
                            for ((d, &gy), &v) in dx[range.clone()].iter_mut().zip(&g[range.clone()]).zip(&xv[range]) {
                                *d = a * gy - bcoef * v + cconst;
                            }
                        }
                    }
                }
                for (v, d) in [(gamma, dgamma), (beta, dbeta)] {
                    if let Some(gg) = self.acc(grads, *v) {
                        for (a, b) in gg.iter_mut().zip(&d) {
                            *a = *a + *b;
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for (a, b) in gx.iter_mut().zip(&dx) {
                        *a = *a + *b;
                    }
                }
            }
            Op::AvgPool2(x) => {
                let [bs, c, h, w] = self.dims4(*x);
                let (ho, wo) = (h / 2, w / 2);
                let q = S::of(0.25);
                if let Some(gx) = self.acc(grads, *x) {
                    for p in 0..bs * c {
                        for y in 0..h {
                            for xx in 0..w {
                                let s = g[p * ho * wo + (y / 2) * wo + xx / 2] * q;
                                let d = &mut gx[p * h * w + y * w + xx];
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let [bs, c, h, w] = self.dims4(*x);
                let (ho, wo) = (2 * h, 2 * w);
                if let Some(gx) = self.acc(grads, *x) {
                    for p in 0..bs * c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let d = &mut gx[p * h * w + (y / 2) * w + xx / 2];
                                *d = *d + g[p * ho * wo + y * wo + xx];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let [bs, ca, h, w] = self.dims4(*a);
                let cb = self.nodes[b.0].shape[1];
                let hw = h * w;
                let ct = ca + cb;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..bs {
                        for (d, s) in ga[i * ca * hw..(i + 1) * ca * hw]
                            .iter_mut()
                            .zip(&g[i * ct * hw..(i * ct + ca) * hw])
                        {
                            *d = *d + *s;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..bs {
                        for (d, s) in gb[i * cb * hw..(i + 1) * cb * hw]
                            .iter_mut()
                            .zip(&g[(i * ct + ca) * hw..(i + 1) * ct * hw])
                        {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.dims4(*x);
                let hw = h * w;
                let inv = S::one() / S::of(hw as f64);
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, chunk) in gx.chunks_mut(hw).enumerate() {
                        let s = g[i] * inv;
                        chunk.iter_mut().for_each(|d| *d = *d + s);
                    }
                }
            }
            Op::ScaleBatch { x, scale } => {
                let per = g.len() / scale.len().max(1);
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, (d, s)) in gx.iter_mut().zip(g).enumerate() {
                        *d = *d + *s * scale[i / per];
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, v) in gx.iter_mut().zip(g) {
                        *d = *d + *v * *s;
                    }
                }
            }
            Op::WeightedMse { pred, target, weights } => {
                let bs = weights.len();
                let pv = &self.nodes[pred.0].value;
                let per = pv.len() / bs;
                let two = S::of(2.0);
                let denom = S::of((per * bs) as f64);
                if let Some(gp) = self.acc(grads, *pred) {
                    for (i, (d, (p, t))) in gp.iter_mut().zip(pv.iter().zip(target)).enumerate() {
                        *d = *d + g[0] * two * weights[i / per] * (*p - *t) / denom;
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                let lv = &self.nodes[logits.0].value;
                let n = S::of(labels.len() as f64);
                if let Some(gl) = self.acc(grads, *logits) {
                    for ((d, &z), &y) in gl.iter_mut().zip(lv).zip(labels) {
                        *d = *d + g[0] * (sigmoid(z) - y) / n;
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
        }
    }
}
