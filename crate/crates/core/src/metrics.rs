//! Verification metrics for generated trajectories and ensemble forecasts.
//!
//! Trajectories are slices of equally shaped [`Field`]s in time order. Truth
//! is always `y`, the model output `x`; cell `i` of a `C×H×W` frame carries
//! the area weight of its row `(i / W) mod H`. Reductions run in a fixed
//! order, so identical inputs give bit-identical results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::container::{format_list, parse_list};
use crate::error::{Error, Result};
use crate::field::{percentile_sorted, AreaWeights, Field, FrameShape};
use crate::rng::SimRng;

fn trajectory_shape(traj: &[Field]) -> Result<FrameShape> {
    let first = traj.first().ok_or_else(|| Error::Missing("empty trajectory".into()))?;
    let shape = first.shape();
    if let Some(f) = traj.iter().find(|f| f.shape() != shape) {
        return Err(Error::ShapeMismatch { left: shape.dims(), right: f.shape().dims() });
    }
    Ok(shape)
}

fn aligned(x: &[Field], y: &[Field]) -> Result<FrameShape> {
    let (sx, sy) = (trajectory_shape(x)?, trajectory_shape(y)?);
    if sx != sy || x.len() != y.len() {
        let dims = |n: usize, s: FrameShape| [vec![n], s.dims()].concat();
        return Err(Error::ShapeMismatch { left: dims(x.len(), sx), right: dims(y.len(), sy) });
    }
    Ok(sx)
}

/// Row weight of every cell of a frame.
fn cell_weights(shape: FrameShape, w: &AreaWeights) -> Result<Vec<f64>> {
    if w.len() != shape.height {
        return Err(Error::ShapeMismatch { left: vec![shape.height], right: vec![w.len()] });
    }
    let w = w.values();
    Ok((0..shape.len()).map(|i| w[(i / shape.width) % shape.height]).collect())
}

fn cell_series(traj: &[Field], i: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(traj.iter().map(|f| f.values()[i] as f64));
}

/// Area-weighted RMSE with the squared error summed (not averaged) over time.
pub fn rmse(x: &[Field], y: &[Field], w: &AreaWeights) -> Result<f64> {
    let shape = aligned(x, y)?;
    let cw = cell_weights(shape, w)?;
    let mut total = 0.0;
    for (i, wk) in cw.iter().enumerate() {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (b.values()[i] as f64 - a.values()[i] as f64).powi(2)).sum();
        total += wk * sq;
    }
    Ok((total / shape.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasMap {
    pub shape: FrameShape,
    /// Time mean of `y − x` per cell.
    pub values: Vec<f64>,
    /// Area-weighted mean of `|bias|`.
    pub mean_abs: f64,
    /// Area-weighted mean of the signed bias.
    pub global_mean: f64,
}

pub fn bias_map(x: &[Field], y: &[Field], w: &AreaWeights) -> Result<BiasMap> {
    let shape = aligned(x, y)?;
    let cw = cell_weights(shape, w)?;
    let n = x.len() as f64;
    let values: Vec<f64> = (0..shape.len())
        .map(|i| x.iter().zip(y).map(|(a, b)| b.values()[i] as f64 - a.values()[i] as f64).sum::<f64>() / n)
        .collect();
    let cells = shape.len() as f64;
    let mean_abs = values.iter().zip(&cw).map(|(b, w)| w * b.abs()).sum::<f64>() / cells;
    let global_mean = values.iter().zip(&cw).map(|(b, w)| w * b).sum::<f64>() / cells;
    Ok(BiasMap { shape, values, mean_abs, global_mean })
}

/// Area-weighted spatial mean of every frame.
pub fn spatial_means(traj: &[Field], w: &AreaWeights) -> Result<Vec<f64>> {
    let shape = trajectory_shape(traj)?;
    let cw = cell_weights(shape, w)?;
    Ok(traj
        .iter()
        .map(|f| f.values().iter().zip(&cw).map(|(&v, w)| w * v as f64).sum::<f64>() / shape.len() as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acf {
    /// `ACF(0..=max_lag)`.
    pub values: Vec<f64>,
    /// Cells skipped for having zero variance.
    pub excluded_cells: usize,
}

/// Area-weighted mean of per-cell autocorrelation functions.
///
/// Each cell series is optionally deseasonalized by subtracting the mean of
/// its season label (e.g. calendar month), then standardized. Lag `j` uses
/// the biased estimator `(1/N) Σ_{n≥j} d_n d_{n−j} / σ²`, which keeps every
/// value in `[−1, 1]` and `ACF(0) = 1`.
pub fn acf(x: &[Field], w: &AreaWeights, max_lag: usize, seasons: Option<&[u32]>) -> Result<Acf> {
    let shape = trajectory_shape(x)?;
    let cw = cell_weights(shape, w)?;
    let n = x.len();
    if n <= max_lag {
        return Err(Error::DatasetTooShort { frames: n, required: max_lag + 1 });
    }
    if let Some(s) = seasons {
        if s.len() != n {
            return Err(Error::ShapeMismatch { left: vec![n], right: vec![s.len()] });
        }
    }
    let mut sums = vec![0.0; max_lag + 1];
    let mut weight = 0.0;
    let mut excluded_cells = 0;
    let mut d = Vec::with_capacity(n);
    for (i, wk) in cw.iter().enumerate() {
        cell_series(x, i, &mut d);
        if let Some(labels) = seasons {
            let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            for (v, l) in d.iter().zip(labels) {
                let g = groups.entry(*l).or_default();
                g.0 += v;
                g.1 += 1;
            }
            for (v, l) in d.iter_mut().zip(labels) {
                let (s, c) = groups[l];
                *v -= s / c as f64;
            }
        }
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = d.iter().sum::<f64>() / n as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let var = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if var <= (1e-9 * scale).powi(2) {
            excluded_cells += 1;
            continue;
        }
        for (j, s) in sums.iter_mut().enumerate() {
            let c: f64 = (j..n).map(|t| d[t] * d[t - j]).sum::<f64>() / n as f64;
            *s += wk * c / var;
        }
        weight += wk;
    }
    if weight == 0.0 {
        return Err(Error::Missing("every cell has zero variance".into()));
    }
    Ok(Acf { values: sums.iter().map(|s| s / weight).collect(), excluded_cells })
}

/// Spatial band averaged into a Hovmoeller diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// Mean over `count` columns from `start`; one matrix column per grid row.
    Columns { start: usize, count: usize },
    /// Mean over `count` rows from `start`; one matrix column per grid column.
    Rows { start: usize, count: usize },
}

impl Band {
    /// `count` columns centred in a grid of `width`.
    pub fn center_columns(width: usize, count: usize) -> Self {
        let count = count.min(width);
        Band::Columns { start: (width - count) / 2, count }
    }

    /// Rows whose centre latitude lies in `[lo, hi]` degrees.
    pub fn latitude_rows(lat_of_row: &[f64], lo: f64, hi: f64) -> Result<Self> {
        let rows: Vec<usize> = (0..lat_of_row.len()).filter(|&k| (lo..=hi).contains(&lat_of_row[k])).collect();
        match (rows.first(), rows.last()) {
            (Some(&a), Some(&b)) => Ok(Band::Rows { start: a, count: b - a + 1 }),
            _ => Err(Error::Config(format!("no rows between latitudes {lo} and {hi}"))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Band::Columns { start, count } => format!("columns {start}..{}", start + count),
            Band::Rows { start, count } => format!("rows {start}..{}", start + count),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hovmoeller {
    pub band: Band,
    pub times: usize,
    pub positions: usize,
    /// Row-major `times × positions`.
    pub values: Vec<f64>,
}

impl Hovmoeller {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.positions..(t + 1) * self.positions]
    }
}

pub fn hovmoeller(traj: &[Field], band: Band) -> Result<Hovmoeller> {
    let shape = trajectory_shape(traj)?;
    if shape.channels != 1 {
        return Err(Error::InvalidField(format!("Hovmoeller needs one channel, found {}", shape.channels)));
    }
    let (h, w) = (shape.height, shape.width);
    let (start, count, extent) = match band {
        Band::Columns { start, count } => (start, count, w),
        Band::Rows { start, count } => (start, count, h),
    };
    if count == 0 || start + count > extent {
        return Err(Error::Config(format!("band {} outside a {h}×{w} grid or empty", band.describe())));
    }
    let positions = if matches!(band, Band::Columns { .. }) { h } else { w };
    let mut values = Vec::with_capacity(traj.len() * positions);
    for f in traj {
        let v = f.values();
        for p in 0..positions {
            let s: f64 = (start..start + count)
                .map(|b| match band {
                    Band::Columns { .. } => v[p * w + b],
                    Band::Rows { .. } => v[b * w + p],
                } as f64)
                .sum();
            values.push(s / count as f64);
        }
    }
    Ok(Hovmoeller { band, times: traj.len(), positions, values })
}

fn probabilities(row: &[f64], index: usize) -> Result<Vec<f64>> {
    let total: f64 = row.iter().map(|v| v.abs()).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateDistribution { row: index });
    }
    Ok(row.iter().map(|v| v.abs() / total).collect())
}

/// W1 between two rows read as distributions over `K` bins:
/// `(1/K) Σ_i |F_p(i) − F_q(i)|`.
pub fn w1_rows(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch { left: vec![p.len()], right: vec![q.len()] });
    }
    let (p, q) = (probabilities(p, 0)?, probabilities(q, 1)?);
    let (mut fp, mut fq, mut acc) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(&q) {
        fp += a;
        fq += b;
        acc += (fp - fq).abs();
    }
    Ok(acc / p.len() as f64)
}

/// W1 between every pair of consecutive Hovmoeller rows.
pub fn w1_consecutive(hov: &Hovmoeller) -> Result<Vec<f64>> {
    if hov.times < 2 {
        return Err(Error::DatasetTooShort { frames: hov.times, required: 2 });
    }
    (1..hov.times)
        .map(|t| {
            w1_rows(hov.row(t - 1), hov.row(t)).map_err(|e| match e {
                Error::DegenerateDistribution { row } => Error::DegenerateDistribution { row: t - 1 + row },
                e => e,
            })
        })
        .collect()
}

/// Ensemble rollouts indexed `(forecast, member, lead)` with the matching
/// truth indexed `(forecast, lead)`.
#[derive(Debug, Clone)]
pub struct EnsembleForecast {
    values: Vec<Vec<Vec<Field>>>,
    truth: Vec<Vec<Field>>,
    weights: AreaWeights,
    shape: FrameShape,
}

impl EnsembleForecast {
    pub fn new(values: Vec<Vec<Vec<Field>>>, truth: Vec<Vec<Field>>, weights: AreaWeights) -> Result<Self> {
        let first = values
            .first()
            .and_then(|f| f.first())
            .ok_or_else(|| Error::Missing("ensemble without forecasts or members".into()))?;
        let (members, leads) = (values[0].len(), first.len());
        let shape = trajectory_shape(first)?;
        if truth.len() != values.len() {
            return Err(Error::Missing(format!("truth for {} of {} forecasts", truth.len(), values.len())));
        }
        for (f, (runs, y)) in values.iter().zip(&truth).enumerate() {
            if runs.len() != members || runs.iter().any(|r| r.len() != leads) {
                return Err(Error::Config(format!("forecast {f} is ragged")));
            }
            if y.len() < leads {
                return Err(Error::Missing(format!("truth of forecast {f} has {} of {leads} leads", y.len())));
            }
            for traj in runs.iter().chain(std::iter::once(y)) {
                let s = trajectory_shape(traj)?;
                if s != shape {
                    return Err(Error::ShapeMismatch { left: shape.dims(), right: s.dims() });
                }
            }
        }
        cell_weights(shape, &weights)?;
        Ok(Self { values, truth, weights, shape })
    }

    pub fn forecasts(&self) -> usize {
        self.values.len()
    }

    pub fn members(&self) -> usize {
        self.values[0].len()
    }

    pub fn leads(&self) -> usize {
        self.values[0][0].len()
    }

    pub fn member(&self, forecast: usize, member: usize, lead: usize) -> &Field {
        &self.values[forecast][member][lead]
    }

    pub fn truth(&self, forecast: usize, lead: usize) -> &Field {
        &self.truth[forecast][lead]
    }

    fn check_lead(&self, lead: usize) -> Result<()> {
        if lead >= self.leads() {
            return Err(Error::Config(format!("lead {lead} outside 0..{}", self.leads())));
        }
        Ok(())
    }
}

/// CRPS at one lead, averaged over forecasts. The pairwise term
/// `Σ_{b,b'} |x_b − x_b'|` is evaluated on sorted members in `O(B log B)`.
pub fn crps(ens: &EnsembleForecast, lead: usize) -> Result<f64> {
    ens.check_lead(lead)?;
    let cw = cell_weights(ens.shape, &ens.weights)?;
    let b = ens.members();
    let mut members = vec![0.0f64; b];
    let mut total = 0.0;
    for f in 0..ens.forecasts() {
        let y = ens.truth(f, lead).values();
        let mut acc = 0.0;
        for (i, wk) in cw.iter().enumerate() {
            for (m, slot) in members.iter_mut().enumerate() {
                *slot = ens.member(f, m, lead).values()[i] as f64;
            }
            let obs = y[i] as f64;
            let skill = members.iter().map(|x| (x - obs).abs()).sum::<f64>() / b as f64;
            members.sort_by(f64::total_cmp);
            let pairs: f64 = members.iter().enumerate().map(|(k, x)| x * (2.0 * k as f64 + 1.0 - b as f64)).sum();
            acc += wk * (skill - 2.0 * pairs / (2.0 * (b * b) as f64));
        }
        total += acc / cw.len() as f64;
    }
    Ok(total / ens.forecasts() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadSkill {
    pub spread: f64,
    pub skill: f64,
    /// `√((M+1)/M) · spread/skill` with `M = B`.
    pub ssr: f64,
}

/// Spread and skill at one lead; squared values are averaged over forecasts
/// before the square root.
pub fn spread_skill_ratio(ens: &EnsembleForecast, lead: usize) -> Result<SpreadSkill> {
    ens.check_lead(lead)?;
    let b = ens.members();
    if b < 2 {
        return Err(Error::Config(format!("spread needs at least 2 members, found {b}")));
    }
    let cw = cell_weights(ens.shape, &ens.weights)?;
    let cells = cw.len() as f64;
    let (mut spread2, mut skill2) = (0.0, 0.0);
    for f in 0..ens.forecasts() {
        let y = ens.truth(f, lead).values();
        let (mut sp, mut sk) = (0.0, 0.0);
        for (i, wk) in cw.iter().enumerate() {
            let xs = (0..b).map(|m| ens.member(f, m, lead).values()[i] as f64);
            let mean = xs.clone().sum::<f64>() / b as f64;
            sp += wk * xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
            sk += wk * (y[i] as f64 - mean).powi(2);
        }
        spread2 += sp / cells;
        skill2 += sk / cells;
    }
    let n = ens.forecasts() as f64;
    let (spread, skill) = ((spread2 / n).sqrt(), (skill2 / n).sqrt());
    if skill == 0.0 {
        return Err(Error::DegenerateForecast);
    }
    Ok(SpreadSkill { spread, skill, ssr: ssr_factor(b) * spread / skill })
}

/// Finite-ensemble correction `√((M+1)/M)`.
pub fn ssr_factor(members: usize) -> f64 {
    ((members as f64 + 1.0) / members as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaitingTimes {
    /// Gaps between consecutive exceedances, pooled over cells in cell order.
    pub gaps: Vec<u64>,
    /// Log-spaced bin edges `1, 2, 4, …`.
    pub edges: Vec<u64>,
    pub counts: Vec<u64>,
    /// Cells with fewer than two exceedances.
    pub cells_without_gaps: usize,
}

impl WaitingTimes {
    pub fn mean_gap(&self) -> Option<f64> {
        (!self.gaps.is_empty()).then(|| self.gaps.iter().sum::<u64>() as f64 / self.gaps.len() as f64)
    }

    /// Counts normalized by bin width and total count.
    pub fn density(&self) -> Vec<f64> {
        let total = self.gaps.len().max(1) as f64;
        self.counts.iter().zip(self.edges.windows(2)).map(|(&c, e)| c as f64 / ((e[1] - e[0]) as f64 * total)).collect()
    }
}

/// Waiting times between exceedances of per-cell `pct` percentiles taken
/// from `reference`.
pub fn waiting_times(traj: &[Field], reference: &[Field], pct: f64) -> Result<WaitingTimes> {
    let shape = trajectory_shape(traj)?;
    let rshape = trajectory_shape(reference)?;
    if shape != rshape {
        return Err(Error::ShapeMismatch { left: shape.dims(), right: rshape.dims() });
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::Config(format!("percentile {pct} outside [0, 100]")));
    }
    let mut gaps = Vec::new();
    let mut cells_without_gaps = 0;
    let mut sorted = Vec::with_capacity(reference.len());
    for i in 0..shape.len() {
        sorted.clear();
        sorted.extend(reference.iter().map(|f| f.values()[i]));
        sorted.sort_by(f32::total_cmp);
        let threshold = percentile_sorted(&sorted, pct);
        let before = gaps.len();
        let mut last: Option<usize> = None;
        for (t, f) in traj.iter().enumerate() {
            if f.values()[i] as f64 > threshold {
                if let Some(l) = last {
                    gaps.push((t - l) as u64);
                }
                last = Some(t);
            }
        }
        if gaps.len() == before {
            cells_without_gaps += 1;
        }
    }
    let max = gaps.iter().copied().max().unwrap_or(1);
    let mut edges = vec![1u64];
    while *edges.last().unwrap() <= max {
        edges.push(edges.last().unwrap() * 2);
    }
    let mut counts = vec![0u64; edges.len() - 1];
    for &g in &gaps {
        counts[(63 - g.leading_zeros()) as usize] += 1;
    }
    Ok(WaitingTimes { gaps, edges, counts, cells_without_gaps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eof {
    pub shape: FrameShape,
    /// Spatial patterns on the grid (area weighting divided out), one per mode.
    pub modes: Vec<Vec<f64>>,
    /// Fraction of total weighted anomaly variance per mode.
    pub explained: Vec<f64>,
    /// Principal-component time series per mode.
    pub pcs: Vec<Vec<f64>>,
}

/// Leading EOFs of the area-weighted anomalies (rows scaled by `√w`) by the
/// method of snapshots. Each mode's largest-magnitude element is positive.
pub fn eof(traj: &[Field], w: &AreaWeights, n_modes: usize) -> Result<Eof> {
    let shape = trajectory_shape(traj)?;
    let cw = cell_weights(shape, w)?;
    let (n, p) = (traj.len(), shape.len());
    if n_modes == 0 {
        return Err(Error::Config("at least one EOF mode required".into()));
    }
    if n < n_modes {
        return Err(Error::DatasetTooShort { frames: n, required: n_modes });
    }
    let sqrt_w: Vec<f64> = cw.iter().map(|w| w.sqrt()).collect();
    let mut mean = vec![0.0; p];
    for f in traj {
        for (m, &v) in mean.iter_mut().zip(f.values()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let a = DMatrix::from_fn(n, p, |t, i| sqrt_w[i] * (traj[t].values()[i] as f64 - mean[i]));
    let gram = &a * a.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = lambda.iter().sum();
    let rank = lambda.iter().filter(|&&l| l > 1e-10 * lambda[0] && l > 0.0).count();
    if rank < n_modes {
        return Err(Error::RankDeficient { rank, requested: n_modes });
    }
    let mut modes = Vec::with_capacity(n_modes);
    let mut pcs = Vec::with_capacity(n_modes);
    for (k, &col) in order.iter().take(n_modes).enumerate() {
        let v = eig.eigenvectors.column(col);
        let u = a.transpose() * v / lambda[k].sqrt();
        let mut pattern: Vec<f64> = u.iter().zip(&sqrt_w).map(|(u, s)| u / s).collect();
        let mut pc: Vec<f64> = v.iter().map(|v| v * lambda[k].sqrt()).collect();
        let peak = pattern.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            pattern.iter_mut().for_each(|x| *x = -*x);
            pc.iter_mut().for_each(|x| *x = -*x);
        }
        modes.push(pattern);
        pcs.push(pc);
    }
    Ok(Eof { shape, modes, explained: lambda[..n_modes].iter().map(|l| l / total).collect(), pcs })
}

/// Pearson correlation of two equally long vectors.
pub fn pattern_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile confidence interval of the mean by the circular moving-block
/// bootstrap, which respects serial correlation up to `block` steps.
pub fn block_bootstrap_mean_ci(
    series: &[f64],
    block: usize,
    resamples: usize,
    level: f64,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    let n = series.len();
    if n == 0 || block == 0 || resamples == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!(
            "bootstrap needs data, block ≥ 1, resamples ≥ 1 and level in (0, 1); got n={n} block={block} resamples={resamples} level={level}"
        )));
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut s = 0.0;
            let mut taken = 0;
            while taken < n {
                let start = rng.random_range(0..n);
                for k in 0..block.min(n - taken) {
                    s += series[(start + k) % n];
                }
                taken += block.min(n - taken);
            }
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportValue {
    Scalar(f64),
    Array(Vec<f64>),
    Text(String),
}

/// Named results plus provenance, stored as flat UTF-8 `key=value` lines:
/// provenance keys are prefixed `provenance.`, arrays are bracketed
/// comma-separated lists and text values are quoted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub provenance: BTreeMap<String, String>,
    pub entries: BTreeMap<String, ReportValue>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(&mut self, key: impl Into<String>, v: f64) {
        self.entries.insert(key.into(), ReportValue::Scalar(v));
    }

    pub fn array(&mut self, key: impl Into<String>, v: Vec<f64>) {
        self.entries.insert(key.into(), ReportValue::Array(v));
    }

    pub fn text(&mut self, key: impl Into<String>, v: impl Into<String>) {
        self.entries.insert(key.into(), ReportValue::Text(v.into()));
    }

    pub fn get_scalar(&self, key: &str) -> Option<f64> {
        match self.entries.get(key)? {
            ReportValue::Scalar(v) => Some(*v),
            _ => None,
        }
    }

    pub fn get_array(&self, key: &str) -> Option<&[f64]> {
        match self.entries.get(key)? {
            ReportValue::Array(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "provenance.{k}={v}");
        }
        for (k, v) in &self.entries {
            let _ = match v {
                ReportValue::Scalar(x) => writeln!(out, "{k}={x:?}"),
                ReportValue::Array(xs) => writeln!(out, "{k}=[{}]", format_list(xs)),
                ReportValue::Text(s) => writeln!(out, "{k}=\"{s}\""),
            };
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = Self::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed(format!("report line {line:?}")))?;
            if let Some(p) = k.strip_prefix("provenance.") {
                report.provenance.insert(p.into(), v.into());
            } else if let Some(list) = v.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
                report.array(k, parse_list(list)?);
            } else if let Some(s) = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')) {
                report.text(k, s);
            } else {
                let x = v.parse().map_err(|_| Error::Malformed(format!("report value {v:?}")))?;
                report.scalar(k, x);
            }
        }
        Ok(report)
    }

    /// SHA-256 of the serialized report.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{latitude_weights, regular_latitudes, Geometry};
    use crate::rng;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn traj(n: usize, h: usize, w: usize, seed: u64) -> Vec<Field> {
        let mut r = rng::rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let mut v = vec![0.0f32; h * w];
                rng::fill_normal_f32(&mut r, &mut v, 1.0);
                Field::new(FrameShape::new(1, h, w), Geometry::PeriodicBoth, v).unwrap()
            })
            .collect()
    }

    fn from_values(h: usize, w: usize, frames: &[Vec<f32>]) -> Vec<Field> {
        frames
            .iter()
            .map(|v| Field::new(FrameShape::new(1, h, w), Geometry::PeriodicBoth, v.clone()).unwrap())
            .collect()
    }

    fn lat_weights(h: usize) -> AreaWeights {
        latitude_weights(&regular_latitudes(h)).unwrap()
    }

    #[test]
    fn rmse_trivial_cases() {
        let x = traj(3, 4, 4, 1);
        assert_eq!(rmse(&x, &x, &AreaWeights::uniform(4)).unwrap(), 0.0);
        let a = from_values(1, 1, &[vec![1.0]]);
        let b = from_values(1, 1, &[vec![3.0]]);
        assert_eq!(rmse(&a, &b, &AreaWeights::uniform(1)).unwrap(), 2.0);
    }

    #[test]
    fn rmse_matches_triple_loop() {
        let (x, y, w) = (traj(3, 4, 4, 2), traj(3, 4, 4, 3), lat_weights(4));
        let mut acc = 0.0;
        for l in 0..4 {
            for k in 0..4 {
                for n in 0..3 {
                    acc += w.values()[k] * (y[n].at(0, k, l) as f64 - x[n].at(0, k, l) as f64).powi(2);
                }
            }
        }
        let oracle = (acc / 16.0).sqrt();
        assert!((rmse(&x, &y, &w).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        assert!(matches!(rmse(&traj(3, 4, 4, 1), &traj(3, 4, 5, 1), &AreaWeights::uniform(4)), Err(Error::ShapeMismatch { .. })));
        assert!(rmse(&traj(3, 4, 4, 1), &traj(2, 4, 4, 1), &AreaWeights::uniform(4)).is_err());
        assert!(bias_map(&traj(3, 4, 4, 1), &traj(3, 4, 4, 1), &AreaWeights::uniform(3)).is_err());
    }

    #[test]
    fn bias_trivial_cases_and_oracle() {
        let x = traj(5, 3, 4, 4);
        let zero = bias_map(&x, &x, &AreaWeights::uniform(3)).unwrap();
        assert!(zero.values.iter().all(|&b| b == 0.0));
        let shifted: Vec<Field> = x.iter().map(|f| f.map(|v| v + 0.5).unwrap()).collect();
        let b = bias_map(&x, &shifted, &AreaWeights::uniform(3)).unwrap();
        assert!(b.values.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!((b.global_mean - 0.5).abs() < 1e-6 && (b.mean_abs - 0.5).abs() < 1e-6);

        let (y, w) = (traj(5, 3, 4, 5), lat_weights(3));
        let b = bias_map(&x, &y, &w).unwrap();
        let mut mean_abs = 0.0;
        for k in 0..3 {
            for l in 0..4 {
                let oracle = (0..5).map(|n| y[n].at(0, k, l) as f64 - x[n].at(0, k, l) as f64).sum::<f64>() / 5.0;
                assert!((b.values[k * 4 + l] - oracle).abs() < 1e-12);
                mean_abs += w.values()[k] * oracle.abs();
            }
        }
        assert!((b.mean_abs - mean_abs / 12.0).abs() < 1e-12);
    }

    fn ar1(n: usize, cells: usize, phi: f64, seed: u64) -> Vec<Field> {
        let mut r = rng::rng_from_seed(seed);
        let mut state: Vec<f64> = (0..cells).map(|_| rng::normal(&mut r) / (1.0 - phi * phi).sqrt()).collect();
        (0..n)
            .map(|_| {
                let f = Field::new(FrameShape::new(1, 1, cells), Geometry::PeriodicBoth, state.iter().map(|&v| v as f32).collect()).unwrap();
                state.iter_mut().for_each(|s| *s = phi * *s + rng::normal(&mut r));
                f
            })
            .collect()
    }

    #[test]
    fn acf_starts_at_one_and_follows_ar1() {
        let x = ar1(4000, 16, 0.8, 6);
        let a = acf(&x, &AreaWeights::uniform(1), 6, None).unwrap();
        assert!((a.values[0] - 1.0).abs() < 1e-12);
        for (j, v) in a.values.iter().enumerate() {
            assert!((v - 0.8f64.powi(j as i32)).abs() < 0.04, "lag {j}: {v}");
        }
    }

    #[test]
    fn acf_of_white_noise_is_small() {
        let x = traj(400, 4, 4, 7);
        let a = acf(&x, &AreaWeights::uniform(4), 5, None).unwrap();
        for v in &a.values[1..] {
            assert!(v.abs() < 3.0 / 400f64.sqrt());
        }
    }

    #[test]
    fn acf_excludes_constant_cells_and_removes_seasons() {
        let mut r = rng::rng_from_seed(8);
        let n = 1200;
        let labels: Vec<u32> = (0..n as u32).map(|t| t % 12).collect();
        let frames: Vec<Vec<f32>> = (0..n)
            .map(|t| {
                let season = 5.0 * (2.0 * std::f64::consts::PI * (t % 12) as f64 / 12.0).sin();
                vec![(season + rng::normal(&mut r)) as f32, 3.25]
            })
            .collect();
        let x = from_values(1, 2, &frames);
        let raw = acf(&x, &AreaWeights::uniform(1), 1, None).unwrap();
        assert_eq!(raw.excluded_cells, 1);
        assert!(raw.values[1] > 0.5);
        let adjusted = acf(&x, &AreaWeights::uniform(1), 1, Some(&labels)).unwrap();
        assert!(adjusted.values[1].abs() < 3.0 / (n as f64).sqrt());
        assert!(matches!(acf(&x[..1], &AreaWeights::uniform(1), 1, None), Err(Error::DatasetTooShort { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn acf_is_bounded(seed in 0u64..1000, lag in 1usize..8) {
            let x = ar1(20, 3, 0.3, seed);
            let a = acf(&x, &AreaWeights::uniform(1), lag, None).unwrap();
            prop_assert!(a.values.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        }

        #[test]
        fn w1_is_symmetric_and_satisfies_the_triangle_inequality(seed in 0u64..1000, k in 2usize..12) {
            let mut r = rng::rng_from_seed(seed);
            let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..k).map(|_| rng::normal(&mut r)).collect()).collect();
            let d = |a: usize, b: usize| w1_rows(&rows[a], &rows[b]).unwrap();
            prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-15);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        }

        #[test]
        fn crps_is_non_negative(seed in 0u64..1000, b in 1usize..6) {
            let ens = random_ensemble(2, b, 2, 3, 3, seed);
            for j in 0..2 {
                prop_assert!(crps(&ens, j).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn hovmoeller_bands() {
        let x = traj(6, 4, 5, 9);
        let full = hovmoeller(&x, Band::Columns { start: 0, count: 5 }).unwrap();
        for (t, f) in x.iter().enumerate() {
            let row_mean = full.row(t).iter().sum::<f64>() / 4.0;
            assert!((row_mean - f.mean()).abs() < 1e-6);
        }
        let single = hovmoeller(&x, Band::Columns { start: 2, count: 1 }).unwrap();
        for (t, f) in x.iter().enumerate() {
            for k in 0..4 {
                assert_eq!(single.row(t)[k], f.at(0, k, 2) as f64);
            }
        }
        let rows = hovmoeller(&x, Band::Rows { start: 1, count: 1 }).unwrap();
        assert_eq!(rows.positions, 5);
        assert_eq!(rows.row(3)[4], x[3].at(0, 1, 4) as f64);
        assert!(hovmoeller(&x, Band::Columns { start: 0, count: 0 }).is_err());
        assert!(hovmoeller(&x, Band::Rows { start: 3, count: 2 }).is_err());
        assert_eq!(Band::center_columns(64, 10), Band::Columns { start: 27, count: 10 });
        let lats = regular_latitudes(18);
        assert_eq!(Band::latitude_rows(&lats, -10.0, 10.0).unwrap(), Band::Rows { start: 8, count: 2 });
    }

    #[test]
    fn w1_closed_forms() {
        let row = [0.2, -0.5, 1.0];
        assert_eq!(w1_rows(&row, &row).unwrap(), 0.0);
        for k in 2..9 {
            let mut p = vec![0.0; k];
            let mut q = vec![0.0; k];
            p[0] = 1.0;
            q[k - 1] = 3.0;
            assert!((w1_rows(&p, &q).unwrap() - (k - 1) as f64 / k as f64).abs() < 1e-15);
        }
        let hov = Hovmoeller { band: Band::Rows { start: 0, count: 1 }, times: 3, positions: 2, values: vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0] };
        assert!(matches!(w1_consecutive(&hov), Err(Error::DegenerateDistribution { row: 1 })));
    }

    /// Earth mover's distance by the transport linear program with ground
    /// distance `|i − j|/K`.
    fn transport_lp(p: &[f64], q: &[f64]) -> f64 {
        use minilp::{ComparisonOp, OptimizationDirection, Problem};
        let k = p.len();
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<Vec<_>> = (0..k)
            .map(|i| (0..k).map(|j| lp.add_var((i as f64 - j as f64).abs() / k as f64, (0.0, f64::INFINITY))).collect())
            .collect();
        for i in 0..k {
            lp.add_constraint(vars[i].iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, p[i]);
            lp.add_constraint((0..k).map(|j| (vars[j][i], 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, q[i]);
        }
        lp.solve().unwrap().objective()
    }

    #[test]
    fn w1_matches_transport_linear_program() {
        let mut r = rng::rng_from_seed(10);
        for k in 2..=8 {
            for _ in 0..10 {
                let p: Vec<f64> = (0..k).map(|_| rng::normal(&mut r)).collect();
                let q: Vec<f64> = (0..k).map(|_| rng::normal(&mut r)).collect();
                let norm = |v: &[f64]| {
                    let s: f64 = v.iter().map(|x| x.abs()).sum();
                    v.iter().map(|x| x.abs() / s).collect::<Vec<_>>()
                };
                let oracle = transport_lp(&norm(&p), &norm(&q));
                assert!((w1_rows(&p, &q).unwrap() - oracle).abs() < 1e-9, "k={k}");
            }
        }
    }

    fn random_ensemble(forecasts: usize, members: usize, leads: usize, h: usize, w: usize, seed: u64) -> EnsembleForecast {
        let values = (0..forecasts)
            .map(|f| (0..members).map(|b| traj(leads, h, w, seed * 1000 + (f * members + b) as u64)).collect())
            .collect();
        let truth = (0..forecasts).map(|f| traj(leads, h, w, seed * 1000 + 999 - f as u64)).collect();
        EnsembleForecast::new(values, truth, lat_weights(h)).unwrap()
    }

    #[test]
    fn crps_trivial_cases() {
        let ens = random_ensemble(3, 1, 2, 3, 4, 11);
        for j in 0..2 {
            let mut oracle = 0.0;
            for f in 0..3 {
                let x: Vec<Field> = vec![ens.member(f, 0, j).clone()];
                let y: Vec<Field> = vec![ens.truth(f, j).clone()];
                let diff: Vec<f64> = x[0].values().iter().zip(y[0].values()).map(|(a, b)| (*a as f64 - *b as f64).abs()).collect();
                oracle += diff.iter().enumerate().map(|(i, d)| ens.weights.values()[i / 4] * d).sum::<f64>() / 12.0;
            }
            assert!((crps(&ens, j).unwrap() - oracle / 3.0).abs() < 1e-12);
        }
        let truth = traj(2, 3, 4, 12);
        let perfect = EnsembleForecast::new(vec![vec![truth.clone(); 4]], vec![truth], AreaWeights::uniform(3)).unwrap();
        assert_eq!(crps(&perfect, 1).unwrap(), 0.0);
        assert!(crps(&perfect, 2).is_err());
    }

    #[test]
    fn crps_matches_double_loop() {
        let ens = random_ensemble(2, 3, 2, 3, 2, 13);
        let w = ens.weights.values().to_vec();
        for j in 0..2 {
            let mut total = 0.0;
            for f in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..2 {
                        let y = ens.truth(f, j).at(0, k, l) as f64;
                        let x: Vec<f64> = (0..3).map(|b| ens.member(f, b, j).at(0, k, l) as f64).collect();
                        let mut term = x.iter().map(|v| (v - y).abs()).sum::<f64>() / 3.0;
                        for a in &x {
                            for b in &x {
                                term -= (a - b).abs() / 18.0;
                            }
                        }
                        acc += w[k] * term;
                    }
                }
                total += acc / 6.0;
            }
            assert!((crps(&ens, j).unwrap() - total / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssr_is_one_for_a_perfectly_calibrated_ensemble() {
        for (b, forecasts) in [(8, 40), (50, 10)] {
            let ens = random_ensemble(forecasts, b, 1, 48, 48, 14 + b as u64);
            let s = spread_skill_ratio(&ens, 0).unwrap();
            assert!((s.ssr - 1.0).abs() < 0.05, "B={b}: {}", s.ssr);
        }
    }

    #[test]
    fn ssr_degenerate_cases() {
        assert!((ssr_factor(50) - 1.00995049383620).abs() < 1e-12);
        let truth = traj(1, 3, 3, 15);
        let member = traj(1, 3, 3, 16);
        let ens = EnsembleForecast::new(vec![vec![member.clone(); 3]], vec![truth.clone()], AreaWeights::uniform(3)).unwrap();
        assert_eq!(spread_skill_ratio(&ens, 0).unwrap().ssr, 0.0);
        let perfect = EnsembleForecast::new(vec![vec![truth.clone(); 3]], vec![truth.clone()], AreaWeights::uniform(3)).unwrap();
        assert!(matches!(spread_skill_ratio(&perfect, 0), Err(Error::DegenerateForecast)));
        let single = EnsembleForecast::new(vec![vec![member]], vec![truth], AreaWeights::uniform(3)).unwrap();
        assert!(spread_skill_ratio(&single, 0).is_err());
    }

    #[test]
    fn ensemble_requires_truth() {
        let x = traj(3, 2, 2, 17);
        assert!(matches!(EnsembleForecast::new(vec![vec![x.clone()]], vec![], AreaWeights::uniform(2)), Err(Error::Missing(_))));
        assert!(EnsembleForecast::new(vec![vec![x.clone()]], vec![x[..2].to_vec()], AreaWeights::uniform(2)).is_err());
    }

    #[test]
    fn waiting_times_of_permanent_exceedance_are_one() {
        let reference = from_values(1, 2, &[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let traj = from_values(1, 2, &vec![vec![5.0, 5.0]; 10]);
        let wt = waiting_times(&traj, &reference, 95.0).unwrap();
        assert_eq!(wt.gaps.len(), 18);
        assert!(wt.gaps.iter().all(|&g| g == 1));
        assert_eq!(wt.counts[0], 18);
        assert_eq!(wt.cells_without_gaps, 0);
    }

    #[test]
    fn bernoulli_exceedances_have_geometric_gaps() {
        let cells = 16;
        let reference = from_values(1, cells, &(0..100).map(|i| vec![i as f32 / 100.0; cells]).collect::<Vec<_>>());
        let mut r = rng::rng_from_seed(18);
        let frames: Vec<Vec<f32>> =
            (0..2000).map(|_| (0..cells).map(|_| if r.random::<f64>() < 0.05 { 1.0 } else { 0.0 }).collect()).collect();
        let wt = waiting_times(&from_values(1, cells, &frames), &reference, 95.0).unwrap();
        let mean = wt.mean_gap().unwrap();
        let se = (0.95f64).sqrt() / 0.05 / (wt.gaps.len() as f64).sqrt();
        assert!((mean - 20.0).abs() < 4.0 * se, "mean gap {mean}");
        let density_mass: f64 = wt.density().iter().zip(wt.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0]) as f64).sum();
        assert!((density_mass - 1.0).abs() < 1e-12);
        let silent = from_values(1, cells, &vec![vec![0.0; cells]; 5]);
        assert_eq!(waiting_times(&silent, &reference, 95.0).unwrap().cells_without_gaps, cells);
    }

    fn low_rank(n: usize, patterns: &[Vec<f64>], scales: &[f64], noise: f64, seed: u64) -> Vec<Field> {
        let mut r = rng::rng_from_seed(seed);
        let p = patterns[0].len();
        (0..n)
            .map(|_| {
                let amps: Vec<f64> = scales.iter().map(|s| s * rng::normal(&mut r)).collect();
                let v = (0..p)
                    .map(|i| (patterns.iter().zip(&amps).map(|(pat, a)| a * pat[i]).sum::<f64>() + noise * rng::normal(&mut r)) as f32)
                    .collect();
                Field::new(FrameShape::new(1, 4, p / 4), Geometry::PeriodicBoth, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn eof_of_rank_one_data() {
        let pattern: Vec<f64> = (0..24).map(|i| ((i as f64) * 0.7).sin()).collect();
        let x = low_rank(30, std::slice::from_ref(&pattern), &[2.0], 0.0, 19);
        let e = eof(&x, &AreaWeights::uniform(4), 1).unwrap();
        assert!((e.explained[0] - 1.0).abs() < 1e-9);
        assert!((pattern_correlation(&e.modes[0], &pattern).abs() - 1.0).abs() < 1e-9);
        assert!(matches!(eof(&x, &AreaWeights::uniform(4), 3), Err(Error::RankDeficient { rank: 1, requested: 3 })));
        assert!(matches!(eof(&x[..2], &AreaWeights::uniform(4), 3), Err(Error::DatasetTooShort { .. })));
    }

    #[test]
    fn eof_recovers_known_modes_with_sign_convention() {
        let p = 32;
        let patterns: Vec<Vec<f64>> = (1..=3)
            .map(|m| (0..p).map(|i| (2.0 * std::f64::consts::PI * m as f64 * i as f64 / p as f64).cos()).collect())
            .collect();
        let x = low_rank(400, &patterns, &[3.0, 2.0, 1.0], 0.05, 20);
        let e = eof(&x, &AreaWeights::uniform(4), 3).unwrap();
        for (m, pat) in patterns.iter().enumerate() {
            assert!(pattern_correlation(&e.modes[m], pat).abs() > 0.99, "mode {m}");
            let peak = e.modes[m].iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(peak > 0.0);
        }
        assert!(e.explained.windows(2).all(|w| w[0] >= w[1]));
        assert!(e.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn bootstrap_interval_covers_the_mean_and_is_reproducible() {
        let mut r = rng::rng_from_seed(21);
        let series: Vec<f64> = (0..500).map(|_| 1.0 + rng::normal(&mut r)).collect();
        let ci = block_bootstrap_mean_ci(&series, 10, 500, 0.95, &mut rng::rng_from_seed(1)).unwrap();
        assert!(ci.0 < 1.0 && 1.0 < ci.1 && ci.1 - ci.0 < 0.5);
        assert_eq!(ci, block_bootstrap_mean_ci(&series, 10, 500, 0.95, &mut rng::rng_from_seed(1)).unwrap());
        assert!(block_bootstrap_mean_ci(&[], 1, 1, 0.9, &mut r).is_err());
    }

    #[test]
    fn report_round_trips_and_hashes_deterministically() {
        let mut rep = MetricReport::new();
        rep.provenance.insert("config_hash".into(), "abc".into());
        rep.scalar("rmse", 0.1 + 0.2);
        rep.array("acf", vec![1.0, 0.5, -1e-300]);
        rep.text("band", "columns 27..37");
        let text = rep.to_text();
        let back = MetricReport::from_text(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.hash(), rep.hash());
        assert_eq!(rep.hash().len(), 64);
        rep.scalar("rmse", 0.3);
        assert_ne!(back.hash(), rep.hash());
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
