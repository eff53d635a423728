//! Pseudo-spectral solver for 2D incompressible Navier-Stokes in
//! vorticity-streamfunction form on the doubly periodic domain [0, 2π)².
//!
//! Spectral arrays are stored row-major as `L x (L/2 + 1)`: rows are the
//! `k_y` index (FFT order), columns the non-negative `k_x` half-plane of a
//! real-to-complex transform. Forward transforms are unnormalized; the
//! inverse divides by `L²`.
//!
//! Sign conventions: `ψ̂ = −ζ̂/k²`, `u = −∂ψ/∂y`, `v = ∂ψ/∂x`, so that
//! `ζ = ∂v/∂x − ∂u/∂y`.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Field, FrameShape, Geometry, Split, TrajectoryDataset};
use crate::rng::{self, SimRng};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Grid points per side.
    pub grid: usize,
    pub dt: f64,
    /// Hyperviscosity coefficient.
    pub nu: f64,
    /// Laplacian power `p` of the dissipation term `ν k^{2p}`.
    pub hyper_order: u32,
    /// Linear drag.
    pub mu: f64,
    /// Forcing wavenumber in integer units of the fundamental mode.
    pub k_f: f64,
    /// Half-width of the forcing annulus, same units as `k_f`.
    pub delta_f: f64,
    /// Target energy injection rate.
    pub eps_inject: f64,
    pub subsample: usize,
    pub spinup_steps: usize,
    /// Number of saved frames.
    pub frames: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Reference configuration at 256².
    pub fn reference() -> Self {
        Self {
            grid: 256,
            dt: 0.005,
            nu: 2e-7,
            hyper_order: 2,
            mu: 0.1,
            k_f: 6.0,
            delta_f: 1.5,
            eps_inject: 0.1,
            subsample: 4,
            spinup_steps: 500,
            frames: 5000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("sim.dt must be positive, got {}", self.dt));
        }
        if !(self.nu >= 0.0) || !(self.mu >= 0.0) {
            return bad(format!("sim.nu and sim.mu must be non-negative, got {} and {}", self.nu, self.mu));
        }
        if self.grid < 4 || !self.grid.is_power_of_two() {
            return bad(format!("sim.grid must be a power of two >= 4, got {}", self.grid));
        }
        if !(self.k_f > 0.0) || self.k_f >= (self.grid / 2) as f64 {
            return bad(format!("sim.k_f = {} must lie in (0, {})", self.k_f, self.grid / 2));
        }
        if !(self.delta_f >= 0.0) || !(self.eps_inject >= 0.0) {
            return bad("sim.delta_f and sim.eps_inject must be non-negative".into());
        }
        if self.subsample == 0 {
            return bad("sim.subsample must be at least 1".into());
        }
        Ok(())
    }

    pub fn dissipation(&self, k2: f64) -> f64 {
        self.nu * k2.powi(self.hyper_order as i32) + self.mu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub zeta_hat: Vec<Complex64>,
    pub forcing_hat: Vec<Complex64>,
    pub t_model: f64,
    pub step: u64,
}

/// Owns FFT plans, wavenumber tables and scratch space for one grid size.
pub struct Solver {
    cfg: SimConfig,
    n: usize,
    nc: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<f64>,
    damping: Vec<f64>,
    annulus: Vec<usize>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
    scratch: Scratch,
}

#[derive(Default)]
struct Scratch {
    colbuf: Vec<Complex64>,
    rowbuf: Vec<Complex64>,
    fft: Vec<Complex64>,
    real: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    zeta: Vec<f64>,
    spectrum: Vec<Complex64>,
    flux_x: Vec<Complex64>,
    flux_y: Vec<Complex64>,
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl Solver {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid;
        let nc = n / 2 + 1;
        let kx: Vec<f64> = (0..nc).map(|j| j as f64).collect();
        let ky: Vec<f64> = (0..n)
            .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        let cutoff = (n / 3) as f64;
        let mut k2 = vec![0.0; n * nc];
        let mut mask = vec![0.0; n * nc];
        let mut damping = vec![0.0; n * nc];
        let mut annulus = Vec::new();
        for i in 0..n {
            for j in 0..nc {
                let idx = i * nc + j;
                let kk = kx[j] * kx[j] + ky[i] * ky[i];
                k2[idx] = kk;
                let keep = kx[j].abs() <= cutoff && ky[i].abs() <= cutoff && i != n / 2;
                mask[idx] = if keep { 1.0 } else { 0.0 };
                damping[idx] = cfg.dissipation(kk);
                let k = kk.sqrt();
                // Half-plane representatives only; the k_x = 0 column keeps k_y > 0.
                let representative = j > 0 || (i > 0 && i < n / 2);
                if keep && representative && (k - cfg.k_f).abs() <= cfg.delta_f {
                    annulus.push(idx);
                }
            }
        }
        if cfg.eps_inject > 0.0 && annulus.is_empty() {
            return Err(Error::Config(format!(
                "forcing annulus |k - {}| <= {} contains no resolved modes on a {}-point grid",
                cfg.k_f, cfg.delta_f, n
            )));
        }
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Ok(Self {
            cfg: cfg.clone(),
            n,
            nc,
            kx,
            ky,
            k2,
            mask,
            damping,
            annulus,
            r2c: rp.plan_fft_forward(n),
            c2r: rp.plan_fft_inverse(n),
            fft_y: cp.plan_fft_forward(n),
            ifft_y: cp.plan_fft_inverse(n),
            scratch: Scratch::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn spectral_len(&self) -> usize {
        self.n * self.nc
    }

    pub fn index(&self, ky: i64, kx: usize) -> usize {
        let row = ky.rem_euclid(self.n as i64) as usize;
        row * self.nc + kx
    }

    pub fn annulus_len(&self) -> usize {
        self.annulus.len()
    }

    pub fn zero_state(&self) -> SpectralState {
        SpectralState {
            zeta_hat: vec![ZERO; self.spectral_len()],
            forcing_hat: vec![ZERO; self.spectral_len()],
            t_model: 0.0,
            step: 0,
        }
    }

    /// Unnormalized 2D forward transform of a real `L x L` field.
    pub fn forward(&mut self, real: &[f64], out: &mut [Complex64]) {
        let (n, nc) = (self.n, self.nc);
        assert_eq!(real.len(), n * n);
        assert_eq!(out.len(), n * nc);
        let s = &mut self.scratch;
        s.real.resize(n, 0.0);
        s.rowbuf.resize(nc, ZERO);
        for y in 0..n {
            s.real.copy_from_slice(&real[y * n..(y + 1) * n]);
            self.r2c
                .process(&mut s.real, &mut s.rowbuf)
                .expect("buffer sizes match the plan");
            out[y * nc..(y + 1) * nc].copy_from_slice(&s.rowbuf);
        }
        self.columns(out, true);
    }

    /// Normalized inverse transform back to a real `L x L` field.
    pub fn inverse(&mut self, spectrum: &[Complex64], out: &mut [f64]) {
        let (n, nc) = (self.n, self.nc);
        assert_eq!(spectrum.len(), n * nc);
        assert_eq!(out.len(), n * n);
        let mut work = std::mem::take(&mut self.scratch.fft);
        work.clear();
        work.extend_from_slice(spectrum);
        self.columns(&mut work, false);
        let s = &mut self.scratch;
        s.rowbuf.resize(nc, ZERO);
        s.real.resize(n, 0.0);
        let norm = 1.0 / (n * n) as f64;
        for y in 0..n {
            s.rowbuf.copy_from_slice(&work[y * nc..(y + 1) * nc]);
            s.rowbuf[0].im = 0.0;
            s.rowbuf[nc - 1].im = 0.0;
            self.c2r
                .process(&mut s.rowbuf, &mut s.real)
                .expect("buffer sizes match the plan");
            for (o, v) in out[y * n..(y + 1) * n].iter_mut().zip(&s.real) {
                *o = v * norm;
            }
        }
        self.scratch.fft = work;
    }

    fn columns(&mut self, data: &mut [Complex64], forward: bool) {
        let (n, nc) = (self.n, self.nc);
        let s = &mut self.scratch;
        s.colbuf.resize(n * nc, ZERO);
        for y in 0..n {
            for x in 0..nc {
                s.colbuf[x * n + y] = data[y * nc + x];
            }
        }
        if forward {
            self.fft_y.process(&mut s.colbuf);
        } else {
            self.ifft_y.process(&mut s.colbuf);
        }
        for x in 0..nc {
            for y in 0..n {
                data[y * nc + x] = s.colbuf[x * n + y];
            }
        }
    }

    /// Largest imaginary part left by a full complex inverse of the
    /// Hermitian extension of `spectrum`, relative to the largest real part.
    pub fn imaginary_residue(&self, spectrum: &[Complex64]) -> f64 {
        let n = self.n;
        let mut full = vec![ZERO; n * n];
        for i in 0..n {
            for x in 0..n {
                full[i * n + x] = if x < self.nc {
                    spectrum[i * self.nc + x]
                } else {
                    spectrum[((n - i) % n) * self.nc + (n - x)].conj()
                };
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_inverse(n);
        fft.process(&mut full);
        let mut t = vec![ZERO; n * n];
        for y in 0..n {
            for x in 0..n {
                t[x * n + y] = full[y * n + x];
            }
        }
        fft.process(&mut t);
        let re = t.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
        let im = t.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        if re > 0.0 {
            im / re
        } else {
            im
        }
    }

    fn weight(&self, idx: usize) -> f64 {
        let j = idx % self.nc;
        if j == 0 || j == self.nc - 1 {
            1.0
        } else {
            2.0
        }
    }

    /// Kinetic energy `½⟨u² + v²⟩`.
    pub fn energy(&self, zeta_hat: &[Complex64]) -> f64 {
        let norm = 1.0 / ((self.n * self.n) as f64).powi(2);
        let mut e = 0.0;
        for (idx, z) in zeta_hat.iter().enumerate() {
            if self.k2[idx] > 0.0 {
                e += self.weight(idx) * z.norm_sqr() / self.k2[idx];
            }
        }
        0.5 * e * norm
    }

    /// Enstrophy `½⟨ζ²⟩`.
    pub fn enstrophy(&self, zeta_hat: &[Complex64]) -> f64 {
        let norm = 1.0 / ((self.n * self.n) as f64).powi(2);
        let e: f64 = zeta_hat
            .iter()
            .enumerate()
            .map(|(idx, z)| self.weight(idx) * z.norm_sqr())
            .sum();
        0.5 * e * norm
    }

    /// Energy injection rate of the current forcing draw:
    /// `−⟨ψ F⟩ + ½ dt Σ |F̂|²/k²` (the second term is the Itô correction of
    /// white-in-time forcing held over one step).
    pub fn injection_rate(&self, state: &SpectralState) -> f64 {
        let norm = 1.0 / ((self.n * self.n) as f64).powi(2);
        let mut corr = 0.0;
        let mut ito = 0.0;
        for idx in 0..self.spectral_len() {
            let k2 = self.k2[idx];
            if k2 == 0.0 {
                continue;
            }
            let w = self.weight(idx);
            let f = state.forcing_hat[idx];
            let psi = -state.zeta_hat[idx] / k2;
            corr += w * (psi * f.conj()).re;
            ito += w * f.norm_sqr() / k2;
        }
        (-corr + 0.5 * self.cfg.dt * ito) * norm
    }

    /// Spectral tendency `∂ζ̂/∂t` for the given vorticity and forcing.
    pub fn rhs(&mut self, zeta_hat: &[Complex64], forcing_hat: &[Complex64], out: &mut [Complex64]) {
        let (n, nc) = (self.n, self.nc);
        let len = n * nc;
        let mut s = std::mem::take(&mut self.scratch);
        s.spectrum.resize(len, ZERO);
        s.flux_x.resize(len, ZERO);
        s.flux_y.resize(len, ZERO);
        s.u.resize(n * n, 0.0);
        s.v.resize(n * n, 0.0);
        s.zeta.resize(n * n, 0.0);
        let i = Complex64::i();

        for idx in 0..len {
            let k2 = self.k2[idx];
            let psi = if k2 > 0.0 { -zeta_hat[idx] / k2 } else { ZERO };
            s.spectrum[idx] = -i * self.ky[idx / nc] * psi;
        }
        let (mut u, mut v, mut zeta) = (
            std::mem::take(&mut s.u),
            std::mem::take(&mut s.v),
            std::mem::take(&mut s.zeta),
        );
        let spectrum = std::mem::take(&mut s.spectrum);
        self.scratch = s;
        self.inverse(&spectrum, &mut u);
        let mut spectrum = spectrum;
        for idx in 0..len {
            let k2 = self.k2[idx];
            let psi = if k2 > 0.0 { -zeta_hat[idx] / k2 } else { ZERO };
            spectrum[idx] = i * self.kx[idx % nc] * psi;
        }
        self.inverse(&spectrum, &mut v);
        self.inverse(zeta_hat, &mut zeta);

        for p in 0..n * n {
            u[p] *= zeta[p];
            v[p] *= zeta[p];
        }
        let mut s = std::mem::take(&mut self.scratch);
        let (mut fx, mut fy) = (std::mem::take(&mut s.flux_x), std::mem::take(&mut s.flux_y));
        self.scratch = s;
        self.forward(&u, &mut fx);
        self.forward(&v, &mut fy);

        for idx in 0..len {
            let adv = i * self.kx[idx % nc] * fx[idx] + i * self.ky[idx / nc] * fy[idx];
            out[idx] = -adv * self.mask[idx] - self.damping[idx] * zeta_hat[idx] + forcing_hat[idx];
        }
        out[0] = ZERO;

        let s = &mut self.scratch;
        s.u = u;
        s.v = v;
        s.zeta = zeta;
        s.spectrum = spectrum;
        s.flux_x = fx;
        s.flux_y = fy;
    }

    /// One classical RK4 step with the forcing frozen across stages.
    pub fn rk4_step(&mut self, state: &mut SpectralState) -> Result<()> {
        let len = self.spectral_len();
        let dt = self.cfg.dt;
        let mut s = std::mem::take(&mut self.scratch);
        for b in [&mut s.k1, &mut s.k2, &mut s.k3, &mut s.k4, &mut s.stage] {
            b.resize(len, ZERO);
        }
        let (mut k1, mut k2, mut k3, mut k4, mut stage) = (
            std::mem::take(&mut s.k1),
            std::mem::take(&mut s.k2),
            std::mem::take(&mut s.k3),
            std::mem::take(&mut s.k4),
            std::mem::take(&mut s.stage),
        );
        self.scratch = s;
        let z = &state.zeta_hat;
        let f = &state.forcing_hat;

        self.rhs(z, f, &mut k1);
        for p in 0..len {
            stage[p] = z[p] + 0.5 * dt * k1[p];
        }
        self.rhs(&stage, f, &mut k2);
        for p in 0..len {
            stage[p] = z[p] + 0.5 * dt * k2[p];
        }
        self.rhs(&stage, f, &mut k3);
        for p in 0..len {
            stage[p] = z[p] + dt * k3[p];
        }
        self.rhs(&stage, f, &mut k4);

        let z = &mut state.zeta_hat;
        for p in 0..len {
            z[p] += dt / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
            z[p] *= self.mask[p];
        }
        z[0] = ZERO;
        self.enforce_hermitian(z);
        state.t_model += dt;
        state.step += 1;

        let s = &mut self.scratch;
        s.k1 = k1;
        s.k2 = k2;
        s.k3 = k3;
        s.k4 = k4;
        s.stage = stage;

        if state.zeta_hat.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::SimulationBlowUp { step: state.step });
        }
        Ok(())
    }

    /// Makes the self-conjugate columns (`k_x = 0` and Nyquist) consistent
    /// with a real field.
    pub fn enforce_hermitian(&self, spectrum: &mut [Complex64]) {
        let (n, nc) = (self.n, self.nc);
        for col in [0, nc - 1] {
            for i in 0..=n / 2 {
                let a = i * nc + col;
                let b = ((n - i) % n) * nc + col;
                if a == b {
                    spectrum[a].im = 0.0;
                } else {
                    let m = 0.5 * (spectrum[a] + spectrum[b].conj());
                    spectrum[a] = m;
                    spectrum[b] = m.conj();
                }
            }
        }
    }

    /// Draws a new white-in-time forcing on the annulus, scaled so that the
    /// injection rate of this draw is exactly `eps_inject`.
    pub fn refresh_forcing(&self, state: &mut SpectralState, rng: &mut SimRng) -> Result<()> {
        state.forcing_hat.iter_mut().for_each(|c| *c = ZERO);
        if self.cfg.eps_inject == 0.0 {
            return Ok(());
        }
        if self.annulus.is_empty() {
            return Err(Error::Config("forcing annulus is empty".into()));
        }
        let mut budget = 0.0;
        for &idx in &self.annulus {
            let c = Complex64::new(rng::normal(rng), rng::normal(rng));
            state.forcing_hat[idx] = c;
            // Representatives stand for themselves and their conjugate partner.
            budget += 2.0 * c.norm_sqr() / self.k2[idx];
        }
        let full = ((self.n * self.n) as f64).powi(2);
        // ½ Σ|ξ̂|²/k² / L⁴ = ε, and F = ξ / √dt.
        let scale = (2.0 * self.cfg.eps_inject * full / budget).sqrt() / self.cfg.dt.sqrt();
        let nc = self.nc;
        for &idx in &self.annulus {
            state.forcing_hat[idx] *= scale;
            if idx % nc == 0 {
                let row = idx / nc;
                let partner = ((self.n - row) % self.n) * nc;
                state.forcing_hat[partner] = state.forcing_hat[idx].conj();
            }
        }
        Ok(())
    }

    pub fn vorticity(&mut self, state: &SpectralState) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        self.inverse(&state.zeta_hat, &mut out);
        out
    }
}

/// Runs spin-up, then integrates and saves every `subsample`-th step as a
/// real-space vorticity frame.
pub fn simulate(cfg: &SimConfig) -> Result<TrajectoryDataset> {
    simulate_with(cfg, |_, _| {})
}

/// As [`simulate`], calling `observe(step, kinetic_energy)` after every
/// saved frame.
pub fn simulate_with(cfg: &SimConfig, mut observe: impl FnMut(u64, f64)) -> Result<TrajectoryDataset> {
    let mut solver = Solver::new(cfg)?;
    let mut rng = rng::stream(cfg.seed, &[0x5157]);
    let mut state = solver.zero_state();
    for _ in 0..cfg.spinup_steps {
        solver.refresh_forcing(&mut state, &mut rng)?;
        solver.rk4_step(&mut state)?;
    }
    let shape = FrameShape::new(1, cfg.grid, cfg.grid);
    let mut frames = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        for _ in 0..cfg.subsample {
            solver.refresh_forcing(&mut state, &mut rng)?;
            solver.rk4_step(&mut state)?;
        }
        observe(state.step, solver.energy(&state.zeta_hat));
        let values = solver.vorticity(&state).into_iter().map(|v| v as f32).collect();
        frames.push(Field::new(shape, Geometry::PeriodicBoth, values)?);
    }
    let mut ds = TrajectoryDataset::new(
        shape,
        Geometry::PeriodicBoth,
        frames,
        cfg.subsample as f64 * cfg.dt,
        Split::Train,
    )?;
    ds.attributes.insert("source".into(), "spectral_vorticity".into());
    ds.attributes.insert("sim.seed".into(), cfg.seed.to_string());
    Ok(ds)
}
