//! Desk-scale simulation run: 64², 5000 saved frames after spin-up.

use dynaguide_core::spectral::{simulate_with, SimConfig};

fn desk() -> SimConfig {
    SimConfig { grid: 64, nu: 5e-5, spinup_steps: 4000, frames: 5000, seed: 0, ..SimConfig::reference() }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Kinetic energy is statistically stationary: no 1000-frame window mean
/// drifts from the first window's by more than 3× the within-window scatter.
#[test]
fn desk_run_reaches_stationarity() {
    let cfg = desk();
    let mut energy = Vec::with_capacity(cfg.frames);
    let ds = simulate_with(&cfg, |_, e| energy.push(e)).unwrap();
    assert_eq!(ds.len(), 5000);
    assert_eq!(energy.len(), 5000);
    assert!(energy.iter().all(|e| e.is_finite() && *e > 0.0));

    let windows: Vec<(f64, f64)> = energy.chunks(1000).map(mean_std).collect();
    let scatter = windows.iter().map(|w| w.1).sum::<f64>() / windows.len() as f64;
    let first = windows[0].0;
    for (i, (m, _)) in windows.iter().enumerate() {
        assert!((m - first).abs() <= 3.0 * scatter, "window {i}: mean {m}, first {first}, scatter {scatter}");
    }
    // Equilibrium energy is set by injection against drag and dissipation,
    // so it sits below the drag-only bound eps/(2μ).
    let (overall, _) = mean_std(&energy);
    assert!(overall < cfg.eps_inject / (2.0 * cfg.mu), "mean energy {overall}");
}
