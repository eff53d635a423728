//! Shipped experiment presets.
//!
//! `vorticity-desk` is the reference desk-scale protocol (64², ~5k training
//! frames). `vorticity-paper` records the full-scale hyperparameters; it
//! validates but is far beyond a workstation. `vorticity-ci` is a reduced
//! variant sized for a single CPU core and `smoke` exercises every stage in
//! seconds.

use crate::config::Config;
use crate::error::CliError;

pub const NAMES: &[&str] = &["vorticity-desk", "vorticity-paper", "vorticity-ci", "smoke"];

const DESK: &str = "
name = vorticity-desk
seed = 0

sim.grid = 64
sim.dt = 0.005
sim.nu = 5e-5
sim.hyper_order = 2
sim.mu = 0.1
sim.k_f = 6
sim.delta_f = 1.5
sim.eps_inject = 0.1
sim.subsample = 4
sim.spinup_steps = 4000

data.coarsen = 1
data.train_frames = 5000
data.val_frames = 500
data.test_frames = 1500

score.widths = 32,64,64
score.res_blocks = 2
score.emb_features = 32
score.emb_dim = 128
score.sigma_data = 0.5
score.p_mean = -1.2
score.p_std = 1.2
score.batch_size = 16
score.lr = 2e-4
score.weight_decay = 0
score.ema_rate = 0.999
score.epochs = 20
score.warmup_steps = 500

disc.widths = 32,64
disc.res_blocks = 2
disc.emb_features = 32
disc.emb_dim = 128
disc.mlp_width = 1024
disc.mlp_layers = 2
disc.m = 1
disc.crop = true
disc.p_mean = -1.2
disc.p_std = 1.2
disc.neg_mu = 1
disc.neg_sigma = 2
disc.batch_size = 8
disc.lr = 1e-4
disc.weight_decay = 0
disc.ema_rate = 0.999
disc.epochs = 20
disc.warmup_steps = 200

sampler.sigma_min = 0.002
sampler.sigma_max = 80
sampler.rho = 7
sampler.steps = 50
sampler.s_churn = 55
sampler.s_noise = 1.005
sampler.s_tmin = 0
sampler.s_tmax = 1000
sampler.lambda = 14

eval.forecasts = 20
eval.members = 8
eval.leads = 10
eval.rollout_frames = 1000
eval.uncond_frames = 500
eval.trace_samples = 50
eval.auc_sigmas = 0.002,0.01,0.03,0.1
eval.auc_anchors = 500
eval.hovmoeller_columns = 10
eval.acf_lags = 10
eval.bootstrap_resamples = 1000
eval.bootstrap_block = 25
eval.waiting_pct = 95
eval.eof_modes = 3
";

const PAPER: &str = "
name = vorticity-paper

sim.grid = 256
sim.nu = 2e-7
sim.spinup_steps = 500
data.train_frames = 47000
data.val_frames = 13000
data.test_frames = 13000

score.widths = 128,256,256
score.res_blocks = 3
score.emb_dim = 512
score.batch_size = 2
score.lr = 1e-4
score.ema_rate = 0.9999
score.epochs = 350
score.warmup_steps = 0

disc.widths = 128,256,256
disc.emb_dim = 512
disc.batch_size = 8
disc.lr = 1e-4
disc.ema_rate = 0.9999
disc.epochs = 500
disc.warmup_steps = 0

eval.forecasts = 100
eval.members = 50
eval.rollout_frames = 4000
eval.uncond_frames = 4000
eval.auc_anchors = 4000

inert.score.attention_blocks = 3
inert.score.attention_resolutions = 8,4
inert.score.channel_mult = 1,2,2
inert.score.channel_base = 128
inert.disc.attention_blocks = 2
inert.disc.attention_resolutions = 8,4
inert.disc.channel_mult = 1,2,2
inert.disc.channel_base = 128
";

const CI: &str = "
name = vorticity-ci

data.coarsen = 2
data.train_frames = 4000
data.val_frames = 200
data.test_frames = 1100

score.widths = 16,32,32
score.emb_dim = 64
score.epochs = 30

disc.widths = 16,32
disc.emb_dim = 64
disc.mlp_width = 256
disc.batch_size = 16
disc.lr = 3e-4
disc.epochs = 40

sampler.steps = 18

eval.rollout_frames = 1000
eval.uncond_frames = 300
eval.auc_anchors = 400
eval.bootstrap_block = 25
";

const SMOKE: &str = "
name = smoke

sim.grid = 16
sim.spinup_steps = 40
data.train_frames = 48
data.val_frames = 4
data.test_frames = 24

score.widths = 4,8
score.res_blocks = 1
score.emb_features = 8
score.emb_dim = 8
score.batch_size = 8
score.epochs = 1
score.warmup_steps = 0

disc.widths = 4,8
disc.res_blocks = 1
disc.emb_features = 8
disc.emb_dim = 8
disc.mlp_width = 8
disc.batch_size = 8
disc.epochs = 1
disc.warmup_steps = 0

sampler.steps = 4

eval.forecasts = 2
eval.members = 2
eval.leads = 3
eval.rollout_frames = 8
eval.uncond_frames = 6
eval.trace_samples = 2
eval.auc_sigmas = 0.01,0.1
eval.auc_anchors = 8
eval.hovmoeller_columns = 4
eval.acf_lags = 2
eval.bootstrap_resamples = 50
eval.bootstrap_block = 2
eval.eof_modes = 2
";

/// Complete configuration of a named preset.
pub fn config(name: &str) -> Result<Config, CliError> {
    let desk = Config::parse(DESK)?;
    let overlay = match name {
        "vorticity-desk" => return Ok(desk),
        "vorticity-paper" => PAPER,
        "vorticity-ci" => CI,
        "smoke" => SMOKE,
        _ => return Err(CliError::Invalid(format!("unknown preset {name:?}; available: {}", NAMES.join(", ")))),
    };
    Ok(desk.overlay(&Config::parse(overlay)?))
}
