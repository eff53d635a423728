//! Optimizer loop state shared by the score network and the
//! discriminator, and its serialized form.

use std::path::Path;

use crate::container::{parse_value, Container, Metadata};
use crate::error::{Error, Result};
use crate::nn::{AdamW, Ema};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Linear learning-rate ramp over the first steps; 0 disables it.
    pub warmup_steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("bad learning rate {} or weight decay {}", self.lr, self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(Error::Config(format!("EMA rate must lie in [0, 1], got {}", self.ema_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_metadata(&self, prefix: &str) -> Metadata {
        let mut m = Metadata::new();
        m.insert(format!("{prefix}lr"), format!("{:?}", self.lr));
        m.insert(format!("{prefix}weight_decay"), format!("{:?}", self.weight_decay));
        m.insert(format!("{prefix}ema_rate"), format!("{:?}", self.ema_rate));
        m.insert(format!("{prefix}batch_size"), self.batch_size.to_string());
        m.insert(format!("{prefix}epochs"), self.epochs.to_string());
        m.insert(format!("{prefix}warmup_steps"), self.warmup_steps.to_string());
        m.insert(format!("{prefix}seed"), self.seed.to_string());
        m
    }
}

/// Parameters, optimizer and EMA advanced together one step at a time.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Vec<f32>,
    pub optimizer: AdamW,
    pub ema: Ema,
    pub base_lr: f64,
    pub warmup_steps: u64,
    /// Loss of every completed step.
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(params: Vec<f32>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            optimizer: AdamW::new(params.len(), cfg.lr, cfg.weight_decay),
            ema: Ema::new(cfg.ema_rate, &params)?,
            params,
            base_lr: cfg.lr,
            warmup_steps: cfg.warmup_steps,
            losses: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: ck.params.clone(),
            optimizer: ck.optimizer.clone(),
            ema: Ema::new(ck.ema_rate, &ck.ema)?,
            base_lr: cfg.lr,
            warmup_steps: cfg.warmup_steps,
            losses: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Applies one optimizer update and the EMA recurrence. Non-finite
    /// gradients are rejected and leave the state untouched.
    pub fn apply(&mut self, loss: f64, grads: &[f32]) -> Result<()> {
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step: self.optimizer.step + 1 });
        }
        let next = self.optimizer.step + 1;
        self.optimizer.lr = if self.warmup_steps > 0 && next < self.warmup_steps {
            self.base_lr * next as f64 / self.warmup_steps as f64
        } else {
            self.base_lr
        };
        self.optimizer.update(&mut self.params, grads);
        self.ema.update(&self.params);
        self.losses.push(loss);
        Ok(())
    }

    pub fn checkpoint(&self, kind: &str, config: Metadata) -> ModelCheckpoint {
        ModelCheckpoint {
            kind: kind.into(),
            params: self.params.clone(),
            ema: self.ema.shadow.clone(),
            ema_rate: self.ema.rate,
            optimizer: self.optimizer.clone(),
            step: self.optimizer.step,
            config,
        }
    }
}

/// Mean loss of each consecutive block of `steps_per_epoch` steps.
pub fn epoch_means(losses: &[f64], steps_per_epoch: usize) -> Vec<f64> {
    losses
        .chunks(steps_per_epoch.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    /// `score` or `discriminator`.
    pub kind: String,
    pub params: Vec<f32>,
    pub ema: Vec<f32>,
    pub ema_rate: f64,
    pub optimizer: AdamW,
    pub step: u64,
    /// Architecture descriptor and training configuration snapshot.
    pub config: Metadata,
}

impl ModelCheckpoint {
    /// Parameters used for inference.
    pub fn inference_params(&self) -> &[f32] {
        &self.ema
    }

    pub fn to_container(&self) -> Result<Container> {
        let p = self.params.len();
        if self.ema.len() != p || self.optimizer.m.len() != p || self.optimizer.v.len() != p {
            return Err(Error::ShapeMismatch {
                left: vec![p],
                right: vec![self.ema.len(), self.optimizer.m.len(), self.optimizer.v.len()],
            });
        }
        let mut meta = Metadata::new();
        meta.insert("kind".into(), self.kind.clone());
        meta.insert("rows".into(), "params,ema,adam_m,adam_v".into());
        meta.insert("ema_rate".into(), format!("{:?}", self.ema_rate));
        meta.insert("step".into(), self.step.to_string());
        meta.insert("opt.lr".into(), format!("{:?}", self.optimizer.lr));
        meta.insert("opt.beta1".into(), format!("{:?}", self.optimizer.beta1));
        meta.insert("opt.beta2".into(), format!("{:?}", self.optimizer.beta2));
        meta.insert("opt.eps".into(), format!("{:?}", self.optimizer.eps));
        meta.insert("opt.weight_decay".into(), format!("{:?}", self.optimizer.weight_decay));
        meta.insert("opt.step".into(), self.optimizer.step.to_string());
        let mut payload = Vec::with_capacity(4 * p);
        payload.extend_from_slice(&self.params);
        payload.extend_from_slice(&self.ema);
        payload.extend_from_slice(&self.optimizer.m);
        payload.extend_from_slice(&self.optimizer.v);
        let mut c = Container::new(vec![4, p as u64], meta, payload)?;
        c.extra.push(self.config.clone());
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.dims.len() != 2 || c.dims[0] != 4 {
            return Err(Error::Malformed(format!("checkpoint dims {:?}, expected [4, P]", c.dims)));
        }
        let p = c.dims[1] as usize;
        let m = &c.metadata;
        let rows: Vec<&[f32]> = c.payload.chunks(p.max(1)).collect();
        let row = |i: usize| if p == 0 { Vec::new() } else { rows[i].to_vec() };
        let optimizer = AdamW {
            lr: parse_value(m, "opt.lr")?,
            beta1: parse_value(m, "opt.beta1")?,
            beta2: parse_value(m, "opt.beta2")?,
            eps: parse_value(m, "opt.eps")?,
            weight_decay: parse_value(m, "opt.weight_decay")?,
            m: row(2),
            v: row(3),
            step: parse_value(m, "opt.step")?,
        };
        Ok(Self {
            kind: c.get("kind")?.to_string(),
            params: row(0),
            ema: row(1),
            ema_rate: parse_value(m, "ema_rate")?,
            optimizer,
            step: parse_value(m, "step")?,
            config: c.extra.first().cloned().unwrap_or_default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
