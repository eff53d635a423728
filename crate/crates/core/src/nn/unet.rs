use crate::autodiff::{Scalar, Tape, Var};
use crate::container::{parse_value, Metadata};
use crate::error::{Error, Result};
use crate::field::Geometry;

use super::{Bound, Conv, NoiseEmbedding, Norm, ParamLayout, ResBlock};

/// Architecture descriptor of the denoising encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Channel width per resolution level; each level after the first halves
    /// the spatial size.
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    pub emb_features: usize,
    pub emb_dim: usize,
    pub geometry: Geometry,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("unet widths must be non-empty and positive: {:?}", self.widths)));
        }
        if self.in_channels == 0 || self.res_blocks == 0 || self.emb_features < 2 || self.emb_dim == 0 {
            return Err(Error::Config("unet in_channels, res_blocks and embedding sizes must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sides must be divisible by this.
    pub fn side_multiple(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    pub fn to_metadata(&self, prefix: &str) -> Metadata {
        let mut m = Metadata::new();
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        m.insert(format!("{prefix}arch"), "unet".into());
        m.insert(format!("{prefix}in_channels"), self.in_channels.to_string());
        m.insert(format!("{prefix}widths"), w.join(","));
        m.insert(format!("{prefix}res_blocks"), self.res_blocks.to_string());
        m.insert(format!("{prefix}emb_features"), self.emb_features.to_string());
        m.insert(format!("{prefix}emb_dim"), self.emb_dim.to_string());
        m.insert(format!("{prefix}geometry"), self.geometry.as_str().into());
        m
    }

    pub fn from_metadata(m: &Metadata, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        if m.get(&key("arch")).map(String::as_str) != Some("unet") {
            return Err(Error::Malformed("checkpoint does not describe a unet".into()));
        }
        let widths = m
            .get(&key("widths"))
            .ok_or_else(|| Error::Malformed("missing unet widths".into()))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad width {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            in_channels: parse_value(m, &key("in_channels"))?,
            widths,
            res_blocks: parse_value(m, &key("res_blocks"))?,
            emb_features: parse_value(m, &key("emb_features"))?,
            emb_dim: parse_value(m, &key("emb_dim"))?,
            geometry: parse_value(m, &key("geometry"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    cfg: UNetConfig,
    layout: ParamLayout,
    embedding: NoiseEmbedding,
    conv_in: Conv,
    encoder: Vec<Vec<ResBlock>>,
    middle: [ResBlock; 2],
    decoder: Vec<Vec<ResBlock>>,
    norm_out: Norm,
    conv_out: Conv,
}

impl UNet {
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = ParamLayout::new();
        let emb_dim = cfg.emb_dim;
        let embedding = NoiseEmbedding::new(&mut l, "emb", cfg.emb_features, emb_dim);
        let c0 = cfg.widths[0];
        let conv_in = Conv::new(&mut l, "conv_in", cfg.in_channels, c0, 3, false);

        let mut skips = vec![c0];
        let mut c = c0;
        let mut encoder = Vec::new();
        for (lvl, &w) in cfg.widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for r in 0..cfg.res_blocks {
                blocks.push(ResBlock::new(&mut l, &format!("enc{lvl}.{r}"), c, w, emb_dim));
                c = w;
                skips.push(c);
            }
            if lvl + 1 < cfg.widths.len() {
                skips.push(c);
            }
            encoder.push(blocks);
        }
        let middle = [
            ResBlock::new(&mut l, "mid.0", c, c, emb_dim),
            ResBlock::new(&mut l, "mid.1", c, c, emb_dim),
        ];
        let mut decoder = Vec::new();
        for (lvl, &w) in cfg.widths.iter().enumerate().rev() {
            let mut blocks = Vec::new();
            for r in 0..=cfg.res_blocks {
                let s = skips.pop().expect("one skip per decoder block");
                blocks.push(ResBlock::new(&mut l, &format!("dec{lvl}.{r}"), c + s, w, emb_dim));
                c = w;
            }
            decoder.push(blocks);
        }
        debug_assert!(skips.is_empty());
        let norm_out = Norm::new(&mut l, "norm_out", c);
        let conv_out = Conv::new(&mut l, "conv_out", c, 1, 3, true);
        Ok(Self { cfg, layout: l, embedding, conv_in, encoder, middle, decoder, norm_out, conv_out })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// `x [B, in_channels, H, W]`, one `c_noise` per batch element →
    /// `[B, 1, H, W]`.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, c_noise: &[f64]) -> Var {
        let shape = t.shape(x).to_vec();
        assert_eq!(shape[1], self.cfg.in_channels, "unet input channels");
        let m = self.cfg.side_multiple();
        assert!(shape[2].is_multiple_of(m) && shape[3].is_multiple_of(m), "sides {}x{} not divisible by {m}", shape[2], shape[3]);
        let ph = self.cfg.geometry.periodic_height();
        let emb = self.embedding.forward(t, p, c_noise);

        let mut h = self.conv_in.forward(t, p, x, ph);
        let mut skips = vec![h];
        let levels = self.encoder.len();
        for (lvl, blocks) in self.encoder.iter().enumerate() {
            for b in blocks {
                h = b.forward(t, p, h, emb, ph);
                skips.push(h);
            }
            if lvl + 1 < levels {
                h = t.avg_pool2(h);
                skips.push(h);
            }
        }
        for b in &self.middle {
            h = b.forward(t, p, h, emb, ph);
        }
        for (i, blocks) in self.decoder.iter().enumerate() {
            for b in blocks {
                let s = skips.pop().expect("skip available");
                let cat = t.concat(h, s);
                h = b.forward(t, p, cat, emb, ph);
            }
            if i + 1 < levels {
                h = t.upsample2(h);
            }
        }
        let h = self.norm_out.forward(t, p, h);
        let h = t.silu(h);
        self.conv_out.forward(t, p, h, ph)
    }
}
