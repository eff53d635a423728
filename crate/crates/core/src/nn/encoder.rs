use crate::autodiff::{Scalar, Tape, Var};
use crate::container::{parse_value, Metadata};
use crate::error::{Error, Result};
use crate::field::Geometry;

use super::{Bound, Conv, Dense, NoiseEmbedding, Norm, ParamLayout, ResBlock};

/// Noise-conditioned convolutional encoder with a pooled MLP head emitting
/// one logit per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    pub emb_features: usize,
    pub emb_dim: usize,
    pub mlp_width: usize,
    pub mlp_layers: usize,
    pub geometry: Geometry,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("encoder widths must be non-empty and positive: {:?}", self.widths)));
        }
        if self.in_channels == 0 || self.res_blocks == 0 || self.emb_features < 2 || self.emb_dim == 0 {
            return Err(Error::Config("encoder channel and embedding sizes must be positive".into()));
        }
        if self.mlp_layers < 1 || self.mlp_width == 0 {
            return Err(Error::Config("encoder head needs at least one layer of positive width".into()));
        }
        Ok(())
    }

    pub fn side_multiple(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    pub fn to_metadata(&self, prefix: &str) -> Metadata {
        let mut m = Metadata::new();
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        m.insert(format!("{prefix}arch"), "encoder".into());
        m.insert(format!("{prefix}in_channels"), self.in_channels.to_string());
        m.insert(format!("{prefix}widths"), w.join(","));
        m.insert(format!("{prefix}res_blocks"), self.res_blocks.to_string());
        m.insert(format!("{prefix}emb_features"), self.emb_features.to_string());
        m.insert(format!("{prefix}emb_dim"), self.emb_dim.to_string());
        m.insert(format!("{prefix}mlp_width"), self.mlp_width.to_string());
        m.insert(format!("{prefix}mlp_layers"), self.mlp_layers.to_string());
        m.insert(format!("{prefix}geometry"), self.geometry.as_str().into());
        m
    }

    pub fn from_metadata(m: &Metadata, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        if m.get(&key("arch")).map(String::as_str) != Some("encoder") {
            return Err(Error::Malformed("checkpoint does not describe an encoder".into()));
        }
        let widths = m
            .get(&key("widths"))
            .ok_or_else(|| Error::Malformed("missing encoder widths".into()))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad width {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            in_channels: parse_value(m, &key("in_channels"))?,
            widths,
            res_blocks: parse_value(m, &key("res_blocks"))?,
            emb_features: parse_value(m, &key("emb_features"))?,
            emb_dim: parse_value(m, &key("emb_dim"))?,
            mlp_width: parse_value(m, &key("mlp_width"))?,
            mlp_layers: parse_value(m, &key("mlp_layers"))?,
            geometry: parse_value(m, &key("geometry"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layout: ParamLayout,
    embedding: NoiseEmbedding,
    conv_in: Conv,
    levels: Vec<Vec<ResBlock>>,
    norm_out: Norm,
    head: Vec<Dense>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = ParamLayout::new();
        let embedding = NoiseEmbedding::new(&mut l, "emb", cfg.emb_features, cfg.emb_dim);
        let mut c = cfg.widths[0];
        let conv_in = Conv::new(&mut l, "conv_in", cfg.in_channels, c, 3, false);
        let mut levels = Vec::new();
        for (lvl, &w) in cfg.widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for r in 0..cfg.res_blocks {
                blocks.push(ResBlock::new(&mut l, &format!("enc{lvl}.{r}"), c, w, cfg.emb_dim));
                c = w;
            }
            levels.push(blocks);
        }
        let norm_out = Norm::new(&mut l, "norm_out", c);
        let mut head = Vec::new();
        let mut width = c;
        for i in 0..cfg.mlp_layers - 1 {
            head.push(Dense::new(&mut l, &format!("head.{i}"), width, cfg.mlp_width, false));
            width = cfg.mlp_width;
        }
        // Zero-initialized output layer: an untrained head predicts q = 1/2.
        head.push(Dense::new(&mut l, &format!("head.{}", cfg.mlp_layers - 1), width, 1, true));
        Ok(Self { cfg, layout: l, embedding, conv_in, levels, norm_out, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// `x [B, in_channels, H, W]` → logits `[B, 1]`.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, c_noise: &[f64]) -> Var {
        let shape = t.shape(x).to_vec();
        assert_eq!(shape[1], self.cfg.in_channels, "encoder input channels");
        let ph = self.cfg.geometry.periodic_height();
        let emb = self.embedding.forward(t, p, c_noise);
        let mut h = self.conv_in.forward(t, p, x, ph);
        let n = self.levels.len();
        for (lvl, blocks) in self.levels.iter().enumerate() {
            for b in blocks {
                h = b.forward(t, p, h, emb, ph);
            }
            if lvl + 1 < n {
                h = t.avg_pool2(h);
            }
        }
        let h = self.norm_out.forward(t, p, h);
        let h = t.silu(h);
        let mut h = t.global_avg_pool(h);
        let last = self.head.len() - 1;
        for (i, d) in self.head.iter().enumerate() {
            h = d.forward(t, p, h);
            if i < last {
                h = t.silu(h);
            }
        }
        h
    }
}
