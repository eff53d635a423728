//! Grid fields, trajectory datasets and the preprocessing applied to them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Boundary topology of the grid, shared by every field of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// Doubly periodic domain (vorticity simulations).
    PeriodicBoth,
    /// Periodic in longitude only (global lat-lon grids).
    PeriodicWidthOnly,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::PeriodicBoth => "periodic_both",
            Geometry::PeriodicWidthOnly => "periodic_width_only",
        }
    }

    pub fn periodic_height(self) -> bool {
        matches!(self, Geometry::PeriodicBoth)
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic_both" => Ok(Geometry::PeriodicBoth),
            "periodic_width_only" => Ok(Geometry::PeriodicWidthOnly),
            other => Err(Error::Config(format!("unknown geometry {other:?}"))),
        }
    }
}

/// Channel/height/width extents of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A single C×H×W snapshot stored row-major in 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    shape: FrameShape,
    geometry: Geometry,
    values: Vec<f32>,
}

impl Field {
    /// Builds a field, rejecting wrong lengths and non-finite entries.
    pub fn new(shape: FrameShape, geometry: Geometry, values: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidField(format!("empty shape {shape}")));
        }
        if values.len() != shape.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values for shape {shape}, got {}",
                shape.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value {} at flat index {i}",
                values[i]
            )));
        }
        Ok(Self { shape, geometry, values })
    }

    pub fn zeros(shape: FrameShape, geometry: Geometry) -> Self {
        Self { shape, geometry, values: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// Applies `f` elementwise, re-validating finiteness.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Field> {
        Field::new(self.shape, self.geometry, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self
            .values
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / self.values.len() as f64;
        var.sqrt()
    }
}

/// Value transform applied to raw data before standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `x̃ = (ln(x + eps) - ln(eps)) / scale`; `scale` is 1 until percentile
    /// scaling has been applied.
    LogEpsilon { eps: f64, scale: f64 },
}

impl Transform {
    pub fn encode(&self) -> String {
        match self {
            Transform::Identity => "identity".to_string(),
            Transform::LogEpsilon { eps, scale } => format!("log_epsilon:{eps:?}:{scale:?}"),
        }
    }

    pub fn decode(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(Transform::Identity);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["log_epsilon", eps, scale] => {
                let eps = parse_f64(eps)?;
                let scale = parse_f64(scale)?;
                Ok(Transform::LogEpsilon { eps, scale })
            }
            _ => Err(Error::Malformed(format!("unknown transform {s:?}"))),
        }
    }

    /// Maps transformed values back to the raw data space.
    pub fn invert(&self, field: &Field) -> Result<Field> {
        match *self {
            Transform::Identity => Ok(field.clone()),
            Transform::LogEpsilon { eps, scale } => {
                let scaled = field.map(|v| (v as f64 * scale) as f32)?;
                inverse_log_transform(&scaled, eps)
            }
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Malformed(format!("not a number: {s:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Malformed(format!("unknown split {other:?}"))),
        }
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A temporally ordered sequence of fields: frame `n` sits at time
/// `n * dt_physical`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    frame_shape: FrameShape,
    geometry: Geometry,
    frames: Vec<Field>,
    dt_physical: f64,
    norm_stats: Option<NormStats>,
    transform: Transform,
    split: Split,
    /// Free-form provenance entries carried into the container metadata.
    pub attributes: BTreeMap<String, String>,
}

impl TrajectoryDataset {
    pub fn new(
        frame_shape: FrameShape,
        geometry: Geometry,
        frames: Vec<Field>,
        dt_physical: f64,
        split: Split,
    ) -> Result<Self> {
        if !(dt_physical.is_finite() && dt_physical > 0.0) {
            return Err(Error::Config(format!("dt_physical must be positive, got {dt_physical}")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != frame_shape {
                return Err(Error::ShapeMismatch {
                    left: frame_shape.dims(),
                    right: f.shape().dims(),
                });
            }
            if f.geometry() != geometry {
                return Err(Error::InvalidField(format!(
                    "frame {i} has geometry {}, dataset is {geometry}",
                    f.geometry()
                )));
            }
        }
        Ok(Self {
            frame_shape,
            geometry,
            frames,
            dt_physical,
            norm_stats: None,
            transform: Transform::Identity,
            split,
            attributes: BTreeMap::new(),
        })
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, n: usize) -> &Field {
        &self.frames[n]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> FrameShape {
        self.frame_shape
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dt_physical(&self) -> f64 {
        self.dt_physical
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_norm_stats(mut self, stats: Option<NormStats>) -> Self {
        self.norm_stats = stats;
        self
    }

    pub fn push(&mut self, frame: Field) -> Result<()> {
        if frame.shape() != self.frame_shape || frame.geometry() != self.geometry {
            return Err(Error::ShapeMismatch {
                left: self.frame_shape.dims(),
                right: frame.shape().dims(),
            });
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Contiguous sub-range of frames with the given split label.
    pub fn slice(&self, range: std::ops::Range<usize>, split: Split) -> TrajectoryDataset {
        let mut out = self.clone();
        out.frames = self.frames[range].to_vec();
        out.split = split;
        out
    }

    /// Splits into contiguous train/val/test blocks (in that temporal order).
    pub fn split_contiguous(
        &self,
        train: usize,
        val: usize,
    ) -> Result<(TrajectoryDataset, TrajectoryDataset, TrajectoryDataset)> {
        if train + val > self.len() {
            return Err(Error::DatasetTooShort { frames: self.len(), required: train + val });
        }
        Ok((
            self.slice(0..train, Split::Train),
            self.slice(train..train + val, Split::Val),
            self.slice(train + val..self.len(), Split::Test),
        ))
    }

    /// Same frames in a random order: destroys all temporal structure.
    pub fn shuffled(&self, rng: &mut crate::rng::SimRng) -> TrajectoryDataset {
        use rand::seq::SliceRandom;
        let mut out = self.clone();
        out.frames.shuffle(rng);
        out.attributes.insert("temporal_order".into(), "shuffled".into());
        out
    }

    /// Flat payload of all frames in (N, C, H, W) order.
    pub fn payload(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.len() * self.frame_shape.len());
        for f in &self.frames {
            out.extend_from_slice(f.values());
        }
        out
    }

    fn channel_moments(&self) -> Vec<(f64, f64)> {
        let plane = self.frame_shape.plane();
        (0..self.frame_shape.channels)
            .map(|c| {
                let count = (self.len() * plane) as f64;
                let mean = self
                    .frames
                    .iter()
                    .map(|f| f.channel(c).iter().map(|&v| v as f64).sum::<f64>())
                    .sum::<f64>()
                    / count;
                let var = self
                    .frames
                    .iter()
                    .map(|f| f.channel(c).iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / count;
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Computes per-channel statistics on a training split and standardizes it.
pub fn standardize(train: &TrajectoryDataset) -> Result<TrajectoryDataset> {
    if train.norm_stats.is_some() {
        return Err(Error::Config("dataset is already standardized".into()));
    }
    if train.split != Split::Train {
        return Err(Error::Config(format!(
            "statistics must come from the train split, got {}",
            train.split.as_str()
        )));
    }
    if train.is_empty() {
        return Err(Error::DatasetTooShort { frames: 0, required: 1 });
    }
    let moments = train.channel_moments();
    for (c, &(_, std)) in moments.iter().enumerate() {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateChannel { channel: c });
        }
    }
    let stats = NormStats {
        mean: moments.iter().map(|m| m.0).collect(),
        std: moments.iter().map(|m| m.1).collect(),
    };
    apply_standardization(train, &stats)
}

/// Standardizes any split with externally supplied (training) statistics.
pub fn apply_standardization(ds: &TrajectoryDataset, stats: &NormStats) -> Result<TrajectoryDataset> {
    if ds.norm_stats.is_some() {
        return Err(Error::Config("dataset is already standardized".into()));
    }
    if stats.mean.len() != ds.frame_shape.channels || stats.std.len() != ds.frame_shape.channels {
        return Err(Error::ShapeMismatch {
            left: vec![ds.frame_shape.channels],
            right: vec![stats.mean.len()],
        });
    }
    let plane = ds.frame_shape.plane();
    let frames = ds
        .frames
        .iter()
        .map(|f| {
            let values = f
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = i / plane;
                    ((v as f64 - stats.mean[c]) / stats.std[c]) as f32
                })
                .collect();
            Field::new(f.shape(), f.geometry(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ds.clone();
    out.frames = frames;
    out.norm_stats = Some(stats.clone());
    Ok(out)
}

/// Maps a standardized field back to physical units.
pub fn destandardize(field: &Field, stats: &NormStats) -> Result<Field> {
    let plane = field.shape().plane();
    let values = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            (v as f64 * stats.std[c] + stats.mean[c]) as f32
        })
        .collect();
    Field::new(field.shape(), field.geometry(), values)
}

/// Elementwise `ln(x + eps) - ln(eps)` for nonnegative data.
pub fn log_transform(x: &Field, eps: f64) -> Result<Field> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if let Some(i) = x.values().iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeValue { index: i, value: x.values()[i] as f64 });
    }
    let ln_eps = eps.ln();
    x.map(|v| ((v as f64 + eps).ln() - ln_eps) as f32)
}

/// Inverse of [`log_transform`]: `exp(x̃ + ln eps) - eps`.
pub fn inverse_log_transform(x: &Field, eps: f64) -> Result<Field> {
    let ln_eps = eps.ln();
    x.map(|v| ((v as f64 + ln_eps).exp() - eps) as f32)
}

/// Log-transforms a training split and scales it by the 99.9th percentile of
/// the transformed values, bringing the bulk of the data roughly into
/// [-1, 1]. Values above the percentile are kept (no clamping).
pub fn precipitation_preprocess(train: &TrajectoryDataset, eps: f64) -> Result<TrajectoryDataset> {
    let logged: Vec<Field> = train
        .frames()
        .iter()
        .map(|f| log_transform(f, eps))
        .collect::<Result<_>>()?;
    let mut all: Vec<f32> = logged.iter().flat_map(|f| f.values().iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::DatasetTooShort { frames: 0, required: 1 });
    }
    all.sort_by(f32::total_cmp);
    let scale = percentile_sorted(&all, 99.9);
    if !(scale > 0.0) {
        return Err(Error::DegenerateChannel { channel: 0 });
    }
    apply_precipitation_preprocess(train, eps, scale)
}

/// Applies a previously fitted log + percentile scaling to any split.
pub fn apply_precipitation_preprocess(
    ds: &TrajectoryDataset,
    eps: f64,
    scale: f64,
) -> Result<TrajectoryDataset> {
    let frames = ds
        .frames()
        .iter()
        .map(|f| log_transform(f, eps)?.map(|v| (v as f64 / scale) as f32))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ds.clone();
    out.frames = frames;
    out.transform = Transform::LogEpsilon { eps, scale };
    Ok(out)
}

/// Linear-interpolation percentile of an ascending slice (`pct` in [0, 100]).
pub fn percentile_sorted(sorted: &[f32], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// Per-row area weights with unit mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeights {
    w: Vec<f64>,
}

impl AreaWeights {
    /// Flat weights for non-spherical data.
    pub fn uniform(height: usize) -> Self {
        Self { w: vec![1.0; height] }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `w(k) = cos(lat_k) / mean_i cos(lat_i)` for row-center latitudes in degrees.
pub fn latitude_weights(lat_of_row: &[f64]) -> Result<AreaWeights> {
    if lat_of_row.is_empty() {
        return Err(Error::Config("no latitude rows".into()));
    }
    if let Some(lat) = lat_of_row.iter().find(|l| !(l.abs() < 90.0)) {
        return Err(Error::Config(format!("latitude {lat} outside (-90, 90)")));
    }
    let cos: Vec<f64> = lat_of_row.iter().map(|l| l.to_radians().cos()).collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    Ok(AreaWeights { w: cos.iter().map(|c| c / mean).collect() })
}

/// Cell-center latitudes of a regular global grid with `rows` rows, north first.
pub fn regular_latitudes(rows: usize) -> Vec<f64> {
    let d = 180.0 / rows as f64;
    (0..rows).map(|k| 90.0 - d * (k as f64 + 0.5)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_dataset(values: &[&[f32]], split: Split) -> TrajectoryDataset {
        let shape = FrameShape::new(1, 1, values[0].len());
        let frames = values
            .iter()
            .map(|v| Field::new(shape, Geometry::PeriodicBoth, v.to_vec()).unwrap())
            .collect();
        TrajectoryDataset::new(shape, Geometry::PeriodicBoth, frames, 1.0, split).unwrap()
    }

    #[test]
    fn field_rejects_nan_and_bad_length() {
        let shape = FrameShape::new(1, 2, 2);
        assert!(Field::new(shape, Geometry::PeriodicBoth, vec![0.0; 3]).is_err());
        assert!(Field::new(shape, Geometry::PeriodicBoth, vec![0.0, f32::NAN, 0.0, 0.0]).is_err());
        assert!(Field::new(shape, Geometry::PeriodicBoth, vec![0.0, f32::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn standardize_two_frame_example() {
        let ds = scalar_dataset(&[&[0.0], &[2.0]], Split::Train);
        let out = standardize(&ds).unwrap();
        assert_eq!(out.frame(0).values(), &[-1.0]);
        assert_eq!(out.frame(1).values(), &[1.0]);
        let stats = out.norm_stats().unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
    }

    #[test]
    fn standardize_constant_is_degenerate() {
        let ds = scalar_dataset(&[&[3.0, 3.0], &[3.0, 3.0]], Split::Train);
        let err = standardize(&ds).unwrap_err();
        assert!(matches!(err, Error::DegenerateChannel { channel: 0 }));
        assert!(err.to_string().contains("degenerate channel"));
    }

    #[test]
    fn standardize_requires_train_split() {
        let ds = scalar_dataset(&[&[0.0], &[2.0]], Split::Val);
        assert!(standardize(&ds).is_err());
    }

    #[test]
    fn val_split_uses_train_statistics() {
        let train = scalar_dataset(&[&[0.0, 1.0], &[2.0, 3.0]], Split::Train);
        let val = scalar_dataset(&[&[10.0, 10.0]], Split::Val);
        let train_std = standardize(&train).unwrap();
        let stats = train_std.norm_stats().unwrap().clone();
        let val_std = apply_standardization(&val, &stats).unwrap();
        assert_eq!(val_std.norm_stats(), Some(&stats));
        let expected = ((10.0 - 1.5) / 1.25f64.sqrt()) as f32;
        assert_eq!(val_std.frame(0).values()[0], expected);
    }

    #[test]
    fn log_transform_examples() {
        let shape = FrameShape::new(1, 1, 3);
        let eps = 1e-4;
        let zeros = Field::zeros(shape, Geometry::PeriodicWidthOnly);
        assert!(log_transform(&zeros, eps).unwrap().values().iter().all(|&v| v == 0.0));
        let at_eps = Field::new(shape, Geometry::PeriodicWidthOnly, vec![eps as f32; 3]).unwrap();
        for &v in log_transform(&at_eps, eps).unwrap().values() {
            assert!((v as f64 - 2f64.ln()).abs() < 1e-6);
        }
        let neg = Field::new(shape, Geometry::PeriodicWidthOnly, vec![0.0, -1.0, 0.0]).unwrap();
        assert!(matches!(log_transform(&neg, eps), Err(Error::NegativeValue { index: 1, .. })));
    }

    #[test]
    fn latitude_weight_examples() {
        let w = latitude_weights(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.values(), &[1.0, 1.0, 1.0]);
        let w = latitude_weights(&[-30.0, 0.0, 30.0]).unwrap();
        let c30 = 30f64.to_radians().cos();
        let norm = 3.0 / (1.0 + 2.0 * c30);
        let expected = [c30 * norm, norm, c30 * norm];
        for (a, b) in w.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(latitude_weights(&[90.0]).is_err());
        assert!(latitude_weights(&[-95.0, 0.0]).is_err());
        assert_eq!(AreaWeights::uniform(4).values(), &[1.0; 4]);
    }

    #[test]
    fn percentile_scaling_keeps_extremes() {
        let values: Vec<f32> = (0..1000).map(|i| i as f32 * 1e-3).collect();
        let shape = FrameShape::new(1, 1, 1000);
        let f = Field::new(shape, Geometry::PeriodicWidthOnly, values).unwrap();
        let ds = TrajectoryDataset::new(shape, Geometry::PeriodicWidthOnly, vec![f], 1.0, Split::Train).unwrap();
        let out = precipitation_preprocess(&ds, 1e-4).unwrap();
        let max = out.frame(0).values().iter().cloned().fold(f32::MIN, f32::max);
        assert!(max > 1.0 && max < 1.01);
        let back = out.transform().invert(out.frame(0)).unwrap();
        for (a, b) in back.values().iter().zip(ds.frame(0).values()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3));
        }
    }

    proptest! {
        #[test]
        fn log_transform_round_trip(values in prop::collection::vec(0.0f32..50.0, 1..64)) {
            let shape = FrameShape::new(1, 1, values.len());
            let f = Field::new(shape, Geometry::PeriodicWidthOnly, values.clone()).unwrap();
            let back = inverse_log_transform(&log_transform(&f, 1e-4).unwrap(), 1e-4).unwrap();
            for (a, b) in back.values().iter().zip(&values) {
                let tol = 1e-6 * b.abs() as f64 + 1e-9;
                prop_assert!(((a - b).abs() as f64) <= tol, "{a} vs {b}");
            }
        }

        #[test]
        fn latitude_weights_have_unit_mean(lats in prop::collection::vec(-89.99f64..89.99, 1..200)) {
            let w = latitude_weights(&lats).unwrap();
            let mean = w.values().iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }

        #[test]
        fn standardized_train_has_unit_moments(values in prop::collection::vec(-100.0f32..100.0, 4..80)) {
            prop_assume!(values.iter().any(|&v| (v - values[0]).abs() > 1e-2));
            let shape = FrameShape::new(1, 1, values.len());
            let f = Field::new(shape, Geometry::PeriodicBoth, values).unwrap();
            let ds = TrajectoryDataset::new(shape, Geometry::PeriodicBoth, vec![f], 1.0, Split::Train).unwrap();
            let out = standardize(&ds).unwrap();
            let vals: Vec<f64> = out.frame(0).values().iter().map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}
