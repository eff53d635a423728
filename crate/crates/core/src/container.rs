//! The `STDG` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "STDG"
//! version u32      1
//! ndim    u32
//! dims    ndim x u64
//! dtype   u8       0 = float32 LE
//! meta    u64 length + UTF-8 "key=value\n" lines (sorted by key)
//! extra   `extra_blocks` further length-prefixed metadata blocks
//! payload prod(dims) x f32, row-major
//! ```
//!
//! Datasets use dims `[N, C, H, W]`. Checkpoints and plot arrays reuse the
//! same layout; checkpoints declare one extra metadata block for the
//! architecture descriptor and training configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Field, FrameShape, Geometry, NormStats, Split, Transform, TrajectoryDataset};

pub const MAGIC: [u8; 4] = *b"STDG";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;

const EXTRA_BLOCKS_KEY: &str = "extra_blocks";

pub type Metadata = BTreeMap<String, String>;

/// In-memory image of one container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dims: Vec<u64>,
    pub metadata: Metadata,
    pub extra: Vec<Metadata>,
    pub payload: Vec<f32>,
}

impl Container {
    pub fn new(dims: Vec<u64>, metadata: Metadata, payload: Vec<f32>) -> Result<Self> {
        let expected: u64 = dims.iter().product();
        if expected as usize != payload.len() {
            return Err(Error::ShapeMismatch {
                left: dims.iter().map(|&d| d as usize).collect(),
                right: vec![payload.len()],
            });
        }
        Ok(Self { dims, metadata, extra: Vec::new(), payload })
    }

    pub fn header_len(&self) -> usize {
        let mut n = 4 + 4 + 4 + 8 * self.dims.len() + 1;
        n += 8 + encode_metadata(&self.primary_metadata()).len();
        for block in &self.extra {
            n += 8 + encode_metadata(block).len();
        }
        n
    }

    fn primary_metadata(&self) -> Metadata {
        let mut meta = self.metadata.clone();
        if self.extra.is_empty() {
            meta.remove(EXTRA_BLOCKS_KEY);
        } else {
            meta.insert(EXTRA_BLOCKS_KEY.into(), self.extra.len().to_string());
        }
        meta
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + 4 * self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32_LE);
        for block in std::iter::once(self.primary_metadata()).chain(self.extra.iter().cloned()) {
            let bytes = encode_metadata(&block);
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur
            .take(4)
            .map_err(|_| Error::Malformed("file shorter than magic".into()))?
            .try_into()
            .unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { found: version });
        }
        let ndim = cur.u32()? as usize;
        if ndim > 16 {
            return Err(Error::Malformed(format!("implausible ndim {ndim}")));
        }
        let dims = (0..ndim).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let dtype = cur.take(1)?[0];
        if dtype != DTYPE_F32_LE {
            return Err(Error::Malformed(format!("unsupported dtype code {dtype}")));
        }
        let mut metadata = decode_metadata(cur.block()?)?;
        let extra_count = match metadata.remove(EXTRA_BLOCKS_KEY) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::Malformed(format!("bad extra_blocks {v:?}")))?,
            None => 0,
        };
        let extra = (0..extra_count)
            .map(|_| decode_metadata(cur.block()?))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed("dims overflow".into()))? as usize;
        let rest = &bytes[cur.pos..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::Malformed("payload size overflow".into()))?;
        if rest.len() < expected {
            return Err(Error::TruncatedPayload { expected, found: rest.len() });
        }
        if rest.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after payload",
                rest.len() - expected
            )));
        }
        let payload = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, metadata, extra, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Malformed(format!("missing metadata key {key:?}")))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Malformed(format!(
                "header truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }
}

fn encode_metadata(meta: &Metadata) -> Vec<u8> {
    let mut s = String::new();
    for (k, v) in meta {
        debug_assert!(!k.contains('=') && !k.contains('\n') && !v.contains('\n'));
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s.into_bytes()
}

fn decode_metadata(bytes: &[u8]) -> Result<Metadata> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Malformed("metadata is not UTF-8".into()))?;
    let mut meta = Metadata::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("metadata line without '=': {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(meta)
}

pub fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Malformed(format!("not a number: {t:?}")))
        })
        .collect()
}

pub fn parse_value<T: std::str::FromStr>(meta: &Metadata, key: &str) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::Malformed(format!("missing metadata key {key:?}")))?;
    raw.parse::<T>()
        .map_err(|_| Error::Malformed(format!("bad value for {key:?}: {raw:?}")))
}

/// Encodes a trajectory dataset; the header fully describes dims, dtype,
/// transform, normalization, time step and geometry.
pub fn dataset_to_container(ds: &TrajectoryDataset) -> Container {
    let shape = ds.frame_shape();
    let mut meta = Metadata::new();
    for (k, v) in &ds.attributes {
        meta.insert(format!("attr.{k}"), v.clone());
    }
    meta.insert("kind".into(), "dataset".into());
    meta.insert("dt".into(), format!("{:?}", ds.dt_physical()));
    meta.insert("geometry".into(), ds.geometry().as_str().into());
    meta.insert("transform".into(), ds.transform().encode());
    meta.insert("split".into(), ds.split().as_str().into());
    match ds.norm_stats() {
        Some(stats) => {
            meta.insert("norm.mean".into(), format_list(&stats.mean));
            meta.insert("norm.std".into(), format_list(&stats.std));
        }
        None => {
            meta.insert("norm".into(), "unset".into());
        }
    }
    let dims = vec![ds.len() as u64, shape.channels as u64, shape.height as u64, shape.width as u64];
    Container::new(dims, meta, ds.payload()).expect("dataset payload matches its dims")
}

pub fn dataset_from_container(c: &Container) -> Result<TrajectoryDataset> {
    if c.get("kind")? != "dataset" {
        return Err(Error::Malformed(format!("expected a dataset, found {:?}", c.get("kind")?)));
    }
    if c.dims.len() != 4 {
        return Err(Error::Malformed(format!("dataset needs 4 dims, found {}", c.dims.len())));
    }
    let n = c.dims[0] as usize;
    let shape = FrameShape::new(c.dims[1] as usize, c.dims[2] as usize, c.dims[3] as usize);
    let geometry: Geometry = c.get("geometry")?.parse()?;
    let dt: f64 = parse_value(&c.metadata, "dt")?;
    let split: Split = c.get("split")?.parse()?;
    let transform = Transform::decode(c.get("transform")?)?;
    let norm = match (c.metadata.get("norm.mean"), c.metadata.get("norm.std")) {
        (Some(m), Some(s)) => Some(NormStats { mean: parse_list(m)?, std: parse_list(s)? }),
        _ => None,
    };
    let frames = (0..n)
        .map(|i| {
            let chunk = &c.payload[i * shape.len()..(i + 1) * shape.len()];
            Field::new(shape, geometry, chunk.to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = TrajectoryDataset::new(shape, geometry, frames, dt, split)?
        .with_transform(transform)
        .with_norm_stats(norm);
    for (k, v) in &c.metadata {
        if let Some(attr) = k.strip_prefix("attr.") {
            ds.attributes.insert(attr.to_string(), v.clone());
        }
    }
    Ok(ds)
}

pub fn save_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    dataset_to_container(ds).write(path)
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    dataset_from_container(&Container::read(path)?)
}

/// A plain named array (Hovmoeller matrices, bias maps) for external plotting.
pub fn array_container(name: &str, dims: &[usize], values: &[f64], mut meta: Metadata) -> Result<Container> {
    meta.insert("kind".into(), "array".into());
    meta.insert("name".into(), name.into());
    Container::new(
        dims.iter().map(|&d| d as u64).collect(),
        meta,
        values.iter().map(|&v| v as f32).collect(),
    )
}
