//! `TEPS` weights container.
//!
//! ```text
//! b"TEPS" | u32 LE version (= 1) | u64 LE header length | JSON header
//!        | payload: little-endian f32 blobs | u32 LE CRC32(payload)
//! ```
//!
//! Tensor `offset` and `length` in the header are byte counts relative to the
//! start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::schedule::{DEFAULT_ETA_END, DEFAULT_ETA_START, DEFAULT_STEPS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TEPS";
pub const VERSION: u32 = 1;
pub const ARCHITECTURE: &str = "tiny-eps-v1";
pub const DEFAULT_FEATURE_WIDTH: usize = 32;
pub const TIME_EMBED_DIM: usize = 64;
pub const RESIDUAL_BLOCKS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub steps: usize,
    pub eta_start: f64,
    pub eta_end: f64,
}

impl Default for ScheduleRecord {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            eta_start: DEFAULT_ETA_START,
            eta_end: DEFAULT_ETA_END,
        }
    }
}

/// Every tensor of the fixed architecture, keyed by canonical name.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyPredictorWeights {
    pub feature_width: usize,
    pub channels: usize,
    pub schedule: Option<ScheduleRecord>,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Canonical tensor list `(name, shape)` in payload order.
pub fn tensor_layout(feature_width: usize, channels: usize) -> Vec<(String, Vec<usize>)> {
    let f = feature_width;
    let c = channels;
    let mut out = vec![
        ("time.linear1.weight".to_string(), vec![f, TIME_EMBED_DIM]),
        ("time.linear1.bias".to_string(), vec![f]),
        ("time.linear2.weight".to_string(), vec![f, f]),
        ("time.linear2.bias".to_string(), vec![f]),
        ("stem.weight".to_string(), vec![f, c, 3, 3]),
        ("stem.bias".to_string(), vec![f]),
    ];
    for b in 0..RESIDUAL_BLOCKS {
        out.push((format!("blocks.{b}.conv1.weight"), vec![f, f, 3, 3]));
        out.push((format!("blocks.{b}.conv1.bias"), vec![f]));
        out.push((format!("blocks.{b}.time.weight"), vec![f, f]));
        out.push((format!("blocks.{b}.time.bias"), vec![f]));
        out.push((format!("blocks.{b}.conv2.weight"), vec![f, f, 3, 3]));
        out.push((format!("blocks.{b}.conv2.bias"), vec![f]));
    }
    out.push(("head.weight".to_string(), vec![c, f, 3, 3]));
    out.push(("head.bias".to_string(), vec![c]));
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: String,
    feature_width: usize,
    channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleRecord>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

impl TinyPredictorWeights {
    /// Zero-filled weights with the canonical layout.
    pub fn zeros(feature_width: usize, channels: usize) -> Self {
        let tensors = tensor_layout(feature_width, channels)
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Self {
            feature_width,
            channels,
            schedule: Some(ScheduleRecord::default()),
            tensors,
        }
    }

    /// Fan-in scaled uniform initialisation from a deterministic stream.
    pub fn random(feature_width: usize, channels: usize, seed: u64) -> Self {
        use crate::rng::{Purpose, SplitRng};
        let mut stream = SplitRng::new(seed).stream(Purpose::Weights, 0);
        let mut w = Self::zeros(feature_width, channels);
        for (name, t) in w.tensors.iter_mut() {
            let fan_in: usize = if t.shape.len() > 1 {
                t.shape[1..].iter().product()
            } else {
                feature_width
            };
            let bound = if name.ends_with("bias") {
                0.1
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            for v in t.data.iter_mut() {
                *v = ((stream.uniform() * 2.0 - 1.0) * bound) as f32;
            }
        }
        w
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_width == 0 || self.channels == 0 {
            return Err(Error::load("shape", "feature_width and channels must be positive"));
        }
        let layout = tensor_layout(self.feature_width, self.channels);
        for (name, shape) in &layout {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::load("tensors", format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(Error::load(
                    "shape",
                    format!("tensor {name}: expected {shape:?}, got {:?}", t.shape),
                ));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::load("shape", format!("tensor {name}: data length")));
            }
        }
        if self.tensors.len() != layout.len() {
            return Err(Error::load("tensors", "unexpected extra tensors"));
        }
        if let Some(s) = self.schedule {
            if s != ScheduleRecord::default() {
                return Err(Error::load(
                    "schedule",
                    format!("trained with {s:?}, loader expects {:?}", ScheduleRecord::default()),
                ));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut payload = Vec::new();
        let mut entries = Vec::new();
        for (name, shape) in tensor_layout(self.feature_width, self.channels) {
            let t = &self.tensors[&name];
            let offset = payload.len() as u64;
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name,
                shape,
                dtype: "f32".to_string(),
                offset,
                length: payload.len() as u64 - offset,
            });
        }
        let header = Header {
            architecture: ARCHITECTURE.to_string(),
            feature_width: self.feature_width,
            channels: self.channels,
            schedule: self.schedule,
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::load("magic", "expected b\"TEPS\""));
        }
        if bytes.len() < 16 {
            return Err(Error::load("header length", "file ends inside the preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::load("version", format!("expected {VERSION}, got {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = 16u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::load("header length", format!("{header_len} exceeds file size")))?
            as usize;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::load("header", e.to_string()))?;
        if header.architecture != ARCHITECTURE {
            return Err(Error::load(
                "architecture",
                format!("expected {ARCHITECTURE:?}, got {:?}", header.architecture),
            ));
        }

        let declared: u64 = header
            .tensors
            .iter()
            .map(|t| t.offset.saturating_add(t.length))
            .max()
            .unwrap_or(0);
        let rest = (bytes.len() - header_end) as u64;
        if rest != declared + 4 {
            return Err(Error::load(
                "payload length",
                format!("header declares {declared} payload bytes + 4 CRC bytes, file has {rest}"),
            ));
        }
        let payload = &bytes[header_end..header_end + declared as usize];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::load(
                "checksum",
                format!("stored {stored:#010x}, computed {actual:#010x}"),
            ));
        }

        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::load(
                    "dtype",
                    format!("tensor {}: unsupported dtype {:?}", entry.name, entry.dtype),
                ));
            }
            let count: usize = entry.shape.iter().product();
            if entry.length != 4 * count as u64 || entry.offset % 4 != 0 {
                return Err(Error::load(
                    "shape",
                    format!("tensor {}: length {} does not match shape {:?}", entry.name, entry.length, entry.shape),
                ));
            }
            let blob = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
            let data = blob
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.insert(
                entry.name.clone(),
                Tensor {
                    shape: entry.shape.clone(),
                    data,
                },
            );
        }
        let weights = Self {
            feature_width: header.feature_width,
            channels: header.channels,
            schedule: header.schedule,
            tensors,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
