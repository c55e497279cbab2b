//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` metadata length, UTF-8
//! JSON metadata, then every backbone parameter as little-endian `f64` in a
//! fixed traversal order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{BackboneSpec, Classifier, LinearHead, TrainingLog, VisionTransformer};
use crate::data::{ClassMap, Normalization};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VTATLAS\0";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Where layer activations are read from.
pub const CAPTURE_POINT: &str = "post-block output after the block's final layer norm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    spec: BackboneSpec,
    normalization: Normalization,
    class_map: ClassMap,
    head: LinearHead,
    training_log: Option<TrainingLog>,
    capture_point: String,
    param_count: usize,
}

/// A trained classifier plus its training log.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub classifier: Classifier<VisionTransformer>,
    pub training_log: Option<TrainingLog>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let model = &self.classifier;
        let meta = Metadata {
            spec: model.backbone.spec,
            normalization: model.normalization,
            class_map: model.class_map.clone(),
            head: model.head.clone(),
            training_log: self.training_log.clone(),
            capture_point: CAPTURE_POINT.to_string(),
            param_count: model.backbone.num_params(),
        };
        let json = serde_json::to_vec(&meta)?;
        let io = |e| Error::io("<checkpoint>", e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io)?;
        out.write_u64::<LittleEndian>(json.len() as u64).map_err(io)?;
        out.write_all(&json).map_err(io)?;
        let mut result = Ok(());
        model.backbone.visit_params(&mut |params| {
            for &p in params {
                if result.is_ok() {
                    result = out.write_f64::<LittleEndian>(p);
                }
            }
        });
        result.map_err(io)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let io = |e| Error::io("<checkpoint>", e);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = input.read_u32::<LittleEndian>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = input.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(io)?;
        let meta: Metadata = serde_json::from_slice(&json)?;
        let mut backbone = VisionTransformer::random(meta.spec, 0)?;
        if backbone.num_params() != meta.param_count {
            return Err(Error::Format(format!(
                "parameter count {} does not match spec ({})",
                meta.param_count,
                backbone.num_params()
            )));
        }
        let mut result = Ok(());
        backbone.visit_params_mut(&mut |params| {
            for p in params.iter_mut() {
                if result.is_ok() {
                    match input.read_f64::<LittleEndian>() {
                        Ok(v) => *p = v,
                        Err(e) => result = Err(e),
                    }
                }
            }
        });
        result.map_err(io)?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
        }
        Ok(Self {
            classifier: Classifier::new(backbone, meta.head, meta.normalization, meta.class_map)?,
            training_log: meta.training_log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}
