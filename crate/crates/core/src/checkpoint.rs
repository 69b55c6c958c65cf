//! The "TABF" parameter container.
//!
//! ```text
//! "TABF" | version u8 | u32 len | canonical JSON {"config": .., "kind": ..}
//! u32 count | count × (u32 name_len | name | u32 rank | rank × u32 dim | f32 LE data)
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binio::{canonical_json, put_f32s, put_u32, ByteReader};
use crate::bridgeformer::{BridgeFormer, BridgeFormerConfig};
use crate::embedlink::EmbeddingTable;
use crate::error::{Error, FormatError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TABF";
pub const VERSION: u8 = 1;

/// Upper bound on tensor rank accepted by the reader.
const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bridgeformer,
    Toylm,
    EmbeddingTable,
    ToyEncoder,
    Mlp2Projector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub params: ParamSet<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    kind: ModelKind,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, config: &impl Serialize, params: ParamSet<f32>) -> Result<Self> {
        Ok(Checkpoint {
            kind,
            config: serde_json::to_value(config)?,
            params,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = canonical_json(&Header {
            config: self.config.clone(),
            kind: self.kind,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.params.num_elements() * 4);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.params.len());
        for p in self.params.iter() {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.value.rank());
            for &d in p.value.shape() {
                put_u32(&mut out, d);
            }
            put_f32s(&mut out, p.value.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let header: Header = serde_json::from_value(r.json("checkpoint header")?)
            .map_err(|e| FormatError::Header(e.to_string()))?;
        let count = r.u32("parameter count")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32("parameter name length")?;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| FormatError::Header("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")?;
            if rank > MAX_RANK {
                return Err(FormatError::Header(format!("tensor {name:?} has rank {rank}")).into());
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dims")?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| FormatError::Header(format!("tensor {name:?} shape overflows")))?;
            let data = r.f32s(count, "tensor data")?;
            params.push(name, Tensor::new(shape, data)?);
        }
        r.finish(bytes.len() - r.remaining())?;
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(FormatError::Header(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            ))
            .into());
        }
        Ok(())
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone()).map_err(|e| FormatError::Header(e.to_string()).into())
    }

    pub fn from_bridgeformer(model: &BridgeFormer<f32>) -> Result<Self> {
        Self::new(ModelKind::Bridgeformer, model.config(), model.params().clone())
    }

    pub fn into_bridgeformer(self) -> Result<BridgeFormer<f32>> {
        self.expect_kind(ModelKind::Bridgeformer)?;
        let config: BridgeFormerConfig = self.config_as()?;
        BridgeFormer::from_params(config, self.params)
    }

    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        let mut params = ParamSet::new();
        params.push("weight", table.weights().clone());
        Self::new(
            ModelKind::EmbeddingTable,
            &serde_json::json!({ "pad_id": table.pad_id() }),
            params,
        )
    }

    pub fn into_table(self) -> Result<EmbeddingTable> {
        self.expect_kind(ModelKind::EmbeddingTable)?;
        let pad_id = self
            .config
            .get("pad_id")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| FormatError::Header("embedding table without pad_id".into()))?;
        let weights = self
            .params
            .get("weight")
            .ok_or_else(|| FormatError::Header("embedding table without weight".into()))?
            .clone();
        EmbeddingTable::new(weights, pad_id as u32)
    }
}
