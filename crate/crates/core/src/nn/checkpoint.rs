//! Versioned parameter checkpoints (`.semg-ckpt`).
//!
//! Layout: one line of UTF-8 JSON header, then one parameter per line
//! written with 17 significant digits, then a final `end` line. Reading
//! either yields the complete parameter set or an error.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetParams, NetSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "semg-ckpt";
const TRAILER: &str = "end";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<NetSpec>,
    shapes: Vec<Vec<usize>>,
    count: usize,
    seed: u64,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A parameter store plus whatever is needed to rebuild the model around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `"mlp"` or `"denoiser"`.
    pub kind: String,
    pub spec: Option<NetSpec>,
    pub params: NetParams,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT_TAG.into(),
            version: CHECKPOINT_VERSION,
            kind: self.kind.clone(),
            spec: self.spec.clone(),
            shapes: self.params.shapes().to_vec(),
            count: self.params.len(),
            seed: self.params.seed(),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serialises");
        out.push('\n');
        for v in self.params.values() {
            writeln!(out, "{v:.16e}").unwrap();
        }
        out.push_str(TRAILER);
        out.push('\n');
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Checkpoint("not UTF-8".into()))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let mut values = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let line = lines.next().ok_or_else(|| {
                Error::Checkpoint(format!("truncated after {} values", values.len()))
            })?;
            let v: f64 = line.trim().parse().map_err(|_| {
                Error::Checkpoint(format!("bad value {line:?} at index {}", values.len()))
            })?;
            values.push(v);
        }
        if lines.next() != Some(TRAILER) {
            return Err(Error::Checkpoint(
                "missing end marker (truncated or oversized file)".into(),
            ));
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(Error::Checkpoint("trailing data after end marker".into()));
        }
        let params = NetParams::from_values(header.shapes, values, header.seed)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(spec) = &header.spec {
            if spec.shapes() != params.shapes() {
                return Err(Error::Checkpoint(
                    "spec disagrees with stored shapes".into(),
                ));
            }
        }
        Ok(Self {
            kind: header.kind,
            spec: header.spec,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::export::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact(format!("checkpoint {}", path.display()))
            }
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the stored parameters fit `spec`.
    pub fn params_for(&self, spec: &NetSpec) -> Result<NetParams> {
        if self.params.shapes() != spec.shapes().as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: checkpoint {:?}, network {:?}",
                self.params.shapes(),
                spec.shapes()
            )));
        }
        Ok(self.params.clone())
    }
}

pub fn serialize_params(spec: &NetSpec, params: &NetParams) -> Vec<u8> {
    Checkpoint {
        kind: "mlp".into(),
        spec: Some(spec.clone()),
        params: params.clone(),
        meta: serde_json::Value::Null,
    }
    .to_bytes()
}

pub fn deserialize_params(bytes: &[u8]) -> Result<(NetSpec, NetParams)> {
    let ckpt = Checkpoint::from_bytes(bytes)?;
    let spec = ckpt
        .spec
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no network spec".into()))?;
    Ok((spec, ckpt.params))
}

/// Loads parameters for a known network, rejecting mismatched shapes.
pub fn load_params(spec: &NetSpec, bytes: &[u8]) -> Result<NetParams> {
    Checkpoint::from_bytes(bytes)?.params_for(spec)
}
