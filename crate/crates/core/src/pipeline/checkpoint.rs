//! Trainable-parameter checkpoints.
//!
//! Layout (little-endian): magic `ACKP`, version `u32`, config JSON
//! (`u32` length + UTF-8), backbone hash (`u32` length + ASCII hex), epoch
//! `u32`, tensor count `u32`, then per tensor: name (`u32` length + UTF-8),
//! rows `u32`, cols `u32`, `f64` values row-major.
//!
//! The backbone itself is not stored: it is rebuilt from the config's seed and
//! must hash to the recorded value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::pipeline::config::RunConfig;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"ACKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub backbone_hash: String,
    pub epoch: usize,
    pub tensors: Vec<(String, Matrix)>,
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::format(format!("{n} does not fit the checkpoint's u32 fields")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig, epoch: usize) -> Self {
        Self {
            config: config.clone(),
            backbone_hash: model.backbone.hash(),
            epoch,
            tensors: model.trainables.tensors(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = serde_json::to_string(&self.config).map_err(|e| Error::format(e.to_string()))?;
        put_str(&mut out, &config)?;
        put_str(&mut out, &self.backbone_hash)?;
        put_u32(&mut out, self.epoch)?;
        put_u32(&mut out, self.tensors.len())?;
        for (name, m) in &self.tensors {
            put_str(&mut out, name)?;
            put_u32(&mut out, m.rows())?;
            put_u32(&mut out, m.cols())?;
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint magic mismatch"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let config: RunConfig =
            serde_json::from_str(&r.string()?).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        let backbone_hash = r.string()?;
        let epoch = r.u32()?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()?;
            let cols = r.u32()?;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::format("tensor shape overflows"))?;
            let data = r
                .take(len)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            backbone_hash,
            epoch,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the backbone from the stored config, checks its hash, and
    /// installs the stored trainables.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::new(&self.config.model())?;
        let hash = model.backbone.hash();
        if hash != self.backbone_hash {
            return Err(Error::format(format!(
                "backbone hash {hash} does not match checkpoint {}",
                self.backbone_hash
            )));
        }
        self.apply(&mut model)?;
        Ok(model)
    }

    pub fn apply(&self, model: &mut Model) -> Result<()> {
        let mut expected = 0;
        let mut failure: Option<Error> = None;
        model.trainables.visit_mut(&mut |name: &str, m: &mut Matrix| {
            expected += 1;
            if failure.is_some() {
                return;
            }
            match self.tensors.iter().find(|(n, _)| n == name) {
                Some((_, stored)) if stored.shape() == m.shape() => *m = stored.clone(),
                Some((_, stored)) => {
                    failure = Some(Error::format(format!(
                        "tensor `{name}` is {:?} in the checkpoint, model expects {:?}",
                        stored.shape(),
                        m.shape()
                    )))
                }
                None => failure = Some(Error::format(format!("checkpoint lacks tensor `{name}`"))),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if expected != self.tensors.len() {
            return Err(Error::format(format!(
                "checkpoint holds {} tensors, model has {expected}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}
