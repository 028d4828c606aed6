//! Persisted per-clip features.
//!
//! Layout (little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | `ACTP` |
//! | version | `u32` |
//! | video id length, bytes | `u32`, UTF-8 |
//! | clips `L`, image dim `D`, video dim `D_V` | `u32` ×3 |
//! | verb features present, query present | `u8` ×2 |
//! | `V^I_vid` | `f32[L·D]` |
//! | `v^V` | `f32[L·D_V]` |
//! | `V^I_veb` if present | `f32[L·D]` |
//! | `t^q` if present | `f32[D]` |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACTP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub video_id: String,
    pub num_clips: usize,
    pub embed_dim: usize,
    pub video_dim: usize,
    pub image_features: Vec<f32>,
    pub video_features: Vec<f32>,
    pub verb_features: Option<Vec<f32>>,
    pub query: Option<Vec<f32>>,
}

impl FeatureBundle {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, len: usize, expected: usize| {
            if len == expected {
                Ok(())
            } else {
                Err(Error::format(format!("{name} holds {len} values, expected {expected}")))
            }
        };
        let image = self.num_clips * self.embed_dim;
        check("image features", self.image_features.len(), image)?;
        check(
            "video features",
            self.video_features.len(),
            self.num_clips * self.video_dim,
        )?;
        if let Some(v) = &self.verb_features {
            check("verb features", v.len(), image)?;
        }
        if let Some(q) = &self.query {
            check("query", q.len(), self.embed_dim)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.video_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.video_id.as_bytes());
        for n in [self.num_clips, self.embed_dim, self.video_dim] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.push(u8::from(self.verb_features.is_some()));
        out.push(u8::from(self.query.is_some()));
        let sections = [
            Some(&self.image_features),
            Some(&self.video_features),
            self.verb_features.as_ref(),
            self.query.as_ref(),
        ];
        for values in sections.into_iter().flatten() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("feature bundle magic mismatch"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::format(format!("unsupported feature bundle version {version}")));
        }
        let id_len = r.u32()?;
        let video_id =
            String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| Error::format("video id is not UTF-8"))?;
        let num_clips = r.u32()?;
        let embed_dim = r.u32()?;
        let video_dim = r.u32()?;
        let has_verb = r.flag()?;
        let has_query = r.flag()?;
        let expected = 4
            * (num_clips * embed_dim
                + num_clips * video_dim
                + if has_verb { num_clips * embed_dim } else { 0 }
                + if has_query { embed_dim } else { 0 });
        if bytes.len() - r.pos != expected {
            return Err(Error::format(format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len() - r.pos
            )));
        }
        let image_features = r.floats(num_clips * embed_dim)?;
        let video_features = r.floats(num_clips * video_dim)?;
        let verb_features = has_verb.then(|| r.floats(num_clips * embed_dim)).transpose()?;
        let query = has_query.then(|| r.floats(embed_dim)).transpose()?;
        Ok(Self {
            video_id,
            num_clips,
            embed_dim,
            video_dim,
            image_features,
            video_features,
            verb_features,
            query,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
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
            .ok_or_else(|| Error::format("feature bundle is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(format!("presence flag must be 0 or 1, got {other}"))),
        }
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
}
