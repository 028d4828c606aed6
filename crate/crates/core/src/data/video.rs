//! Raw decoded videos: a frame rate plus a list of frames, stored as
//! `<dir>/<video_id>.actv`.
//!
//! Layout (little-endian): magic `ACTV`, version `u32`, fps `f64`, channels
//! `u32`, image size `u32`, frame count `u32`, then `f32` pixels frame by
//! frame in channel-major order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoders::FrameTensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACTV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub id: String,
    pub fps: f64,
    pub frames: Vec<FrameTensor>,
}

impl RawVideo {
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::input(format!("video `{}` has no frames", self.id)))?;
        let (channels, size) = (first.channels(), first.size());
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * first.pixels().len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&(channels as u32).to_le_bytes());
        out.extend_from_slice(&(size as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for f in &self.frames {
            if f.channels() != channels || f.size() != size {
                return Err(Error::input(format!("video `{}` mixes frame shapes", self.id)));
            }
            for &p in f.pixels() {
                out.extend_from_slice(&(p as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(id: &str, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::format(format!("video `{id}`: bad magic or truncated header")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let version = u32_at(4);
        if version != VERSION as usize {
            return Err(Error::format(format!("video `{id}`: unsupported version {version}")));
        }
        let fps = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let (channels, size, count) = (u32_at(16), u32_at(20), u32_at(24));
        let per_frame = channels * size * size;
        if bytes.len() != HEADER_LEN + count * per_frame * 4 {
            return Err(Error::format(format!(
                "video `{id}`: payload is {} bytes, header implies {}",
                bytes.len() - HEADER_LEN,
                count * per_frame * 4
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::format(format!("video `{id}`: fps {fps} is not positive")));
        }
        let frames = bytes[HEADER_LEN..]
            .chunks_exact(per_frame * 4)
            .map(|chunk| {
                let pixels = chunk
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                    .collect();
                FrameTensor::new(channels, size, pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: id.to_string(),
            fps,
            frames,
        })
    }
}

/// Directory of `.actv` files.
#[derive(Debug, Clone)]
pub struct VideoStore {
    pub dir: PathBuf,
}

impl VideoStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, video_id: &str) -> PathBuf {
        self.dir.join(format!("{video_id}.actv"))
    }

    /// Ids of every stored video, sorted.
    pub fn ids(&self) -> Result<Vec<String>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            if path.extension().is_some_and(|x| x == "actv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, video_id: &str) -> Result<RawVideo> {
        let path = self.path_for(video_id);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        RawVideo::from_bytes(video_id, &bytes)
    }

    pub fn save(&self, video: &RawVideo) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(&video.id);
        write_file(&path, &video.to_bytes()?)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
