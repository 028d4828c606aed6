//! Uniform clip partition of a video and the clip grid used for moments.

use std::ops::Range;

use super::annotations::MomentSpan;
use super::video::RawVideo;
use crate::encoders::FrameTensor;
use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// Number of clips; a trailing partial clip is kept iff it is at least half a clip long.
pub fn clip_count(duration: f64, clip_length: f64) -> Result<usize> {
    if !(clip_length.is_finite() && clip_length > 0.0) {
        return Err(Error::config(format!(
            "clip length must be positive, got {clip_length}"
        )));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::input(format!("video duration must be positive, got {duration}")));
    }
    let full = (duration / clip_length + EPS).floor() as usize;
    let rest = duration - full as f64 * clip_length;
    let count = if rest >= clip_length / 2.0 - EPS {
        full + 1
    } else {
        full
    };
    if count == 0 {
        return Err(Error::input(format!(
            "video of {duration} s is shorter than half a {clip_length} s clip"
        )));
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Indices into the video's frame list.
    pub frames: Range<usize>,
}

impl Clip {
    /// The center frame `c'_t`.
    pub fn representative(&self) -> usize {
        self.frames.start + (self.frames.end - self.frames.start) / 2
    }
}

pub fn clipize(video: &RawVideo, clip_length: f64) -> Result<Vec<Clip>> {
    if video.frames.is_empty() {
        return Err(Error::input(format!("video `{}` has no frames", video.id)));
    }
    let duration = video.duration();
    let count = clip_count(duration, clip_length)?;
    let per_clip = video.fps * clip_length;
    let mut clips: Vec<Clip> = (0..count)
        .map(|i| Clip {
            index: i,
            start: i as f64 * clip_length,
            end: ((i + 1) as f64 * clip_length).min(duration),
            frames: 0..0,
        })
        .collect();
    for k in 0..video.frames.len() {
        let c = (k as f64 / per_clip + EPS).floor() as usize;
        if c >= count {
            break;
        }
        let frames = &mut clips[c].frames;
        if frames.start == frames.end {
            *frames = k..k + 1;
        } else {
            frames.end = k + 1;
        }
    }
    if let Some(empty) = clips.iter().find(|c| c.frames.start == c.frames.end) {
        return Err(Error::input(format!(
            "clip {} of video `{}` contains no frames at {} fps",
            empty.index, video.id, video.fps
        )));
    }
    Ok(clips)
}

pub fn clip_frames<'a>(video: &'a RawVideo, clip: &Clip) -> &'a [FrameTensor] {
    &video.frames[clip.frames.clone()]
}

/// Clips touched by `span` as a half-open range, clamped to `total`.
pub fn span_clip_range(span: &MomentSpan, clip_length: f64, total: usize) -> (usize, usize) {
    let first = ((span.start / clip_length + EPS).floor() as usize).min(total.saturating_sub(1));
    let last = ((span.end / clip_length - EPS).ceil() as usize).clamp(first + 1, total.max(first + 1));
    (first, last)
}
