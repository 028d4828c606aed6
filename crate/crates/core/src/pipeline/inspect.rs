//! Plain-text heatmaps of prompt→patch attention.
//!
//! Each layer of each prompt stream becomes a `grid x grid` block of cells
//! `shade value`, with the cell holding the largest weight (the patch the
//! temporal prompts select) bracketed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autograd::Tape;
use crate::ctpl::argmax_lowest;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedQuery, PreparedVideo, Stream};

const SHADES: &[u8] = b" .:-=+*#%@";

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionView {
    pub stream: Stream,
    /// 0-based.
    pub layer: usize,
    /// `N_p` prompt→patch weights.
    pub values: Vec<f64>,
    pub selected: usize,
}

/// Attention rows of clip `frame` for the video stream and, given a query,
/// the verb stream.
pub fn attention_views(
    model: &Model,
    video: &PreparedVideo,
    frame: usize,
    query: Option<&PreparedQuery>,
) -> Result<Vec<AttentionView>> {
    if frame >= video.num_clips() {
        return Err(Error::input(format!(
            "frame {frame} outside video `{}` with {} clips",
            video.id,
            video.num_clips()
        )));
    }
    let streams: &[Stream] = if query.is_some() {
        &[Stream::Video, Stream::Verb]
    } else {
        &[Stream::Video]
    };
    let mut views = Vec::new();
    for &stream in streams {
        let mut tape = Tape::new();
        let image = model.backbone.image.bind(&mut tape);
        let params = model.trainables.bind(&mut tape);
        let out = model.run_stream(&mut tape, &image, &params, video, stream, query)?;
        for (layer, &row) in out.attention[frame].iter().enumerate() {
            let values = tape.value(row).row_vec(0);
            views.push(AttentionView {
                stream,
                layer,
                selected: argmax_lowest(&values),
                values,
            });
        }
    }
    Ok(views)
}

/// Shades are relative to the largest weight, so a uniform row is one shade.
pub fn render_grid(values: &[f64], grid: usize, marker: Option<usize>) -> String {
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = String::new();
    for r in 0..grid {
        let cells: Vec<String> = (0..grid)
            .map(|c| {
                let i = r * grid + c;
                let v = values[i];
                let level = if max > 0.0 {
                    ((v / max) * (SHADES.len() - 1) as f64).round() as usize
                } else {
                    0
                };
                let shade = SHADES[level.min(SHADES.len() - 1)] as char;
                if marker == Some(i) {
                    format!("[{shade} {v:.3}]")
                } else {
                    format!(" {shade} {v:.3} ")
                }
            })
            .collect();
        out.push_str(cells.join(" ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_views(video_id: &str, frame: usize, views: &[AttentionView], grid: usize) -> String {
    let mut out = format!("video {video_id} frame {frame}\n");
    for v in views {
        let name = match v.stream {
            Stream::Video => "video-guided",
            Stream::Verb => "verb-guided",
        };
        let mass: f64 = v.values.iter().sum();
        writeln!(
            out,
            "\n{name} layer {} (patch mass {mass:.3}, selected patch {})",
            v.layer + 1,
            v.selected
        )
        .expect("write to string");
        out.push_str(&render_grid(&v.values, grid, Some(v.selected)));
    }
    out
}

pub fn inspect_attention(
    model: &Model,
    video: &PreparedVideo,
    frame: usize,
    query: Option<&PreparedQuery>,
    out: &Path,
) -> Result<Vec<AttentionView>> {
    let views = attention_views(model, video, frame, query)?;
    let text = render_views(&video.id, frame, &views, model.config.encoder.grid());
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row_is_one_shade() {
        let text = render_grid(&[0.25; 4], 2, None);
        let shades: Vec<char> = text
            .split_whitespace()
            .filter(|t| t.len() == 1)
            .map(|t| t.chars().next().unwrap())
            .collect();
        assert_eq!(shades, vec!['@'; 4]);
        assert_eq!(text.matches("0.250").count(), 4);
    }

    #[test]
    fn one_hot_marks_single_cell() {
        let mut values = vec![0.0; 4];
        values[2] = 1.0;
        let text = render_grid(&values, 2, Some(argmax_lowest(&values)));
        assert_eq!(text.matches('@').count(), 1);
        assert!(text.lines().nth(1).unwrap().starts_with("[@ 1.000]"));
    }
}
