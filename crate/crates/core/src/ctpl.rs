//! Context-aware temporal prompts.
//!
//! At every layer but the last, each frame contributes the patch its action
//! prompt attends to most. A frame's temporal prompt is the window of those
//! patches over its `2T + 1` neighbours (indices clamped to the video), plus a
//! per-layer positional table, passed through a residual MLP. The prompt is
//! appended to the next layer's input and dropped after it.
//!
//! Because layer `l + 1` of frame `t` needs layer `l` of frames `t - T..=t + T`,
//! [`sweep`] runs one layer for every frame before moving to the next.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::encoders::image::{BoundAction, BoundImageEncoder};
use crate::encoders::layers::truncated_normal;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `F_tem`: tokenwise `D -> H -> D` MLP, used with a residual shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGenerator {
    /// `D x H`
    pub w1: Matrix,
    pub b1: Matrix,
    /// `H x D`
    pub w2: Matrix,
    pub b2: Matrix,
}

impl TemporalGenerator {
    /// Output layer starts at zero so the prompt begins as the raw window.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, hidden: usize, std: f64) -> Self {
        Self {
            w1: truncated_normal(rng, dim, hidden, std),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, dim),
            b2: Matrix::zeros(1, dim),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(dim, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, dim),
            b2: Matrix::zeros(1, dim),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// `F_tem(Ẽ) + Ẽ`
    pub fn prompt(&self, window: &Matrix) -> Result<Matrix> {
        if window.cols() != self.w1.rows() {
            return Err(Error::config(format!(
                "window width {} does not match generator input {}",
                window.cols(),
                self.w1.rows()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind_const(&mut tape);
        let w = tape.constant(window.clone());
        let out = bound.forward(&mut tape, w);
        Ok(tape.value(out).clone())
    }

    fn bind_const(&self, tape: &mut Tape) -> BoundGenerator {
        BoundGenerator {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGenerator {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundGenerator {
    pub fn forward(&self, tape: &mut Tape, window: Var) -> Var {
        let h = tape.matmul(window, self.w1);
        let h = tape.add_row(h, self.b1);
        let h = tape.quick_gelu(h);
        let o = tape.matmul(h, self.w2);
        let o = tape.add_row(o, self.b2);
        tape.add(o, window)
    }
}

/// Window radius, positional tables `P^l` and the shared generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModule {
    pub radius: usize,
    /// One `(2T + 1) x D` table per producing layer, i.e. `N_L - 1` tables.
    pub positional: Vec<Matrix>,
    pub generator: TemporalGenerator,
}

impl TemporalModule {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        num_layers: usize,
        dim: usize,
        radius: usize,
        hidden: usize,
        std: f64,
    ) -> Self {
        Self {
            radius,
            positional: (0..num_layers.saturating_sub(1))
                .map(|_| Matrix::zeros(2 * radius + 1, dim))
                .collect(),
            generator: TemporalGenerator::init(rng, dim, hidden, std),
        }
    }

    pub fn window_len(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.positional.iter().map(Matrix::len).sum::<usize>() + self.generator.parameter_count()
    }
}

#[derive(Debug, Clone)]
pub struct BoundTemporal {
    pub radius: usize,
    pub positional: Vec<Var>,
    pub generator: BoundGenerator,
}

/// Smallest index attaining the maximum; `NaN` entries are never selected.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || values[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

/// `(i*, E[i*])` with `i* = argmax_i A[i]`, ties to the lowest index.
pub fn select_top_patch(attention: &[f64], patches: &Matrix) -> Result<(usize, Vec<f64>)> {
    if attention.is_empty() || attention.len() != patches.rows() {
        return Err(Error::input(format!(
            "{} attention entries for {} patches",
            attention.len(),
            patches.rows()
        )));
    }
    let i = argmax_lowest(attention);
    Ok((i, patches.row_vec(i)))
}

/// Frame indices `t - T ..= t + T`, clamped into `0..len` (replication padding).
pub fn window_indices(center: usize, len: usize, radius: usize) -> Vec<usize> {
    assert!(len > 0 && center < len, "center {center} outside video of {len} frames");
    (0..=2 * radius)
        .map(|k| (center + k).saturating_sub(radius).min(len - 1))
        .collect()
}

/// `Ẽ^l_{tem,t} = [ẽ_{t-T}, .., ẽ_{t+T}] + P^l` for 0-based `center`.
pub fn assemble_window(selected: &Matrix, center: usize, radius: usize, positional: &Matrix) -> Result<Matrix> {
    if center >= selected.rows() {
        return Err(Error::input(format!(
            "frame {center} outside video of {} frames",
            selected.rows()
        )));
    }
    if positional.rows() != 2 * radius + 1 || positional.cols() != selected.cols() {
        return Err(Error::config(format!(
            "positional table is {}x{}, expected {}x{}",
            positional.rows(),
            positional.cols(),
            2 * radius + 1,
            selected.cols()
        )));
    }
    let idx = window_indices(center, selected.rows(), radius);
    Ok(Matrix::from_fn(idx.len(), selected.cols(), |r, c| {
        selected.get(idx[r], c) + positional.get(r, c)
    }))
}

/// The prompt stream driving one sweep.
#[derive(Debug, Clone)]
pub enum StreamCue {
    /// One `1 x D` video-guided prompt per frame.
    Video(Vec<Var>),
    /// One `1 x D` verb-guided prompt per layer, shared by all frames.
    Verb(Vec<Var>),
}

/// Per-video result of a layer-synchronized sweep.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// `1 x D` image feature per frame.
    pub features: Vec<Var>,
    /// `[frame][layer]` prompt→patch attention rows (`1 x N_p`).
    pub attention: Vec<Vec<Var>>,
    /// `[frame][layer]` head-averaged attention over the whole input sequence.
    pub full_attention: Vec<Vec<Var>>,
    /// `[frame][layer]` sequences entering each layer.
    pub layer_inputs: Vec<Vec<Var>>,
    /// `[layer][frame]` selected patch index (only for layers producing prompts).
    pub selections: Vec<Vec<usize>>,
    /// `[layer][frame]` temporal prompt fed to layer `layer + 1`.
    pub temporal_prompts: Vec<Vec<Var>>,
}

/// Runs every frame of one video through the image tower, layer by layer,
/// building temporal prompts between layers when `temporal` is given.
pub fn sweep(
    tape: &mut Tape,
    encoder: &BoundImageEncoder,
    frames: &[Var],
    cue: &StreamCue,
    temporal: Option<&BoundTemporal>,
) -> SweepOutput {
    let n_frames = frames.len();
    let n_layers = encoder.blocks.len();
    let actions: Vec<BoundAction> = match cue {
        StreamCue::Video(ps) => {
            assert_eq!(ps.len(), n_frames, "one video prompt per frame");
            ps.iter().map(|&p| BoundAction::Video(p)).collect()
        }
        StreamCue::Verb(ps) => {
            assert_eq!(ps.len(), n_layers, "one verb prompt per layer");
            vec![BoundAction::Verb(ps.clone()); n_frames]
        }
    };
    let offset = 2;

    let mut states: Vec<Var> = frames
        .iter()
        .zip(&actions)
        .map(|(&f, a)| encoder.start(tape, f, a))
        .collect();
    let mut out = SweepOutput {
        features: Vec::with_capacity(n_frames),
        attention: vec![Vec::with_capacity(n_layers); n_frames],
        full_attention: vec![Vec::with_capacity(n_layers); n_frames],
        layer_inputs: vec![Vec::with_capacity(n_layers); n_frames],
        selections: Vec::new(),
        temporal_prompts: Vec::new(),
    };
    let mut pending: Option<Vec<Var>> = None;

    for layer in 0..n_layers {
        for t in 0..n_frames {
            let tp = pending.as_ref().map(|p| p[t]);
            let step = encoder.layer(tape, layer, states[t], &actions[t], tp);
            states[t] = step.output;
            out.layer_inputs[t].push(step.input);
            out.attention[t].push(step.attention.expect("action prompt present"));
            out.full_attention[t].push(step.full_attention.expect("action prompt present"));
        }
        pending = None;
        let Some(tm) = temporal else { continue };
        if layer + 1 >= n_layers {
            continue;
        }
        let mut selected = Vec::with_capacity(n_frames);
        let mut chosen = Vec::with_capacity(n_frames);
        for (attention, &state) in out.attention.iter().zip(&states) {
            let row = tape.value(attention[layer]).row(0).to_vec();
            let i = argmax_lowest(&row);
            chosen.push(i);
            selected.push(tape.gather_rows(state, &[offset + i]));
        }
        let mut prompts = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let rows: Vec<Var> = window_indices(t, n_frames, tm.radius)
                .into_iter()
                .map(|s| selected[s])
                .collect();
            let window = tape.concat_rows(&rows);
            let window = tape.add(window, tm.positional[layer]);
            prompts.push(tm.generator.forward(tape, window));
        }
        out.selections.push(chosen);
        out.temporal_prompts.push(prompts.clone());
        pending = Some(prompts);
    }

    out.features = states.iter().map(|&s| encoder.feature(tape, s)).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_patch_selection() {
        let patches = Matrix::from_fn(3, 2, |r, c| (r * 10 + c) as f64);
        let (i, e) = select_top_patch(&[0.1, 0.7, 0.2], &patches).unwrap();
        assert_eq!(i, 1);
        assert_eq!(e, vec![10.0, 11.0]);
        let (i, _) = select_top_patch(&[0.5, 0.5], &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(i, 0);
        assert!(select_top_patch(&[0.5], &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn argmax_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let a: Vec<f64> = (0..16).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in a.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            assert_eq!(argmax_lowest(&a), best);
        }
    }

    #[test]
    fn replication_padding() {
        assert_eq!(window_indices(0, 5, 1), vec![0, 0, 1]);
        assert_eq!(window_indices(2, 5, 1), vec![1, 2, 3]);
        assert_eq!(window_indices(4, 5, 1), vec![3, 4, 4]);
        assert_eq!(window_indices(0, 1, 2), vec![0; 5]);
        assert_eq!(window_indices(3, 5, 0), vec![3]);
    }

    #[test]
    fn window_adds_positional_rows() {
        let selected = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64);
        let pos = Matrix::from_fn(3, 2, |r, _| r as f64 * 100.0);
        let w = assemble_window(&selected, 0, 1, &pos).unwrap();
        assert_eq!(w.row(0), &[0.0, 1.0]);
        assert_eq!(w.row(1), &[100.0, 101.0]);
        assert_eq!(w.row(2), &[202.0, 203.0]);
        let single = Matrix::from_vec(1, 2, vec![4.0, 5.0]);
        let w = assemble_window(&single, 0, 2, &Matrix::zeros(5, 2)).unwrap();
        for r in 0..5 {
            assert_eq!(w.row(r), &[4.0, 5.0]);
        }
    }

    #[test]
    fn zero_generator_is_identity() {
        let g = TemporalGenerator::zeros(4, 6);
        let w = Matrix::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.3);
        assert_eq!(g.prompt(&w).unwrap(), w);
    }

    #[test]
    fn zero_window_with_zero_bias_gives_zero_prompt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = TemporalGenerator::init(&mut rng, 4, 6, 1.0);
        g.w2 = truncated_normal(&mut rng, 6, 4, 1.0);
        assert_eq!(g.prompt(&Matrix::zeros(3, 4)).unwrap(), Matrix::zeros(3, 4));
    }

    #[test]
    fn generator_matches_explicit_matmuls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = TemporalGenerator {
            w1: truncated_normal(&mut rng, 4, 5, 1.0),
            b1: truncated_normal(&mut rng, 1, 5, 1.0),
            w2: truncated_normal(&mut rng, 5, 4, 1.0),
            b2: truncated_normal(&mut rng, 1, 4, 1.0),
        };
        let w = truncated_normal(&mut rng, 3, 4, 1.0);
        let got = g.prompt(&w).unwrap();
        for r in 0..3 {
            let mut hidden = [0.0; 5];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = g.b1.get(0, j);
                for k in 0..4 {
                    acc += w.get(r, k) * g.w1.get(k, j);
                }
                *h = acc / (1.0 + (-1.702 * acc).exp());
            }
            for c in 0..4 {
                let mut acc = g.b2.get(0, c) + w.get(r, c);
                for (j, h) in hidden.iter().enumerate() {
                    acc += h * g.w2.get(j, c);
                }
                assert!((got.get(r, c) - acc).abs() < 1e-12);
            }
        }
    }
}
