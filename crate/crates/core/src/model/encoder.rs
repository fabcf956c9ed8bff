//! Input layer and the alternating-direction GRU stack.
//!
//! All predicates of a sentence are encoded as one batch. Row `i * n + t` of
//! every `[q·n, d]` matrix belongs to predicate `i` and token `t`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::GruLayer;
use crate::autodiff::{Tape, Var};
use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A sentence reduced to what the network reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceInput {
    pub ids: Vec<usize>,
    pub predicates: Vec<usize>,
}

impl SentenceInput {
    pub fn new(vocab: &Vocabulary, s: &Sentence) -> Self {
        SentenceInput {
            ids: vocab.ids(s),
            predicates: s.predicates.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn q(&self) -> usize {
        self.predicates.len()
    }
}

/// Training-time dropout on recurrent layer inputs.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
pub fn apply_dropout<T: Real>(tape: &mut Tape<T>, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    let Some(d) = dropout else { return Ok(x) };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = T::from_f64(1.0 / (1.0 - d.rate));
    let mask: Vec<T> = (0..tape.value(x).len())
        .map(|_| if d.rng.gen::<f64>() < d.rate { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mark_stochastic();
    tape.mul(x, mask)
}

/// `e(w_t)` followed by the target-predicate flag and, with `mp`, the
/// all-predicate flag, for every (predicate, token) pair.
pub fn embed_inputs<T: Real>(tape: &mut Tape<T>, embedding: Var, input: &SentenceInput, mp: bool) -> Result<Var> {
    let (n, q) = (input.n(), input.q());
    let vocab = tape.value(embedding).rows();
    if let Some(&bad) = input.ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::Dimension {
            op: "embed_inputs",
            lhs: tape.value(embedding).shape().to_vec(),
            rhs: vec![bad],
        });
    }
    let index: Vec<usize> = (0..q).flat_map(|_| input.ids.iter().copied()).collect();
    let words = tape.gather_rows(embedding, &index)?;
    let width = if mp { 2 } else { 1 };
    let mut flags = vec![T::zero(); q * n * width];
    for (i, &p) in input.predicates.iter().enumerate() {
        flags[(i * n + p) * width] = T::one();
        if mp {
            for &other in &input.predicates {
                flags[(i * n + other) * width + 1] = T::one();
            }
        }
    }
    let flags = tape.constant(Tensor::matrix(q * n, width, flags)?);
    tape.concat(words, flags)
}

/// One GRU step on pre-projected inputs `xz = W_z x + b_z` (and likewise
/// `xr`, `xh`) for a batch of rows.
pub fn gru_step<T: Real>(
    tape: &mut Tape<T>,
    layer: &GruLayer<Var>,
    xz: Var,
    xr: Var,
    xh: Var,
    h_prev: Var,
) -> Result<Var> {
    let uz = tape.linear(h_prev, layer.u_z, None)?;
    let z = tape.add(xz, uz)?;
    let z = tape.sigmoid(z);
    let ur = tape.linear(h_prev, layer.u_r, None)?;
    let r = tape.add(xr, ur)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let uh = tape.linear(rh, layer.u_h, None)?;
    let cand = tape.add(xh, uh)?;
    let cand = tape.tanh(cand);
    // (1 - z)·h + z·ĥ  ==  h + z·(ĥ - h)
    let delta = tape.sub(cand, h_prev)?;
    let gated = tape.mul(z, delta)?;
    tape.add(h_prev, gated)
}

/// `h = (1 - z)·h_prev + z·ĥ` with the usual update, reset and candidate
/// gates. `x` and `h_prev` may be vectors or row batches.
pub fn gru_cell<T: Real>(tape: &mut Tape<T>, layer: &GruLayer<Var>, x: Var, h_prev: Var) -> Result<Var> {
    let xz = tape.linear(x, layer.w_z, Some(layer.b_z))?;
    let xr = tape.linear(x, layer.w_r, Some(layer.b_r))?;
    let xh = tape.linear(x, layer.w_h, Some(layer.b_h))?;
    gru_step(tape, layer, xz, xr, xh, h_prev)
}

/// Runs one recurrent layer over `x` (`[q·n, d_in]`), left to right or right
/// to left. With `residual`, the layer output (which is also the recurrent
/// state) is `residual + GRU(...)`.
#[allow(clippy::too_many_arguments)]
pub fn run_layer<T: Real>(
    tape: &mut Tape<T>,
    layer: &GruLayer<Var>,
    x: Var,
    q: usize,
    n: usize,
    reverse: bool,
    residual: Option<Var>,
) -> Result<Var> {
    let d_r = tape.value(layer.u_z).rows();
    let xz = tape.linear(x, layer.w_z, Some(layer.b_z))?;
    let xr = tape.linear(x, layer.w_r, Some(layer.b_r))?;
    let xh = tape.linear(x, layer.w_h, Some(layer.b_h))?;
    let mut h = tape.constant(Tensor::zeros(&[q, d_r]));
    let mut steps = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let rows: Vec<usize> = (0..q).map(|i| i * n + t).collect();
        let gz = tape.gather_rows(xz, &rows)?;
        let gr = tape.gather_rows(xr, &rows)?;
        let gh = tape.gather_rows(xh, &rows)?;
        let mut out = gru_step(tape, layer, gz, gr, gh, h)?;
        if let Some(res) = residual {
            let skip = tape.gather_rows(res, &rows)?;
            out = tape.add(skip, out)?;
        }
        steps[t] = out;
        h = out;
    }
    // Token-major stack (row t·q + i) back to predicate-major.
    let stacked = tape.stack_rows(&steps)?;
    let back: Vec<usize> = (0..q).flat_map(|i| (0..n).map(move |t| t * q + i)).collect();
    tape.gather_rows(stacked, &back)
}

/// The K-layer stack: layer 1 left to right without residual, then for
/// k ≥ 2 `h^k = h^{k-1} + GRU(h^{k-1}, ·)`, odd layers left to right and
/// even layers right to left.
pub fn run_stack<T: Real>(
    tape: &mut Tape<T>,
    layers: &[GruLayer<Var>],
    h0: Var,
    q: usize,
    n: usize,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let mut h = h0;
    for (k, layer) in layers.iter().enumerate() {
        let x = apply_dropout(tape, h, dropout.as_deref_mut())?;
        let residual = (k > 0).then_some(h);
        h = run_layer(tape, layer, x, q, n, k % 2 == 1, residual)?;
    }
    Ok(h)
}

/// Embedding plus recurrent stack for every predicate of a sentence.
pub fn encode_sentence<T: Real>(
    tape: &mut Tape<T>,
    embedding: Var,
    layers: &[GruLayer<Var>],
    input: &SentenceInput,
    mp: bool,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if input.q() == 0 {
        return Err(Error::usage("cannot encode a sentence without predicates"));
    }
    let h0 = embed_inputs(tape, embedding, input, mp)?;
    run_stack(tape, layers, h0, input.q(), input.n(), dropout)
}
