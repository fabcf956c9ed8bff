//! Layers that combine encoder states across predicates (pooling) and across
//! tokens (attention) before the output softmax.

use serde::Serialize;

use super::params::InteractionParams;
use crate::autodiff::{Tape, Var};
use crate::config::Interaction;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Attention weights `a(t')` for every query token `t` of one
/// (predicate, source) pair. `source` is the pooled predicate `j` for
/// attention pooling and `None` for self-attention.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionMatrix {
    pub predicate: usize,
    pub source: Option<usize>,
    pub weights: Vec<Vec<f64>>,
}

/// Counts attention distributions and optionally keeps their weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub distributions: usize,
    pub matrices: Option<Vec<AttentionMatrix>>,
}

impl AttentionTrace {
    pub fn retaining() -> Self {
        AttentionTrace {
            distributions: 0,
            matrices: Some(Vec::new()),
        }
    }
}

fn need(p: Option<Var>, name: &str) -> Result<Var> {
    p.ok_or_else(|| Error::usage(format!("interaction layer needs parameter {name}")))
}

/// Splits `W` (`[d_out, 2d]`) into the blocks acting on each half of a
/// concatenated input.
fn halves<T: Real>(tape: &mut Tape<T>, w: Var) -> Result<(Var, Var)> {
    let d = tape.value(w).cols() / 2;
    Ok((tape.slice_cols(w, 0, d)?, tape.slice_cols(w, d, 2 * d)?))
}

fn rows<T: Real>(tape: &mut Tape<T>, x: Var, q: usize, n: usize) -> Result<Vec<Var>> {
    (0..q).map(|i| tape.slice_rows(x, i * n, n)).collect()
}

struct Scorer {
    w_a: Var,
    b_a: Var,
}

/// `a_t(t') = softmax_t'(W_a tanh(u_t + v_t') + b_a)` and the weighted sum of
/// `values` rows. `u` holds the query-side projections, `v` the source side.
#[allow(clippy::too_many_arguments)]
fn attend<T: Real>(
    tape: &mut Tape<T>,
    scorer: &Scorer,
    u: Var,
    v: Var,
    values: Var,
    trace: &mut AttentionTrace,
    predicate: usize,
    source: Option<usize>,
) -> Result<Var> {
    let n = tape.value(u).rows();
    let g = tape.outer_sum(u, v)?;
    let g = tape.tanh(g);
    let scores = tape.linear(g, scorer.w_a, Some(scorer.b_a))?;
    let scores = tape.reshape(scores, &[n, n])?;
    let a = tape.softmax(scores)?;
    trace.distributions += n;
    if let Some(m) = trace.matrices.as_mut() {
        let av = tape.value(a);
        m.push(AttentionMatrix {
            predicate,
            source,
            weights: (0..n).map(|t| av.row(t).iter().map(|x| x.as_f64()).collect()).collect(),
        });
    }
    tape.matmul(a, values)
}

/// `h_{i,t} = max_j ReLU(W_f [x_{i,t} ⊕ x_{j,t}] + b_f)`, j ranging over all
/// predicates including i.
pub fn pool_layer<T: Real>(tape: &mut Tape<T>, p: &InteractionParams<Var>, x: Var, q: usize, n: usize) -> Result<Var> {
    let (wl, wr) = halves(tape, need(p.w_f, "w_f")?)?;
    let a = tape.linear(x, wl, Some(need(p.b_f, "b_f")?))?;
    let b = tape.linear(x, wr, None)?;
    let a_rows = rows(tape, a, q, n)?;
    let b_rows = rows(tape, b, q, n)?;
    let mut out = Vec::with_capacity(q);
    for &ai in &a_rows {
        let mut pair = Vec::with_capacity(q);
        for &bj in &b_rows {
            let s = tape.add(ai, bj)?;
            pair.push(tape.relu(s));
        }
        out.push(tape.maxpool_set(&pair)?);
    }
    tape.stack_rows(&out)
}

/// For every pair (i, j), attend from `x_{i,t}` over predicate j's row, then
/// `f = ReLU(W_f [x_{i,t} ⊕ h'_{i,j,t}] + b_f)` and max-pool over j.
pub fn att_pool_layer<T: Real>(
    tape: &mut Tape<T>,
    p: &InteractionParams<Var>,
    x: Var,
    q: usize,
    n: usize,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    let (gl, gr) = halves(tape, need(p.w_g, "w_g")?)?;
    let u = tape.linear(x, gl, Some(need(p.b_g, "b_g")?))?;
    let v = tape.linear(x, gr, None)?;
    let (fl, fr) = halves(tape, need(p.w_f, "w_f")?)?;
    let f_self = tape.linear(x, fl, Some(need(p.b_f, "b_f")?))?;
    let scorer = Scorer {
        w_a: need(p.w_a, "w_a")?,
        b_a: need(p.b_a, "b_a")?,
    };
    let u_rows = rows(tape, u, q, n)?;
    let v_rows = rows(tape, v, q, n)?;
    let x_rows = rows(tape, x, q, n)?;
    let f_rows = rows(tape, f_self, q, n)?;
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let mut pair = Vec::with_capacity(q);
        for j in 0..q {
            let ctx = attend(tape, &scorer, u_rows[i], v_rows[j], x_rows[j], trace, i, Some(j))?;
            let fc = tape.linear(ctx, fr, None)?;
            let s = tape.add(f_rows[i], fc)?;
            pair.push(tape.relu(s));
        }
        out.push(tape.maxpool_set(&pair)?);
    }
    tape.stack_rows(&out)
}

/// Self-attention within each predicate's row followed by
/// `ReLU(W_h [x_{i,t} ⊕ h'_{i,t}] + b_h)`.
pub fn selfatt_layer<T: Real>(
    tape: &mut Tape<T>,
    p: &InteractionParams<Var>,
    x: Var,
    q: usize,
    n: usize,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    let (gl, gr) = halves(tape, need(p.w_g, "w_g")?)?;
    let u = tape.linear(x, gl, Some(need(p.b_g, "b_g")?))?;
    let v = tape.linear(x, gr, None)?;
    let (hl, hr) = halves(tape, need(p.w_h, "w_h")?)?;
    let h_self = tape.linear(x, hl, Some(need(p.b_h, "b_h")?))?;
    let scorer = Scorer {
        w_a: need(p.w_a, "w_a")?,
        b_a: need(p.b_a, "b_a")?,
    };
    let u_rows = rows(tape, u, q, n)?;
    let v_rows = rows(tape, v, q, n)?;
    let x_rows = rows(tape, x, q, n)?;
    let h_rows = rows(tape, h_self, q, n)?;
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let ctx = attend(tape, &scorer, u_rows[i], v_rows[i], x_rows[i], trace, i, None)?;
        let hc = tape.linear(ctx, hr, None)?;
        let s = tape.add(h_rows[i], hc)?;
        out.push(tape.relu(s));
    }
    tape.stack_rows(&out)
}

/// Pooling (`m`) followed by self-attention over `m`; only n·q attention
/// distributions are needed.
pub fn pool_selfatt_layer<T: Real>(
    tape: &mut Tape<T>,
    p: &InteractionParams<Var>,
    x: Var,
    q: usize,
    n: usize,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    let m = pool_layer(tape, p, x, q, n)?;
    selfatt_layer(tape, p, m, q, n, trace)
}

/// Applies the interaction layer selected by `kind` to the encoder output.
pub fn interact<T: Real>(
    tape: &mut Tape<T>,
    kind: Interaction,
    p: &InteractionParams<Var>,
    x: Var,
    q: usize,
    n: usize,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    match kind {
        Interaction::Base | Interaction::Grid => Ok(x),
        Interaction::Pool => pool_layer(tape, p, x, q, n),
        Interaction::AttPool => att_pool_layer(tape, p, x, q, n, trace),
        Interaction::PoolSelfAtt => pool_selfatt_layer(tape, p, x, q, n, trace),
        Interaction::SelfAtt => selfatt_layer(tape, p, x, q, n, trace),
    }
}
