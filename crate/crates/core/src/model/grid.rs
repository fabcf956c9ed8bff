//! Grid recurrent encoder: each layer also reads the neighbouring
//! predicate's row of the same layer, threading state across predicates.

use super::encoder::{apply_dropout, embed_inputs, run_layer, Dropout, SentenceInput};
use super::params::GruLayer;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Odd layers visit predicates in ascending order and read row `i - 1`;
/// even layers visit them in descending order and read row `i + 1`. Missing
/// neighbours contribute zero vectors.
pub fn grid_forward<T: Real>(
    tape: &mut Tape<T>,
    embedding: Var,
    layers: &[GruLayer<Var>],
    input: &SentenceInput,
    mp: bool,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let (q, n) = (input.q(), input.n());
    if q == 0 {
        return Err(Error::usage("cannot encode a sentence without predicates"));
    }
    let h0 = embed_inputs(tape, embedding, input, mp)?;
    let mut below: Vec<Var> = (0..q)
        .map(|i| tape.slice_rows(h0, i * n, n))
        .collect::<Result<_>>()?;
    for (k, layer) in layers.iter().enumerate() {
        let reverse = k % 2 == 1;
        let d_r = tape.value(layer.u_z).rows();
        let zeros = tape.constant(Tensor::zeros(&[n, d_r]));
        let mut current: Vec<Option<Var>> = vec![None; q];
        let order: Vec<usize> = if reverse { (0..q).rev().collect() } else { (0..q).collect() };
        for i in order {
            let neighbour = if reverse {
                current.get(i + 1).copied().flatten()
            } else {
                i.checked_sub(1).and_then(|j| current[j])
            };
            let x = tape.concat(below[i], neighbour.unwrap_or(zeros))?;
            let x = apply_dropout(tape, x, dropout.as_deref_mut())?;
            let residual = (k > 0).then_some(below[i]);
            current[i] = Some(run_layer(tape, layer, x, 1, n, reverse, residual)?);
        }
        below = current.into_iter().map(|v| v.expect("every row computed")).collect();
    }
    tape.stack_rows(&below)
}
