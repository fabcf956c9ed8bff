//! The full network: input layer, recurrent encoder (stacked or grid),
//! interaction layer and output softmax.

pub mod encoder;
pub mod grid;
pub mod interaction;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::{HyperConfig, Interaction};
use crate::decoder::LabelProbabilities;
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub use encoder::{Dropout, SentenceInput};
pub use interaction::{AttentionMatrix, AttentionTrace};
pub use params::{GruLayer, InteractionParams, Params};

/// Handles to the intermediate results of one forward pass.
pub struct Forward {
    /// Last recurrent layer, `[q·n, d_r]`.
    pub encoded: Var,
    /// Interaction-layer output, `[q·n, d_out]`.
    pub features: Var,
    /// Label distributions, `[q·n, 4]`.
    pub probs: Var,
    pub trace: AttentionTrace,
}

pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Params<Var>,
    h: &HyperConfig,
    input: &SentenceInput,
    mut dropout: Option<&mut Dropout>,
    mut trace: AttentionTrace,
) -> Result<Forward> {
    let (q, n) = (input.q(), input.n());
    let encoded = if h.interaction == Interaction::Grid {
        grid::grid_forward(tape, p.embedding, &p.gru, input, h.mp_enabled, dropout.as_deref_mut())?
    } else {
        encoder::encode_sentence(tape, p.embedding, &p.gru, input, h.mp_enabled, dropout)?
    };
    let features = interaction::interact(tape, h.interaction, &p.interaction, encoded, q, n, &mut trace)?;
    let logits = tape.linear(features, p.w_o, Some(p.b_o))?;
    let probs = tape.softmax(logits)?;
    Ok(Forward {
        encoded,
        features,
        probs,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    pub hyper: HyperConfig,
    pub params: Params<Tensor<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(hyper: HyperConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&hyper, vocab_size, &mut rng);
        Ok(Model { hyper, params })
    }

    /// Puts every parameter on the tape, trainable or constant.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Params<Var> {
        self.params.map(|_, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Inference pass; attention weights are kept when `retain` is set.
    pub fn run(&self, input: &SentenceInput, retain: bool) -> Result<(LabelProbabilities, AttentionTrace)> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape, false);
        let trace = if retain {
            AttentionTrace::retaining()
        } else {
            AttentionTrace::default()
        };
        let out = forward(&mut tape, &p, &self.hyper, input, None, trace)?;
        let probs = LabelProbabilities::from_tensor(input.q(), input.n(), tape.value(out.probs));
        Ok((probs, out.trace))
    }

    pub fn label_probabilities(&self, input: &SentenceInput) -> Result<LabelProbabilities> {
        Ok(self.run(input, false)?.0)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            hyper: self.hyper.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests;
