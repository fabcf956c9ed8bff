use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

/// Seeded shuffle-and-cut into train/dev/test. All three parts share the
/// vocabulary of the training part.
pub fn split(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let parts = [ratios.train, ratios.dev, ratios.test];
    if parts.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::usage("split ratios must be positive"));
    }
    if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::usage("split ratios must sum to 1"));
    }
    let n = corpus.len();
    let n_train = (ratios.train * n as f64).round() as usize;
    let n_dev = (ratios.dev * n as f64).round() as usize;
    if n_train == 0 || n_dev == 0 || n_train + n_dev >= n {
        return Err(Error::usage(format!("split of {n} sentences leaves an empty part")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &[usize]| idx.iter().map(|&i| corpus.sentences[i].clone()).collect::<Vec<_>>();
    let train = take(&order[..n_train]);
    let dev = take(&order[n_train..n_train + n_dev]);
    let test = take(&order[n_train + n_dev..]);
    let vocab = Vocabulary::from_sentences(&train);
    Ok((
        Corpus::with_vocab(train, vocab.clone()),
        Corpus::with_vocab(dev, vocab.clone()),
        Corpus::with_vocab(test, vocab),
    ))
}
