//! Sentence-level loss, Adam, the halve-and-restart learning-rate schedule
//! and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::{HyperConfig, ThresholdSplit, TrainConfig};
use crate::corpus::{Corpus, Sentence, Vocabulary};
use crate::decoder::{decode, search_thresholds, summarize, LabelProbabilities, ThresholdSet};
use crate::error::{Error, Result};
use crate::evaluation::{score, EvalReport};
use crate::model::{forward, AttentionTrace, Dropout, Model, Params, SentenceInput};
use crate::tensor::{Real, Tensor};

/// Summed negative log likelihood over every (predicate, token) cell of one
/// sentence, with the gradient of every parameter.
pub fn sentence_loss<T: Real>(
    model: &Model<T>,
    input: &SentenceInput,
    labels: &[usize],
    dropout: Option<&mut Dropout>,
) -> Result<(f64, Params<Tensor<T>>)> {
    let mut tape = Tape::new();
    let p = model.register(&mut tape, true);
    let out = forward(&mut tape, &p, &model.hyper, input, dropout, AttentionTrace::default())?;
    let loss = tape.nll_rows(out.probs, labels)?;
    let value = tape.value(loss).data()[0].as_f64();
    tape.backward(loss)?;
    let grads = p.map(|_, &v| {
        tape.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    });
    Ok((value, grads))
}

/// Label indices in predicate-major order, as the loss expects.
pub fn label_indices(s: &Sentence) -> Vec<usize> {
    s.training_labels().into_iter().map(|l| l.index()).collect()
}

/// Bias-corrected Adam with per-tensor first and second moments.
pub struct Adam<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Params<Tensor<T>>,
    v: Params<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig, template: &Params<Tensor<T>>) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: template.zeros_like(),
            v: template.zeros_like(),
        }
    }

    /// Clears the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m = self.m.zeros_like();
        self.v = self.v.zeros_like();
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut Params<Tensor<T>>, grads: &Params<Tensor<T>>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let grads = grads.named();
        let targets = params.values_mut();
        let ms = self.m.values_mut();
        let vs = self.v.values_mut();
        for (((p, (_, g)), m), v) in targets.into_iter().zip(grads).zip(ms).zip(vs) {
            for (((x, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64();
                let mm = b1 * m.as_f64() + (1.0 - b1) * g;
                let vv = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::from_f64(mm);
                *v = T::from_f64(vv);
                let step = lr * (mm / c1) / ((vv / c2).sqrt() + self.epsilon);
                *x = T::from_f64(x.as_f64() - step);
            }
        }
    }
}

fn clip<T: Real>(grads: &mut Params<Tensor<T>>, max_norm: f64) {
    let norm: f64 = grads
        .named()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|x| x.as_f64() * x.as_f64()))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleEvent {
    Improved,
    NoChange,
    /// Rate halved; training resumes from the best parameters.
    Restart { lr: f64 },
    Terminate,
}

impl ScheduleEvent {
    pub fn as_str(&self) -> String {
        match self {
            Self::Improved => "best".into(),
            Self::NoChange => "-".into(),
            Self::Restart { lr } => format!("restart lr={lr:e}"),
            Self::Terminate => "stop".into(),
        }
    }
}

/// Halves the rate after `patience` epochs without a new best dev score and
/// stops once the next rate would fall below `floor_factor` × initial.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    pub initial: f64,
    pub lr: f64,
    pub floor_factor: f64,
    pub patience: usize,
    pub best: f64,
    since_best: usize,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        LrSchedule {
            initial: cfg.learning_rate,
            lr: cfg.learning_rate,
            floor_factor: cfg.lr_floor_factor,
            patience: cfg.patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, dev_f1: f64) -> ScheduleEvent {
        if dev_f1 > self.best {
            self.best = dev_f1;
            self.since_best = 0;
            return ScheduleEvent::Improved;
        }
        self.since_best += 1;
        if self.since_best < self.patience {
            return ScheduleEvent::NoChange;
        }
        let next = self.lr / 2.0;
        if next < self.initial * self.floor_factor {
            return ScheduleEvent::Terminate;
        }
        self.lr = next;
        self.since_best = 0;
        ScheduleEvent::Restart { lr: next }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub lr: f64,
    pub event: ScheduleEvent,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tdev_f1\tlr\tevent\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:e}\t{}",
                e.epoch,
                e.train_loss,
                e.dev_f1,
                e.lr,
                e.event.as_str()
            );
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub thresholds: ThresholdSet,
    pub best_dev_f1: f64,
    pub history: TrainHistory,
}

/// Label distributions for every sentence of a corpus.
pub fn corpus_probabilities<T: Real>(
    model: &Model<T>,
    vocab: &Vocabulary,
    sentences: &[Sentence],
) -> Result<Vec<LabelProbabilities>> {
    sentences
        .iter()
        .map(|s| {
            let input = SentenceInput::new(vocab, s);
            if input.q() == 0 {
                return LabelProbabilities::new(0, input.n(), Vec::new());
            }
            model.label_probabilities(&input)
        })
        .collect()
}

pub fn tune_thresholds(probs: &[LabelProbabilities], sentences: &[Sentence]) -> ThresholdSet {
    let (summaries, gold) = summarize(probs, sentences);
    search_thresholds(&summaries, gold)
}

pub fn evaluate(probs: &[LabelProbabilities], sentences: &[Sentence], theta: &ThresholdSet) -> Result<EvalReport> {
    let assignments: Vec<_> = probs.iter().zip(sentences).map(|(p, s)| decode(p, theta, s)).collect();
    score(&assignments, sentences)
}

/// Picks thresholds as configured and scores the dev split with them.
pub fn dev_evaluation(model: &Model<f32>, cfg: &TrainConfig, train: &Corpus, dev: &Corpus) -> Result<(f64, ThresholdSet)> {
    let dev_probs = corpus_probabilities(model, &train.vocab, &dev.sentences)?;
    let theta = if cfg.freeze_thresholds {
        ThresholdSet::default()
    } else {
        match cfg.threshold_split {
            ThresholdSplit::Dev => tune_thresholds(&dev_probs, &dev.sentences),
            ThresholdSplit::Train => {
                let train_probs = corpus_probabilities(model, &train.vocab, &train.sentences)?;
                tune_thresholds(&train_probs, &train.sentences)
            }
        }
    };
    let report = evaluate(&dev_probs, &dev.sentences, &theta)?;
    Ok((report.overall.f1(), theta))
}

/// Seeds for the independent random streams of one run.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Trains with dev evaluation by [`dev_evaluation`].
pub fn train(hyper: &HyperConfig, cfg: &TrainConfig, train: &Corpus, dev: &Corpus) -> Result<TrainOutcome> {
    train_with(hyper, cfg, train, |m| dev_evaluation(m, cfg, train, dev), |_| {})
}

/// The training loop with a pluggable dev evaluator and a per-epoch callback.
pub fn train_with(
    hyper: &HyperConfig,
    cfg: &TrainConfig,
    train: &Corpus,
    mut dev_eval: impl FnMut(&Model<f32>) -> Result<(f64, ThresholdSet)>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::usage("training split is empty"));
    }
    let mut model = Model::<f32>::new(hyper.clone(), train.vocab.len(), stream_seed(cfg.seed, 0))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2));
    let mut adam = Adam::new(cfg, &model.params);
    let mut schedule = LrSchedule::new(cfg);
    let examples: Vec<(SentenceInput, Vec<usize>, &str)> = train
        .sentences
        .iter()
        .filter(|s| s.num_predicates() > 0)
        .map(|s| (SentenceInput::new(&train.vocab, s), label_indices(s), s.id.as_str()))
        .collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(Model<f32>, ThresholdSet, f64)> = None;
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = schedule.lr;
        let mut total = 0.0;
        for &k in &order {
            let (input, labels, id) = &examples[k];
            let mut dropout = Dropout {
                rate: hyper.dropout_rate,
                rng: &mut dropout_rng,
            };
            let (loss, mut grads) = sentence_loss(&model, input, labels, Some(&mut dropout))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss {loss} on sentence {id} in epoch {epoch}")));
            }
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            adam.update(&mut model.params, &grads, lr);
            total += loss;
        }
        let (dev_f1, theta) = dev_eval(&model)?;
        let event = schedule.observe(dev_f1);
        match event {
            ScheduleEvent::Improved => best = Some((model.clone(), theta, dev_f1)),
            ScheduleEvent::Restart { .. } => {
                if let Some((m, _, _)) = &best {
                    model = m.clone();
                }
                adam.reset();
            }
            ScheduleEvent::NoChange | ScheduleEvent::Terminate => {}
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / examples.len().max(1) as f64,
            dev_f1,
            lr,
            event,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if event == ScheduleEvent::Terminate {
            break;
        }
    }
    let (model, thresholds, best_dev_f1) = match best {
        Some(b) => b,
        None => {
            let (f, t) = dev_eval(&model)?;
            (model, t, f)
        }
    };
    Ok(TrainOutcome {
        model,
        thresholds,
        best_dev_f1,
        history,
    })
}
