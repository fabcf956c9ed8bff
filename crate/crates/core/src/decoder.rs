//! Threshold decoding of label distributions into argument assignments.

use std::fmt::Write as _;

use crate::corpus::{ArgumentLabel, Sentence};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `p(label | predicate i, token t)` for one sentence, stored `[i][t][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelProbabilities {
    pub q: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl LabelProbabilities {
    pub fn new(q: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != q * n * ArgumentLabel::COUNT {
            return Err(Error::Dimension {
                op: "label_probabilities",
                lhs: vec![q, n, ArgumentLabel::COUNT],
                rhs: vec![data.len()],
            });
        }
        Ok(LabelProbabilities { q, n, data })
    }

    /// From the `[q·n, 4]` softmax output of the network.
    pub fn from_tensor<T: Real>(q: usize, n: usize, t: &Tensor<T>) -> Self {
        LabelProbabilities {
            q,
            n,
            data: t.data().iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn get(&self, i: usize, t: usize, c: ArgumentLabel) -> f64 {
        self.data[(i * self.n + t) * ArgumentLabel::COUNT + c.index()]
    }

    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.n + t) * ArgumentLabel::COUNT;
        &self.data[start..start + ArgumentLabel::COUNT]
    }
}

/// Per-label decision thresholds for NOM, ACC, DAT.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSet(pub [f64; 3]);

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet([0.5; 3])
    }
}

impl ThresholdSet {
    pub fn get(&self, c: ArgumentLabel) -> f64 {
        self.0[c.index()]
    }

    pub fn to_text(&self) -> String {
        ArgumentLabel::SLOTS
            .iter()
            .map(|&c| format!("{} {:.2}\n", c, self.get(c)))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out = [None; 3];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse {
                line: i + 1,
                message: m.to_string(),
            };
            let (label, value) = line.split_once(' ').ok_or_else(|| err("expected `<label> <threshold>`"))?;
            let label: ArgumentLabel = label.parse().map_err(|e: String| err(&e))?;
            let value: f64 = value.trim().parse().map_err(|_| err("invalid threshold"))?;
            if label == ArgumentLabel::None || !(0.0..=1.0).contains(&value) {
                return Err(err("thresholds are NOM/ACC/DAT values in [0, 1]"));
            }
            out[label.index()] = Some(value);
        }
        match out {
            [Some(a), Some(b), Some(c)] => Ok(ThresholdSet([a, b, c])),
            _ => Err(Error::format("threshold file must define NOM, ACC and DAT")),
        }
    }

    /// Mean of several threshold sets.
    pub fn mean(sets: &[ThresholdSet]) -> Self {
        let mut out = [0.0; 3];
        for s in sets {
            for (o, v) in out.iter_mut().zip(s.0) {
                *o += v / sets.len() as f64;
            }
        }
        ThresholdSet(out)
    }
}

/// Decision for one (predicate, label) slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotDecision {
    /// Highest-probability candidate token, if the predicate has candidates.
    pub best: Option<usize>,
    pub prob: f64,
    /// Whether `prob` exceeded the label's threshold.
    pub selected: bool,
}

impl SlotDecision {
    pub fn token(&self) -> Option<usize> {
        if self.selected {
            self.best
        } else {
            None
        }
    }
}

/// Slot decisions indexed `[predicate][label]` for NOM, ACC, DAT.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgumentAssignment {
    pub slots: Vec<[SlotDecision; 3]>,
}

impl ArgumentAssignment {
    pub fn token(&self, pred: usize, c: ArgumentLabel) -> Option<usize> {
        self.slots[pred][c.index()].token()
    }
}

/// Highest-probability candidate of each slot, ties to the lowest index.
pub fn best_candidates(p: &LabelProbabilities, s: &Sentence) -> Vec<[(Option<usize>, f64); 3]> {
    (0..p.q)
        .map(|i| {
            let mut best = [(None, 0.0); 3];
            for t in 0..p.n {
                if !s.is_candidate(i, t) {
                    continue;
                }
                for c in ArgumentLabel::SLOTS {
                    let v = p.get(i, t, c);
                    let slot = &mut best[c.index()];
                    if slot.0.is_none() || v > slot.1 {
                        *slot = (Some(t), v);
                    }
                }
            }
            best
        })
        .collect()
}

/// For each slot, the most probable token outside the predicate's bunsetsu
/// if its probability strictly exceeds the label's threshold.
pub fn decode(p: &LabelProbabilities, theta: &ThresholdSet, s: &Sentence) -> ArgumentAssignment {
    let slots = best_candidates(p, s)
        .into_iter()
        .map(|best| {
            let mut out = [SlotDecision {
                best: None,
                prob: 0.0,
                selected: false,
            }; 3];
            for c in ArgumentLabel::SLOTS {
                let (tok, prob) = best[c.index()];
                out[c.index()] = SlotDecision {
                    best: tok,
                    prob,
                    selected: tok.is_some() && prob > theta.get(c),
                };
            }
            out
        })
        .collect();
    ArgumentAssignment { slots }
}

/// Per-slot summary used by the threshold search: the best candidate's
/// probability and whether that candidate is in the gold cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotSummary {
    pub label: ArgumentLabel,
    pub prob: f64,
    pub correct: bool,
}

/// Slot summaries for a corpus, plus the number of gold slots.
pub fn summarize(probs: &[LabelProbabilities], sentences: &[Sentence]) -> (Vec<SlotSummary>, usize) {
    let mut out = Vec::new();
    let mut gold = 0;
    for (p, s) in probs.iter().zip(sentences) {
        let slots = s.gold_slots();
        gold += slots.len();
        for (i, best) in best_candidates(p, s).into_iter().enumerate() {
            for c in ArgumentLabel::SLOTS {
                let (tok, prob) = best[c.index()];
                let Some(tok) = tok else { continue };
                let correct = slots.iter().any(|g| {
                    g.pred == i && g.label == c && s.clusters.get(&g.cluster).is_some_and(|m| m.contains(&tok))
                });
                out.push(SlotSummary { label: c, prob, correct });
            }
        }
    }
    (out, gold)
}

/// Overall F1 = 2·TP / (predictions + gold) at the given thresholds.
pub fn f1_at(summaries: &[SlotSummary], gold: usize, theta: &ThresholdSet) -> f64 {
    let (mut pred, mut tp) = (0usize, 0usize);
    for s in summaries {
        if s.prob > theta.get(s.label) {
            pred += 1;
            tp += s.correct as usize;
        }
    }
    if pred + gold == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (pred + gold) as f64
    }
}

pub fn grid_value(k: usize) -> f64 {
    k as f64 / 100.0
}

/// Coordinate search over the 0.01 grid, NOM then ACC then DAT, starting
/// from 0.5. The first pass sets each label to its best value given the
/// others (ties to the smallest θ); further passes move a threshold only on
/// a strict F1 gain and stop once a pass changes nothing.
pub fn search_thresholds(summaries: &[SlotSummary], gold: usize) -> ThresholdSet {
    let mut theta = ThresholdSet::default();
    let mut current = f1_at(summaries, gold, &theta);
    for pass in 0..100 {
        let mut changed = false;
        for c in ArgumentLabel::SLOTS {
            let mut best_k = None;
            let mut best_f = f64::NEG_INFINITY;
            for k in 0..=100 {
                let mut trial = theta;
                trial.0[c.index()] = grid_value(k);
                let f = f1_at(summaries, gold, &trial);
                if f > best_f {
                    best_f = f;
                    best_k = Some(k);
                }
            }
            let v = grid_value(best_k.expect("grid is nonempty"));
            if pass == 0 || best_f > current {
                if theta.0[c.index()] != v {
                    changed = true;
                }
                theta.0[c.index()] = v;
                current = best_f;
            }
        }
        if !changed && pass > 0 {
            break;
        }
    }
    theta
}

/// Arithmetic mean of several models' distributions for the same sentence.
pub fn ensemble_average(list: &[LabelProbabilities]) -> Result<LabelProbabilities> {
    let first = list.first().ok_or_else(|| Error::usage("ensemble of zero models"))?;
    let mut data = vec![0.0; first.data.len()];
    for p in list {
        if (p.q, p.n) != (first.q, first.n) {
            return Err(Error::usage(format!(
                "ensemble members disagree in shape: {}x{} vs {}x{}",
                first.q, first.n, p.q, p.n
            )));
        }
        for (d, v) in data.iter_mut().zip(&p.data) {
            *d += v;
        }
    }
    let k = list.len() as f64;
    data.iter_mut().for_each(|d| *d /= k);
    LabelProbabilities::new(first.q, first.n, data)
}

/// Prediction lines `<sent_id> <pred_id> <label> <tok_idx|-> <prob>`,
/// 1-based, one per slot.
pub fn format_predictions(s: &Sentence, a: &ArgumentAssignment, out: &mut String) {
    for (i, slots) in a.slots.iter().enumerate() {
        for c in ArgumentLabel::SLOTS {
            let d = slots[c.index()];
            let tok = d.token().map_or("-".to_string(), |t| (t + 1).to_string());
            let _ = writeln!(out, "{} {} {} {} {:.6}", s.id, i + 1, c, tok, d.prob);
        }
    }
}
