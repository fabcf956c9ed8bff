//! Cluster-based precision/recall/F1 stratified by dependency distance, and
//! the permutation significance test.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{ArgumentLabel, Distance, Sentence};
use crate::decoder::ArgumentAssignment;
use crate::error::{Error, Result};

/// Distance strata. `Zero` covers every distance above one; the numbered
/// buckets split it further.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Stratum {
    Dep,
    Zero,
    Dist2,
    Dist3,
    Dist4,
    Dist5Plus,
}

impl Stratum {
    pub const ALL: [Stratum; 6] = [
        Self::Dep,
        Self::Zero,
        Self::Dist2,
        Self::Dist3,
        Self::Dist4,
        Self::Dist5Plus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dep => "Dep",
            Self::Zero => "Zero",
            Self::Dist2 => "dist2",
            Self::Dist3 => "dist3",
            Self::Dist4 => "dist4",
            Self::Dist5Plus => "dist5+",
        }
    }

    /// Strata a distance belongs to: `[Dep]` or `[Zero, bucket]`.
    pub fn of_distance(d: usize) -> Vec<Stratum> {
        match d {
            0 | 1 => vec![Self::Dep],
            2 => vec![Self::Zero, Self::Dist2],
            3 => vec![Self::Zero, Self::Dist3],
            4 => vec![Self::Zero, Self::Dist4],
            _ => vec![Self::Zero, Self::Dist5Plus],
        }
    }
}

/// Counts for one report cell. Recall counts true positives by the gold
/// slot's stratum, precision by the predicted token's stratum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub tp_gold: usize,
    pub tp_predicted: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.tp_predicted as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.tp_gold as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub overall: Counts,
    pub by_label: BTreeMap<ArgumentLabel, Counts>,
    pub by_stratum: BTreeMap<Stratum, Counts>,
    pub by_stratum_label: BTreeMap<(Stratum, ArgumentLabel), Counts>,
}

#[derive(Serialize)]
struct CellJson {
    precision: f64,
    recall: f64,
    f1: f64,
    #[serde(flatten)]
    counts: Counts,
}

impl From<Counts> for CellJson {
    fn from(c: Counts) -> Self {
        CellJson {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            counts: c,
        }
    }
}

#[derive(Serialize)]
struct RowJson {
    all: CellJson,
    labels: BTreeMap<String, CellJson>,
}

impl EvalReport {
    fn bump(&mut self, strata: &[Stratum], label: ArgumentLabel, f: impl Fn(&mut Counts)) {
        for &s in strata {
            f(self.by_stratum.entry(s).or_default());
            f(self.by_stratum_label.entry((s, label)).or_default());
        }
    }

    /// Adds one sentence's assignment to the report.
    pub fn add(&mut self, s: &Sentence, a: &ArgumentAssignment) {
        let slots = s.gold_slots();
        for g in &slots {
            let strata = Stratum::of_distance(g.distance);
            let hit = a
                .token(g.pred, g.label)
                .is_some_and(|t| s.clusters.get(&g.cluster).is_some_and(|m| m.contains(&t)));
            let bump = |c: &mut Counts| {
                c.gold += 1;
                c.tp_gold += hit as usize;
            };
            bump(&mut self.overall);
            bump(self.by_label.entry(g.label).or_default());
            self.bump(&strata, g.label, bump);
        }
        for (i, decisions) in a.slots.iter().enumerate() {
            for c in ArgumentLabel::SLOTS {
                let Some(t) = decisions[c.index()].token() else { continue };
                let hit = slots.iter().any(|g| {
                    g.pred == i && g.label == c && s.clusters.get(&g.cluster).is_some_and(|m| m.contains(&t))
                });
                let d = match s.dependency_distance(i, t) {
                    Distance::Edges(d) => d,
                    Distance::SameBunsetsu => 0,
                };
                let bump = |x: &mut Counts| {
                    x.predicted += 1;
                    x.tp_predicted += hit as usize;
                };
                bump(&mut self.overall);
                bump(self.by_label.entry(c).or_default());
                self.bump(&Stratum::of_distance(d), c, bump);
            }
        }
    }

    pub fn stratum(&self, s: Stratum) -> Counts {
        self.by_stratum.get(&s).copied().unwrap_or_default()
    }

    pub fn cell(&self, s: Stratum, c: ArgumentLabel) -> Counts {
        self.by_stratum_label.get(&(s, c)).copied().unwrap_or_default()
    }

    pub fn label(&self, c: ArgumentLabel) -> Counts {
        self.by_label.get(&c).copied().unwrap_or_default()
    }

    /// Aligned plain-text table: one row per stratum, F1 per label.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "", "P", "R", "F1", "NOM", "ACC", "DAT", "gold"
        );
        let mut row = |name: &str, all: Counts, per: [Counts; 3]| {
            let _ = writeln!(
                out,
                "{:<8} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7}",
                name,
                100.0 * all.precision(),
                100.0 * all.recall(),
                100.0 * all.f1(),
                100.0 * per[0].f1(),
                100.0 * per[1].f1(),
                100.0 * per[2].f1(),
                all.gold
            );
        };
        row(
            "All",
            self.overall,
            ArgumentLabel::SLOTS.map(|c| self.label(c)),
        );
        for s in Stratum::ALL {
            row(s.as_str(), self.stratum(s), ArgumentLabel::SLOTS.map(|c| self.cell(s, c)));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let labels = |f: &dyn Fn(ArgumentLabel) -> Counts| {
            ArgumentLabel::SLOTS
                .iter()
                .map(|&c| (c.to_string(), CellJson::from(f(c))))
                .collect::<BTreeMap<_, _>>()
        };
        let mut rows = BTreeMap::new();
        rows.insert(
            "All".to_string(),
            RowJson {
                all: self.overall.into(),
                labels: labels(&|c| self.label(c)),
            },
        );
        for s in Stratum::ALL {
            rows.insert(
                s.as_str().to_string(),
                RowJson {
                    all: self.stratum(s).into(),
                    labels: labels(&|c| self.cell(s, c)),
                },
            );
        }
        serde_json::to_string_pretty(&rows).expect("report serializes")
    }
}

/// Scores a corpus of assignments against the gold annotation.
pub fn score(assignments: &[ArgumentAssignment], sentences: &[Sentence]) -> Result<EvalReport> {
    if assignments.len() != sentences.len() {
        return Err(Error::usage(format!(
            "{} assignments for {} sentences",
            assignments.len(),
            sentences.len()
        )));
    }
    let mut report = EvalReport::default();
    for (a, s) in assignments.iter().zip(sentences) {
        if a.slots.len() != s.num_predicates() {
            return Err(Error::usage(format!("assignment for {} has the wrong predicate count", s.id)));
        }
        report.add(s, a);
    }
    Ok(report)
}

pub const EXACT_LIMIT: u64 = 200_000;
pub const MONTE_CARLO_DRAWS: usize = 100_000;
pub const DEFAULT_PERMUTATION_SEED: u64 = 20_170_731;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum TestMethod {
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignificanceResult {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p_value: f64,
    pub method: TestMethod,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// One-sided unpaired permutation test of `mean(A) > mean(B)`: exact when
/// the number of regroupings is at most 200,000, Monte Carlo otherwise.
pub fn permutation_test(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    let total = binomial((a.len() + b.len()) as u64, a.len() as u64);
    let method = if total <= EXACT_LIMIT {
        TestMethod::Exact
    } else {
        TestMethod::MonteCarlo {
            draws: MONTE_CARLO_DRAWS,
            seed: DEFAULT_PERMUTATION_SEED,
        }
    };
    permutation_test_with(a, b, method)
}

pub fn permutation_test_with(a: &[f64], b: &[f64], method: TestMethod) -> Result<SignificanceResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::usage("permutation test needs at least two values per sample"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let na = a.len();
    let nb = b.len();
    let total: f64 = pooled.iter().sum();
    let stat = |sum_a: f64| sum_a / na as f64 - (total - sum_a) / nb as f64;
    let observed = mean(a) - mean(b);
    let tol = 1e-9 * observed.abs().max(1.0);
    let at_least = |sum_a: f64| stat(sum_a) >= observed - tol;

    let p_value = match method {
        TestMethod::Exact => {
            let mut count = 0u64;
            let mut seen = 0u64;
            let mut stack: Vec<(usize, usize, f64)> = vec![(0, 0, 0.0)];
            // Depth-first over index subsets of size na.
            while let Some((next, chosen, sum)) = stack.pop() {
                if chosen == na {
                    seen += 1;
                    count += at_least(sum) as u64;
                    continue;
                }
                if pooled.len() - next < na - chosen {
                    continue;
                }
                stack.push((next + 1, chosen, sum));
                stack.push((next + 1, chosen + 1, sum + pooled[next]));
            }
            count as f64 / seen as f64
        }
        TestMethod::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm = pooled.clone();
            let mut count = 0usize;
            for _ in 0..draws {
                perm.shuffle(&mut rng);
                count += at_least(perm[..na].iter().sum()) as usize;
            }
            (1 + count) as f64 / (draws + 1) as f64
        }
    };
    Ok(SignificanceResult {
        a: a.to_vec(),
        b: b.to_vec(),
        p_value,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_sentences;
    use crate::decoder::SlotDecision;
    use proptest::prelude::*;

    fn decision(tok: Option<usize>) -> SlotDecision {
        SlotDecision {
            best: tok,
            prob: if tok.is_some() { 0.9 } else { 0.0 },
            selected: tok.is_some(),
        }
    }

    fn assignment(slots: &[[Option<usize>; 3]]) -> ArgumentAssignment {
        ArgumentAssignment {
            slots: slots.iter().map(|s| s.map(decision)).collect(),
        }
    }

    /// Sentence 1: NOM at distance 1 and ACC at distance 2 for one predicate.
    /// Sentence 2: NOM at distance 1.
    const TWO: &str = "#SENT a\nT 1 x 1\nT 2 y 2\nT 3 z 3\nT 4 v 4\nB 1 4\nB 2 3\nB 3 4\nB 4 -1\nP 1 4\nC 1 1\nC 2 2\nA 1 NOM 1\nA 1 ACC 2\n\n\
#SENT b\nT 1 x 1\nT 2 v 2\nB 1 2\nB 2 -1\nP 1 2\nC 1 1\nA 1 NOM 1\n";

    #[test]
    fn hand_computed_scores() {
        let s = parse_sentences(TWO).unwrap();
        // one correct NOM, one wrong ACC prediction (token z), nothing for b
        let a = vec![assignment(&[[Some(0), Some(2), None]]), assignment(&[[None, None, None]])];
        let r = score(&a, &s).unwrap();
        assert_eq!(r.overall.precision(), 0.5);
        assert!((r.overall.recall() - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.overall.f1() - 0.4).abs() < 1e-12);
        assert_eq!(r.stratum(Stratum::Dep).gold, 2);
        assert_eq!(r.stratum(Stratum::Zero).gold, 1);
        assert_eq!(r.stratum(Stratum::Dist2).gold, 1);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let s = parse_sentences(TWO).unwrap();
        let perfect = vec![assignment(&[[Some(0), Some(1), None]]), assignment(&[[Some(0), None, None]])];
        let r = score(&perfect, &s).unwrap();
        for st in [Stratum::Dep, Stratum::Zero, Stratum::Dist2] {
            assert_eq!(r.stratum(st).f1(), 1.0);
        }
        assert_eq!(r.overall.f1(), 1.0);
        let empty = vec![assignment(&[[None; 3]]), assignment(&[[None; 3]])];
        let r = score(&empty, &s).unwrap();
        assert_eq!((r.overall.precision(), r.overall.recall(), r.overall.f1()), (0.0, 0.0, 0.0));
        assert!(r.to_table().contains("Zero"));
        assert!(r.to_json().contains("\"dist5+\""));
    }

    #[test]
    fn disjoint_extremes() {
        let a = [1.0; 10];
        let b = [0.0; 10];
        let r = permutation_test(&a, &b).unwrap();
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p_value - 1.0 / 184_756.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a = [0.81, 0.83, 0.82, 0.80];
        let r = permutation_test(&a, &a).unwrap();
        assert!(r.p_value >= 0.5);
        assert!(permutation_test(&a, &[]).is_err());
    }

    #[test]
    fn exact_and_monte_carlo_agree() {
        let a = [0.84, 0.85, 0.83, 0.86];
        let b = [0.83, 0.82, 0.84, 0.81];
        let exact = permutation_test_with(&a, &b, TestMethod::Exact).unwrap();
        let mc = permutation_test_with(&a, &b, TestMethod::MonteCarlo { draws: 100_000, seed: 3 }).unwrap();
        assert!((exact.p_value - mc.p_value).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn reported_f1_matches_its_precision_and_recall(
            gold in 0usize..50, pred in 0usize..50, tp in 0usize..50
        ) {
            let tp = tp.min(gold).min(pred);
            let c = Counts { gold, predicted: pred, tp_gold: tp, tp_predicted: tp };
            let (p, r) = (c.precision(), c.recall());
            let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((c.f1() - expect).abs() < 1e-12);
        }

        #[test]
        fn opposite_tests_cover_the_null(a in proptest::collection::vec(0.0f64..1.0, 2..6), b in proptest::collection::vec(0.0f64..1.0, 2..6)) {
            let ab = permutation_test(&a, &b).unwrap().p_value;
            let ba = permutation_test(&b, &a).unwrap().p_value;
            prop_assert!(ab + ba >= 1.0 - 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
