//! Corpus data model: sentences with bunsetsu dependency trees, predicates,
//! coreference clusters and gold argument slots.

mod format;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{parse_corpus, parse_sentences, serialize_corpus, serialize_sentence};
pub use split::{split, SplitRatios};
pub use synth::{generate_synthetic, GeneratorConfig};

/// Argument label with fixed ordinals `NOM=0, ACC=1, DAT=2, NONE=3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArgumentLabel {
    Nom = 0,
    Acc = 1,
    Dat = 2,
    None = 3,
}

impl ArgumentLabel {
    pub const ALL: [ArgumentLabel; 4] = [Self::Nom, Self::Acc, Self::Dat, Self::None];
    /// The labels that name argument slots.
    pub const SLOTS: [ArgumentLabel; 3] = [Self::Nom, Self::Acc, Self::Dat];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nom => "NOM",
            Self::Acc => "ACC",
            Self::Dat => "DAT",
            Self::None => "NONE",
        }
    }
}

impl fmt::Display for ArgumentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArgumentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "NOM" => Ok(Self::Nom),
            "ACC" => Ok(Self::Acc),
            "DAT" => Ok(Self::Dat),
            "NONE" => Ok(Self::None),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Dependency distance between two bunsetsu.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    SameBunsetsu,
    Edges(usize),
}

/// One annotated sentence. Token and predicate positions are 0-based here;
/// the file format is 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    /// Token index → index into `bunsetsu_ids`.
    pub bunsetsu_of: Vec<usize>,
    /// External bunsetsu ids, in declaration order.
    pub bunsetsu_ids: Vec<i64>,
    /// Bunsetsu index → parent bunsetsu index, `None` for the root.
    pub bunsetsu_head: Vec<Option<usize>>,
    /// Predicate token positions, strictly ascending.
    pub predicates: Vec<usize>,
    /// Cluster id → sorted member token indices.
    pub clusters: BTreeMap<u32, Vec<usize>>,
    /// (predicate index, label) → cluster id.
    pub gold_args: BTreeMap<(usize, ArgumentLabel), u32>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    fn integrity(&self, message: impl Into<String>) -> Error {
        Error::Integrity {
            sentence: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks every structural invariant of a sentence.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(self.integrity("sentence has no tokens"));
        }
        if self.bunsetsu_of.len() != n {
            return Err(self.integrity("token/bunsetsu map length mismatch"));
        }
        let nb = self.bunsetsu_ids.len();
        if self.bunsetsu_head.len() != nb {
            return Err(self.integrity("bunsetsu head table length mismatch"));
        }
        if let Some(&b) = self.bunsetsu_of.iter().find(|&&b| b >= nb) {
            return Err(self.integrity(format!("token refers to unknown bunsetsu index {b}")));
        }
        let roots = self.bunsetsu_head.iter().filter(|h| h.is_none()).count();
        if roots != 1 {
            return Err(self.integrity(format!("bunsetsu tree has {roots} roots")));
        }
        for start in 0..nb {
            let mut cur = start;
            let mut steps = 0;
            while let Some(parent) = self.bunsetsu_head[cur] {
                if parent >= nb {
                    return Err(self.integrity("bunsetsu head out of range"));
                }
                cur = parent;
                steps += 1;
                if steps > nb {
                    return Err(self.integrity("bunsetsu dependencies contain a cycle"));
                }
            }
        }
        if self.predicates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(self.integrity("predicate positions are not strictly ascending"));
        }
        if self.predicates.iter().any(|&p| p >= n) {
            return Err(self.integrity("predicate position outside the sentence"));
        }
        for (id, members) in &self.clusters {
            if members.is_empty() {
                return Err(self.integrity(format!("cluster {id} is empty")));
            }
            if members.iter().any(|&t| t >= n) {
                return Err(self.integrity(format!("cluster {id} has a token outside the sentence")));
            }
        }
        for (&(pred, label), cluster) in &self.gold_args {
            if label == ArgumentLabel::None {
                return Err(self.integrity("NONE used as an argument slot"));
            }
            if pred >= self.predicates.len() {
                return Err(self.integrity(format!("argument refers to undefined predicate {}", pred + 1)));
            }
            if !self.clusters.contains_key(cluster) {
                return Err(self.integrity(format!("argument refers to undefined cluster {cluster}")));
            }
        }
        Ok(())
    }

    /// Undirected tree distance between two bunsetsu (by index).
    pub fn bunsetsu_distance(&self, a: usize, b: usize) -> usize {
        let path_to_root = |mut x: usize| {
            let mut path = vec![x];
            while let Some(p) = self.bunsetsu_head[x] {
                path.push(p);
                x = p;
            }
            path
        };
        let pa = path_to_root(a);
        let pb = path_to_root(b);
        // Walk both root paths from the root end until they diverge.
        let mut common = 0;
        while common < pa.len()
            && common < pb.len()
            && pa[pa.len() - 1 - common] == pb[pb.len() - 1 - common]
        {
            common += 1;
        }
        (pa.len() - common) + (pb.len() - common)
    }

    /// Distance between predicate `pred`'s bunsetsu and token `token`'s.
    pub fn dependency_distance(&self, pred: usize, token: usize) -> Distance {
        let bp = self.bunsetsu_of[self.predicates[pred]];
        let bt = self.bunsetsu_of[token];
        if bp == bt {
            Distance::SameBunsetsu
        } else {
            Distance::Edges(self.bunsetsu_distance(bp, bt))
        }
    }

    pub fn is_candidate(&self, pred: usize, token: usize) -> bool {
        self.bunsetsu_of[token] != self.bunsetsu_of[self.predicates[pred]]
    }

    /// Cluster members eligible as arguments (outside the predicate's bunsetsu).
    pub fn eligible_members(&self, pred: usize, cluster: u32) -> Vec<usize> {
        self.clusters
            .get(&cluster)
            .map(|m| m.iter().copied().filter(|&t| self.is_candidate(pred, t)).collect())
            .unwrap_or_default()
    }

    /// Gold slots that survive the same-bunsetsu exclusion, with the distance
    /// to the nearest eligible member.
    pub fn gold_slots(&self) -> Vec<GoldSlot> {
        self.gold_args
            .iter()
            .filter_map(|(&(pred, label), &cluster)| {
                let members = self.eligible_members(pred, cluster);
                let distance = members
                    .iter()
                    .filter_map(|&t| match self.dependency_distance(pred, t) {
                        Distance::Edges(d) => Some(d),
                        Distance::SameBunsetsu => None,
                    })
                    .min()?;
                Some(GoldSlot {
                    pred,
                    label,
                    cluster,
                    distance,
                })
            })
            .collect()
    }

    /// Per-(predicate, token) training labels, predicate-major (`i * n + t`).
    /// The target of a slot is its eligible cluster member with the largest
    /// token index; if two slots of a predicate claim the same token, the
    /// lower label ordinal wins.
    pub fn training_labels(&self) -> Vec<ArgumentLabel> {
        let n = self.len();
        let mut labels = vec![ArgumentLabel::None; self.predicates.len() * n];
        for slot in self.gold_slots() {
            if let Some(&target) = self.eligible_members(slot.pred, slot.cluster).last() {
                let cell = &mut labels[slot.pred * n + target];
                if *cell == ArgumentLabel::None {
                    *cell = slot.label;
                }
            }
        }
        labels
    }
}

/// A gold argument slot that takes part in evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoldSlot {
    pub pred: usize,
    pub label: ArgumentLabel,
    pub cluster: u32,
    pub distance: usize,
}

/// Breadth-first distance over the undirected bunsetsu tree. Independent of
/// [`Sentence::bunsetsu_distance`]; used as its oracle.
pub fn bfs_bunsetsu_distance(s: &Sentence, a: usize, b: usize) -> usize {
    let nb = s.bunsetsu_ids.len();
    let mut adj = vec![Vec::new(); nb];
    for (child, head) in s.bunsetsu_head.iter().enumerate() {
        if let Some(h) = *head {
            adj[child].push(h);
            adj[h].push(child);
        }
    }
    let mut dist = vec![usize::MAX; nb];
    dist[a] = 0;
    let mut queue = VecDeque::from([a]);
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist[b]
}

pub const UNK: &str = "<unk>";

/// Dense surface → id map with the unknown word at id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            words: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        }
    }

    /// Ids are assigned in order of first appearance.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut v = Self::new();
        for s in sentences {
            for tok in &s.tokens {
                v.insert(tok);
            }
        }
        v
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn ids(&self, s: &Sentence) -> Vec<usize> {
        s.tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One word per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(UNK) {
            return Err(Error::format("vocabulary must start with the unknown-word entry"));
        }
        let mut v = Self::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "vocabulary entries must be single non-empty surfaces".into(),
                });
            }
            if v.index.contains_key(line) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("duplicate vocabulary entry {line:?}"),
                });
            }
            v.insert(line);
        }
        Ok(v)
    }
}

/// Sentences plus the vocabulary used to index them.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Builds the vocabulary from the sentences themselves.
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let vocab = Vocabulary::from_sentences(&sentences);
        Corpus { sentences, vocab }
    }

    pub fn with_vocab(sentences: Vec<Sentence>, vocab: Vocabulary) -> Self {
        Corpus { sentences, vocab }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Bunsetsu chain A→B→C with one token each; predicate in C.
    pub(crate) fn chain_sentence() -> Sentence {
        Sentence {
            id: "chain".into(),
            tokens: vec!["a".into(), "b".into(), "c".into()],
            bunsetsu_of: vec![0, 1, 2],
            bunsetsu_ids: vec![1, 2, 3],
            bunsetsu_head: vec![Some(1), Some(2), None],
            predicates: vec![2],
            clusters: BTreeMap::from([(1, vec![0]), (2, vec![1])]),
            gold_args: BTreeMap::from([((0, ArgumentLabel::Nom), 1), ((0, ArgumentLabel::Acc), 2)]),
        }
    }

    #[test]
    fn distances_on_a_chain() {
        let s = chain_sentence();
        assert_eq!(s.dependency_distance(0, 1), Distance::Edges(1));
        assert_eq!(s.dependency_distance(0, 0), Distance::Edges(2));
        assert_eq!(s.dependency_distance(0, 2), Distance::SameBunsetsu);
        assert_eq!(bfs_bunsetsu_distance(&s, 0, 2), 2);
    }

    #[test]
    fn gold_slots_and_targets() {
        let s = chain_sentence();
        let slots = s.gold_slots();
        assert_eq!(slots.len(), 2);
        assert_eq!(slots[0].distance, 2);
        assert_eq!(slots[1].distance, 1);
        let labels = s.training_labels();
        assert_eq!(labels, vec![ArgumentLabel::Nom, ArgumentLabel::Acc, ArgumentLabel::None]);
    }

    #[test]
    fn head_final_target_for_multi_token_cluster() {
        let mut s = chain_sentence();
        s.clusters.insert(1, vec![0, 1]);
        s.gold_args.remove(&(0, ArgumentLabel::Acc));
        let labels = s.training_labels();
        assert_eq!(labels[1], ArgumentLabel::Nom);
        assert_eq!(labels[0], ArgumentLabel::None);
        // Nearest member decides the stratum.
        assert_eq!(s.gold_slots()[0].distance, 1);
    }

    #[test]
    fn validation_catches_cycles_and_dangling_references() {
        let mut s = chain_sentence();
        s.bunsetsu_head = vec![Some(1), Some(0), None];
        assert!(s.validate().is_err());

        let mut s = chain_sentence();
        s.gold_args.insert((0, ArgumentLabel::Dat), 9);
        assert!(matches!(s.validate(), Err(Error::Integrity { .. })));

        let mut s = chain_sentence();
        s.predicates = vec![2, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn vocabulary_unknowns_map_to_zero() {
        let s = chain_sentence();
        let v = Vocabulary::from_sentences([&s]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("zzz"), 0);
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
    }
}
