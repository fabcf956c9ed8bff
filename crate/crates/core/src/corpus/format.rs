//! Line-oriented corpus file format.
//!
//! ```text
//! #SENT <sent_id>
//! T <tok_idx> <surface> <bunsetsu_id>
//! B <bunsetsu_id> <head_bunsetsu_id|-1>
//! P <pred_id> <tok_idx>
//! C <cluster_id> <tok_idx>[,<tok_idx>...]
//! A <pred_id> <NOM|ACC|DAT> <cluster_id>
//! ```
//!
//! Sentences are separated by blank lines; indices are 1-based.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{ArgumentLabel, Corpus, Sentence};
use crate::error::{Error, Result};

struct Builder {
    id: String,
    start_line: usize,
    tokens: Vec<(String, i64)>,
    bunsetsu: Vec<(i64, i64, usize)>,
    predicates: Vec<usize>,
    clusters: BTreeMap<u32, Vec<usize>>,
    args: Vec<(usize, ArgumentLabel, u32, usize)>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} {s:?}")))
}

impl Builder {
    fn new(id: String, start_line: usize) -> Self {
        Builder {
            id,
            start_line,
            tokens: Vec::new(),
            bunsetsu: Vec::new(),
            predicates: Vec::new(),
            clusters: BTreeMap::new(),
            args: Vec::new(),
        }
    }

    fn record(&mut self, lineno: usize, fields: &[&str]) -> Result<()> {
        let arity = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(parse_err(
                    lineno,
                    format!("{} record needs {} fields, found {}", fields[0], n - 1, fields.len() - 1),
                ))
            }
        };
        match fields[0] {
            "T" => {
                arity(4)?;
                let idx: usize = field(lineno, "token index", fields[1])?;
                if idx != self.tokens.len() + 1 {
                    return Err(parse_err(lineno, format!("expected token index {}, found {idx}", self.tokens.len() + 1)));
                }
                let b: i64 = field(lineno, "bunsetsu id", fields[3])?;
                self.tokens.push((fields[2].to_string(), b));
            }
            "B" => {
                arity(3)?;
                let id: i64 = field(lineno, "bunsetsu id", fields[1])?;
                let head: i64 = field(lineno, "head bunsetsu id", fields[2])?;
                if id < 0 {
                    return Err(parse_err(lineno, "bunsetsu ids must be non-negative"));
                }
                if self.bunsetsu.iter().any(|&(b, _, _)| b == id) {
                    return Err(parse_err(lineno, format!("duplicate bunsetsu {id}")));
                }
                self.bunsetsu.push((id, head, lineno));
            }
            "P" => {
                arity(3)?;
                let pid: usize = field(lineno, "predicate id", fields[1])?;
                if pid != self.predicates.len() + 1 {
                    return Err(parse_err(lineno, format!("expected predicate id {}, found {pid}", self.predicates.len() + 1)));
                }
                let tok: usize = field(lineno, "token index", fields[2])?;
                if tok == 0 {
                    return Err(parse_err(lineno, "token indices are 1-based"));
                }
                self.predicates.push(tok - 1);
            }
            "C" => {
                arity(3)?;
                let cid: u32 = field(lineno, "cluster id", fields[1])?;
                let mut members = Vec::new();
                for part in fields[2].split(',') {
                    let t: usize = field(lineno, "cluster member", part)?;
                    if t == 0 {
                        return Err(parse_err(lineno, "token indices are 1-based"));
                    }
                    members.push(t - 1);
                }
                members.sort_unstable();
                members.dedup();
                if self.clusters.insert(cid, members).is_some() {
                    return Err(parse_err(lineno, format!("duplicate cluster {cid}")));
                }
            }
            "A" => {
                arity(4)?;
                let pid: usize = field(lineno, "predicate id", fields[1])?;
                let label: ArgumentLabel = fields[2]
                    .parse()
                    .map_err(|e: String| parse_err(lineno, e))?;
                if label == ArgumentLabel::None || pid == 0 {
                    return Err(parse_err(lineno, "argument slots are NOM, ACC or DAT of a 1-based predicate"));
                }
                let cid: u32 = field(lineno, "cluster id", fields[3])?;
                self.args.push((pid - 1, label, cid, lineno));
            }
            other => return Err(parse_err(lineno, format!("unknown record type {other:?}"))),
        }
        Ok(())
    }

    fn finish(self) -> Result<Sentence> {
        let integrity = |message: String| Error::Integrity {
            sentence: self.id.clone(),
            message,
        };
        if self.tokens.is_empty() {
            return Err(parse_err(self.start_line, format!("sentence {} has no tokens", self.id)));
        }
        let index: HashMap<i64, usize> = self
            .bunsetsu
            .iter()
            .enumerate()
            .map(|(i, &(id, _, _))| (id, i))
            .collect();
        let mut bunsetsu_head = Vec::with_capacity(self.bunsetsu.len());
        for &(id, head, _) in &self.bunsetsu {
            bunsetsu_head.push(match head {
                -1 => None,
                h => Some(
                    *index
                        .get(&h)
                        .ok_or_else(|| integrity(format!("bunsetsu {id} depends on undefined bunsetsu {h}")))?,
                ),
            });
        }
        let bunsetsu_of = self
            .tokens
            .iter()
            .map(|(_, b)| {
                index
                    .get(b)
                    .copied()
                    .ok_or_else(|| integrity(format!("token refers to undefined bunsetsu {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gold_args = BTreeMap::new();
        for &(pred, label, cluster, lineno) in &self.args {
            if gold_args.insert((pred, label), cluster).is_some() {
                return Err(parse_err(lineno, format!("duplicate slot {label} for predicate {}", pred + 1)));
            }
        }
        let sentence = Sentence {
            id: self.id.clone(),
            tokens: self.tokens.iter().map(|(s, _)| s.clone()).collect(),
            bunsetsu_of,
            bunsetsu_ids: self.bunsetsu.iter().map(|&(id, _, _)| id).collect(),
            bunsetsu_head,
            predicates: self.predicates,
            clusters: self.clusters,
            gold_args,
        };
        sentence.validate()?;
        Ok(sentence)
    }
}

/// Parses sentences and checks their integrity.
pub fn parse_sentences(text: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current: Option<Builder> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = current.take() {
                sentences.push(b.finish()?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(lineno, "fields must be separated by single spaces"));
        }
        if fields[0] == "#SENT" {
            if fields.len() != 2 {
                return Err(parse_err(lineno, "#SENT takes exactly one id"));
            }
            if let Some(b) = current.take() {
                sentences.push(b.finish()?);
            }
            current = Some(Builder::new(fields[1].to_string(), lineno));
            continue;
        }
        match current.as_mut() {
            Some(b) => b.record(lineno, &fields)?,
            None => return Err(parse_err(lineno, "record outside of a #SENT block")),
        }
    }
    if let Some(b) = current.take() {
        sentences.push(b.finish()?);
    }
    Ok(sentences)
}

/// Parses a corpus and builds its vocabulary from its own tokens.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    Ok(Corpus::new(parse_sentences(text)?))
}

pub fn serialize_sentence(s: &Sentence, out: &mut String) {
    // Writing into a String cannot fail.
    let _ = writeln!(out, "#SENT {}", s.id);
    for (i, tok) in s.tokens.iter().enumerate() {
        let _ = writeln!(out, "T {} {} {}", i + 1, tok, s.bunsetsu_ids[s.bunsetsu_of[i]]);
    }
    for (b, head) in s.bunsetsu_head.iter().enumerate() {
        let h = head.map_or(-1, |h| s.bunsetsu_ids[h]);
        let _ = writeln!(out, "B {} {}", s.bunsetsu_ids[b], h);
    }
    for (i, p) in s.predicates.iter().enumerate() {
        let _ = writeln!(out, "P {} {}", i + 1, p + 1);
    }
    for (id, members) in &s.clusters {
        let list: Vec<String> = members.iter().map(|t| (t + 1).to_string()).collect();
        let _ = writeln!(out, "C {} {}", id, list.join(","));
    }
    for (&(pred, label), cluster) in &s.gold_args {
        let _ = writeln!(out, "A {} {} {}", pred + 1, label, cluster);
    }
}

pub fn serialize_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        serialize_sentence(s, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "#SENT s1\nT 1 kare 1\nT 2 ga 1\nT 3 hashiru 2\nB 1 2\nB 2 -1\nP 1 3\nC 1 1\nA 1 NOM 1\n";

    #[test]
    fn minimal_sentence() {
        let c = parse_corpus(MINIMAL).unwrap();
        assert_eq!(c.len(), 1);
        let s = &c.sentences[0];
        assert_eq!(s.len(), 3);
        assert_eq!(s.num_predicates(), 1);
        assert_eq!(s.gold_args[&(0, ArgumentLabel::Nom)], 1);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = parse_sentences(MINIMAL).unwrap();
        let text = serialize_corpus(&s);
        assert_eq!(text, MINIMAL);
        assert_eq!(parse_sentences(&text).unwrap(), s);
    }

    #[test]
    fn undefined_cluster_is_an_integrity_error() {
        let bad = MINIMAL.replace("A 1 NOM 1", "A 1 NOM 7");
        assert!(matches!(parse_corpus(&bad), Err(Error::Integrity { .. })));
    }

    #[test]
    fn undefined_predicate_is_an_integrity_error() {
        let bad = MINIMAL.replace("A 1 NOM 1", "A 2 NOM 1");
        assert!(matches!(parse_corpus(&bad), Err(Error::Integrity { .. })));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let bad = MINIMAL.replace("T 2 ga 1", "T 2 ga");
        match parse_corpus(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = MINIMAL.replace("A 1 NOM 1", "A 1 NONE 1");
        assert!(matches!(parse_corpus(&bad), Err(Error::Parse { line: 9, .. })));
    }

    #[test]
    fn multiple_sentences_and_unannotated_input() {
        let text = format!("{MINIMAL}\n#SENT s2\nT 1 x 5\nT 2 y 6\nB 5 6\nB 6 -1\nP 1 2\n");
        let c = parse_corpus(&text).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.sentences[1].gold_args.is_empty());
        assert_eq!(c.sentences[1].bunsetsu_ids, vec![5, 6]);
    }
}
