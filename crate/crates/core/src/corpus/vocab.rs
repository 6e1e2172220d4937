//! Token, type and relation vocabularies, plus pretrained vector loading.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Document;
use crate::{HinError, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Pretrained word vectors: one token per line, token then whitespace
/// separated decimals.
#[derive(Clone, Debug)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub by_token: HashMap<String, Vec<f64>>,
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<PretrainedVectors> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| HinError::io(&display, e))?;
    let mut dim = None;
    let mut by_token = HashMap::new();
    for (li, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| HinError::invalid("vector file", format!("{display}:{}: empty line", li + 1)))?;
        let vals: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| {
                    HinError::invalid("vector file", format!("{display}:{}: bad number `{p}`", li + 1))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(HinError::invalid(
                    "vector file",
                    format!("{display}:{}: dimension {} != {}", li + 1, vals.len(), d),
                ))
            }
            _ => {}
        }
        by_token.insert(token.to_string(), vals);
    }
    Ok(PretrainedVectors {
        dim: dim.unwrap_or(0),
        by_token,
    })
}

/// How many vocabulary rows were covered by the pretrained file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub matched: usize,
    pub random_init: usize,
    pub pretrained_rows: usize,
}

/// Dense, stable id maps for tokens (PAD=0, UNK=1), entity types and
/// relations, in first-appearance order over the corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    pub types: Vec<String>,
    pub relations: Vec<String>,
    #[serde(skip)]
    token_ids: HashMap<String, usize>,
    #[serde(skip)]
    type_ids: HashMap<String, usize>,
    #[serde(skip)]
    relation_ids: HashMap<String, usize>,
    /// Word-id → pretrained row, for ids whose token matched the vector
    /// file (case-sensitive first, then lowercased).
    #[serde(skip)]
    pub pretrained_rows: HashMap<usize, Vec<f64>>,
    pub coverage: Option<Coverage>,
}

impl Vocabulary {
    fn from_lists(tokens: Vec<String>, types: Vec<String>, relations: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens,
            types,
            relations,
            token_ids: HashMap::new(),
            type_ids: HashMap::new(),
            relation_ids: HashMap::new(),
            pretrained_rows: HashMap::new(),
            coverage: None,
        };
        v.rebuild_maps();
        v
    }

    /// Rebuild the lookup maps from the id lists (needed after
    /// deserialization, which skips them).
    pub fn rebuild_maps(&mut self) {
        self.token_ids = self.tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        self.type_ids = self.types.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        self.relation_ids =
            self.relations.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    }

    /// Word id with unknown tokens mapped to UNK.
    pub fn word_id(&self, token: &str) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn type_id(&self, t: &str) -> Option<usize> {
        self.type_ids.get(t).copied()
    }

    pub fn relation_id(&self, r: &str) -> Option<usize> {
        self.relation_ids.get(r).copied()
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }
}

/// Build vocabularies over `documents`. Tokens seen at least `min_count`
/// times get ids in first-appearance order after PAD and UNK; rarer tokens
/// map to UNK. When `pretrained` is given, matched rows are recorded for
/// table construction and a coverage summary is filled in.
pub fn build_vocab(
    documents: &[Document],
    pretrained: Option<&PretrainedVectors>,
    min_count: usize,
) -> Result<(Vocabulary, Coverage)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in documents {
        for s in &d.sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }

    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let mut types: Vec<String> = Vec::new();
    let mut relations: Vec<String> = Vec::new();
    for d in documents {
        for s in &d.sentences {
            for t in s {
                if counts[t.as_str()] >= min_count && seen.insert(t.as_str(), ()).is_none() {
                    tokens.push(t.clone());
                }
            }
        }
        for e in &d.entities {
            if !types.contains(&e.etype) {
                types.push(e.etype.clone());
            }
        }
        for f in &d.facts {
            if !relations.contains(&f.relation) {
                relations.push(f.relation.clone());
            }
        }
    }

    let mut vocab = Vocabulary::from_lists(tokens, types, relations);
    let mut coverage = Coverage::default();
    if let Some(pre) = pretrained {
        coverage.pretrained_rows = pre.by_token.len();
        for (id, token) in vocab.tokens.iter().enumerate() {
            if id == PAD_ID || id == UNK_ID {
                continue;
            }
            let row = pre
                .by_token
                .get(token)
                .or_else(|| pre.by_token.get(&token.to_lowercase()));
            match row {
                Some(r) => {
                    coverage.matched += 1;
                    vocab.pretrained_rows.insert(id, r.clone());
                }
                None => coverage.random_init += 1,
            }
        }
        vocab.coverage = Some(coverage);
    }
    Ok((vocab, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Mention};

    fn doc_with_tokens(tokens: &[&str]) -> Document {
        Document {
            id: "d".into(),
            sentences: vec![tokens.iter().map(|s| s.to_string()).collect()],
            entities: vec![Entity {
                mentions: vec![Mention { sent_id: 0, start: 0, end: 1, name: tokens[0].into() }],
                etype: "PER".into(),
            }],
            facts: vec![],
        }
    }

    #[test]
    fn ids_in_first_appearance_order() {
        let doc = doc_with_tokens(&["a", "b", "a"]);
        let (v, _) = build_vocab(&[doc], None, 1).unwrap();
        assert_eq!(v.tokens, vec!["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.word_id("a"), 2);
        assert_eq!(v.word_id("b"), 3);
        assert_eq!(v.word_id("zzz"), UNK_ID);
    }

    #[test]
    fn min_count_filters_to_unk() {
        let doc = doc_with_tokens(&["a", "b", "a"]);
        let (v, _) = build_vocab(&[doc], None, 2).unwrap();
        assert_eq!(v.tokens, vec!["<pad>", "<unk>", "a"]);
        assert_eq!(v.word_id("b"), UNK_ID);
    }

    #[test]
    fn coverage_matches_hand_count() {
        let doc = doc_with_tokens(&["Alpha", "beta", "gamma"]);
        let pre = PretrainedVectors {
            dim: 2,
            by_token: [
                ("alpha".to_string(), vec![1.0, 2.0]),
                ("beta".to_string(), vec![3.0, 4.0]),
                ("delta".to_string(), vec![5.0, 6.0]),
            ]
            .into_iter()
            .collect(),
        };
        let (v, cov) = build_vocab(&[doc], Some(&pre), 1).unwrap();
        // "Alpha" matches via lowercase fallback, "beta" exactly, "gamma" not.
        assert_eq!(cov.matched, 2);
        assert_eq!(cov.random_init, 1);
        assert_eq!(cov.pretrained_rows, 3);
        assert_eq!(v.pretrained_rows[&v.word_id("Alpha")], vec![1.0, 2.0]);
    }

    #[test]
    fn vector_file_parses_and_rejects_ragged_dims() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "hello 0.1 0.2").unwrap();
        writeln!(f, "world 0.3 0.4").unwrap();
        let v = load_vectors(f.path()).unwrap();
        assert_eq!(v.dim, 2);
        assert_eq!(v.by_token["world"], vec![0.3, 0.4]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "a 0.1 0.2").unwrap();
        writeln!(bad, "b 0.3").unwrap();
        assert!(load_vectors(bad.path()).is_err());
    }
}
