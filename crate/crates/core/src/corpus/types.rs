use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub sentence_index: usize,
    pub position_in_sentence: usize,
    pub global_index: usize,
}

/// One occurrence of an entity; `start..end` are global token indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub entity_id: usize,
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn tokens(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub entity_id: usize,
    pub mentions: Vec<Mention>,
    pub type_label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationFact {
    pub subject: usize,
    pub object: usize,
    pub relation: usize,
    pub evidence: BTreeSet<usize>,
}

/// Dependency tree of one sentence in CoNLL-U conventions: `heads[i]` is the
/// 1-based head position of token `i`, 0 for the root.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DependencyParse {
    pub forms: Vec<String>,
    pub heads: Vec<usize>,
    pub relations: Vec<String>,
}

impl DependencyParse {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Sentence-local (0-based) positions whose head is the artificial root.
    pub fn roots(&self) -> Vec<usize> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(i, &h)| (h == 0).then_some(i))
            .collect()
    }

    /// Unique root position; `None` unless exactly one token has head 0.
    pub fn root(&self) -> Option<usize> {
        match self.roots().as_slice() {
            [r] => Some(*r),
            _ => None,
        }
    }

    /// (dependent, head) pairs, both 0-based sentence positions.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.heads
            .iter()
            .enumerate()
            .filter(|&(_i, &h)| h > 0)
            .map(|(i, &h)| (i, h - 1))
    }
}

/// Phrase-structure node. Leaves carry the word as their label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstituencyNode {
    pub label: String,
    pub children: Vec<ConstituencyNode>,
    pub leaf_token: Option<usize>,
}

impl ConstituencyNode {
    pub fn leaf(label: impl Into<String>, token: usize) -> Self {
        ConstituencyNode {
            label: label.into(),
            children: Vec::new(),
            leaf_token: Some(token),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<ConstituencyNode>) -> Self {
        ConstituencyNode {
            label: label.into(),
            children,
            leaf_token: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&ConstituencyNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if n.is_leaf() {
                out.push(n);
            } else {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Bracketed rendering, words as leaves.
    pub fn to_bracketed(&self) -> String {
        if self.is_leaf() {
            return escape_word(&self.label);
        }
        let inner: Vec<String> = self.children.iter().map(|c| c.to_bracketed()).collect();
        format!("({} {})", self.label, inner.join(" "))
    }
}

pub(crate) fn escape_word(w: &str) -> String {
    match w {
        "(" => "-LRB-".into(),
        ")" => "-RRB-".into(),
        _ => w.to_string(),
    }
}

pub(crate) fn unescape_word(w: &str) -> &str {
    match w {
        "-LRB-" => "(",
        "-RRB-" => ")",
        _ => w,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    /// Global token range of each sentence.
    pub sentence_spans: Vec<std::ops::Range<usize>>,
    pub entities: Vec<Entity>,
    pub facts: Vec<RelationFact>,
    pub dependency_parses: Vec<DependencyParse>,
    pub constituency_trees: Vec<ConstituencyNode>,
}

impl AnnotatedDocument {
    /// Assembles tokens and sentence spans from per-sentence word lists.
    pub fn from_sentences(doc_id: impl Into<String>, sentences: &[Vec<String>]) -> Self {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for (s, words) in sentences.iter().enumerate() {
            let start = tokens.len();
            for (p, w) in words.iter().enumerate() {
                tokens.push(Token {
                    surface: w.clone(),
                    sentence_index: s,
                    position_in_sentence: p,
                    global_index: tokens.len(),
                });
            }
            spans.push(start..tokens.len());
        }
        AnnotatedDocument {
            doc_id: doc_id.into(),
            tokens,
            sentence_spans: spans,
            entities: Vec::new(),
            facts: Vec::new(),
            dependency_parses: Vec::new(),
            constituency_trees: Vec::new(),
        }
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_spans.len()
    }

    pub fn sentence_tokens(&self, s: usize) -> &[Token] {
        &self.tokens[self.sentence_spans[s].clone()]
    }

    pub fn sentence_words(&self, s: usize) -> Vec<String> {
        self.sentence_tokens(s)
            .iter()
            .map(|t| t.surface.clone())
            .collect()
    }

    pub fn mentions(&self) -> impl Iterator<Item = &Mention> {
        self.entities.iter().flat_map(|e| e.mentions.iter())
    }

    pub fn num_mentions(&self) -> usize {
        self.entities.iter().map(|e| e.mentions.len()).sum()
    }

    pub fn entity(&self, id: usize) -> Option<&Entity> {
        self.entities.iter().find(|e| e.entity_id == id)
    }

    /// Position of the entity with `id` in `entities`.
    pub fn entity_position(&self, id: usize) -> Option<usize> {
        self.entities.iter().position(|e| e.entity_id == id)
    }

    /// Global index of the dependency root of sentence `s`.
    pub fn root_token(&self, s: usize) -> Option<usize> {
        let local = self.dependency_parses.get(s)?.root()?;
        Some(self.sentence_spans[s].start + local)
    }

    /// All ordered pairs of distinct entity ids.
    pub fn candidate_pairs(&self) -> Vec<(usize, usize)> {
        let ids: Vec<usize> = self.entities.iter().map(|e| e.entity_id).collect();
        let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1));
        for &s in &ids {
            for &o in &ids {
                if s != o {
                    out.push((s, o));
                }
            }
        }
        out
    }

    /// Surface strings of an entity's mentions.
    pub fn mention_names(&self, entity_id: usize) -> BTreeSet<String> {
        self.entity(entity_id)
            .map(|e| {
                e.mentions
                    .iter()
                    .map(|m| {
                        self.tokens[m.tokens()]
                            .iter()
                            .map(|t| t.surface.as_str())
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// True when some sentence holds mentions of both entities.
    pub fn co_occur(&self, a: usize, b: usize) -> bool {
        let sents = |id| -> BTreeSet<usize> {
            self.entity(id)
                .map(|e| e.mentions.iter().map(|m| m.sentence_index).collect())
                .unwrap_or_default()
        };
        !sents(a).is_disjoint(&sents(b))
    }
}

/// Relation names indexed `0..C`; the NA pseudo-class is index `C`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    names: Vec<String>,
}

pub const NA_LABEL: &str = "NA";

impl LabelSchema {
    pub fn new(names: Vec<String>) -> Result<Self, super::CorpusError> {
        let mut seen = BTreeSet::new();
        for n in &names {
            if n == NA_LABEL {
                return Err(super::CorpusError::Schema(format!(
                    "{NA_LABEL} is reserved for the no-relation class"
                )));
            }
            if n.is_empty() || !seen.insert(n) {
                return Err(super::CorpusError::Schema(format!(
                    "relation name {n:?} is empty or duplicated"
                )));
            }
        }
        if names.is_empty() {
            return Err(super::CorpusError::Schema("no relation classes".into()));
        }
        Ok(LabelSchema { names })
    }

    /// One relation name per non-empty, non-comment line.
    pub fn parse(text: &str) -> Result<Self, super::CorpusError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    /// Number of relation classes, excluding NA.
    pub fn num_relations(&self) -> usize {
        self.names.len()
    }

    pub fn na_index(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, idx: usize) -> &str {
        self.names.get(idx).map_or(NA_LABEL, String::as_str)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }
}
