//! Generated corpora whose relations are readable off the dependency path.
//!
//! Each relation sentence has the shape `SUBJ VERB OBJ .`; the verb fixes the
//! relation and the direction matters, so the reverse pair and any pair that
//! never shares a relation sentence are NA. Neutral verbs, filler sentences and
//! re-mention sentences supply negatives and cross-sentence structure.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    AnnotatedDocument, ConstituencyNode, DependencyParse, Entity, LabelSchema, Mention,
    RelationFact,
};

const RELATION_VERBS: [&str; 6] = [
    "founded", "acquired", "supplies", "visited", "sued", "hired",
];
const NEUTRAL_VERBS: [&str; 2] = ["met", "praised"];
const NAMES: [&str; 20] = [
    "Alpha", "Bravo", "Delta", "Echo", "Foxtrot", "Golf", "Hotel", "India", "Juliet", "Kilo",
    "Lima", "Mike", "Oscar", "Papa", "Quebec", "Romeo", "Sierra", "Tango", "Victor", "Zulu",
];
const FILLERS: [(&str, &str); 4] = [
    ("market", "quiet"),
    ("weather", "calm"),
    ("report", "late"),
    ("room", "busy"),
];

pub const MAX_RELATIONS: usize = RELATION_VERBS.len();
pub const MAX_ENTITIES: usize = NAMES.len();

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub relations: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 20,
            relations: 4,
            min_sentences: 3,
            max_sentences: 6,
            min_entities: 3,
            max_entities: 5,
            seed: 0,
        }
    }
}

pub fn schema(relations: usize) -> LabelSchema {
    LabelSchema::new(
        RELATION_VERBS[..relations.clamp(1, RELATION_VERBS.len())]
            .iter()
            .map(|v| v.to_string())
            .collect(),
    )
    .expect("verbs are distinct")
}

enum Sentence {
    /// (subject, verb, object); verbs below `relations` carry a label.
    Clause(usize, usize, usize),
    Arrival(usize),
    Filler(usize),
}

/// Deterministic corpus for `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> (Vec<AnnotatedDocument>, LabelSchema) {
    let schema = schema(spec.relations);
    let c = schema.num_relations();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let docs = (0..spec.documents)
        .map(|i| generate_document(&mut rng, spec, c, format!("syn{i:04}")))
        .collect();
    (docs, schema)
}

fn generate_document(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    c: usize,
    doc_id: String,
) -> AnnotatedDocument {
    let n_ent = rng.gen_range(spec.min_entities..=spec.max_entities.max(spec.min_entities));
    let n_sent = rng.gen_range(spec.min_sentences..=spec.max_sentences.max(spec.min_sentences));
    let mut pool: Vec<usize> = (0..NAMES.len()).collect();
    pool.shuffle(rng);
    let names: Vec<Vec<String>> = pool[..n_ent]
        .iter()
        .map(|&k| {
            let mut n = vec![NAMES[k].to_string()];
            if rng.gen_bool(0.3) {
                n.push("Corp".into());
            }
            n
        })
        .collect();

    let mut used_pairs = BTreeSet::new();
    let mut plan = Vec::with_capacity(n_sent);
    for _ in 0..n_sent {
        let roll: f64 = rng.gen();
        if roll < 0.65 && n_ent >= 2 {
            let s = rng.gen_range(0..n_ent);
            let o = (s + rng.gen_range(1..n_ent)) % n_ent;
            if used_pairs.insert((s.min(o), s.max(o))) {
                let verb = if rng.gen_bool(0.8) {
                    rng.gen_range(0..c)
                } else {
                    RELATION_VERBS.len() + rng.gen_range(0..NEUTRAL_VERBS.len())
                };
                plan.push(Sentence::Clause(s, verb, o));
                continue;
            }
        }
        if roll < 0.85 {
            plan.push(Sentence::Arrival(rng.gen_range(0..n_ent)));
        } else {
            plan.push(Sentence::Filler(rng.gen_range(0..FILLERS.len())));
        }
    }
    let mentioned: BTreeSet<usize> = plan
        .iter()
        .flat_map(|s| match *s {
            Sentence::Clause(a, _, b) => vec![a, b],
            Sentence::Arrival(a) => vec![a],
            Sentence::Filler(_) => vec![],
        })
        .collect();
    for e in 0..n_ent {
        if !mentioned.contains(&e) {
            plan.push(Sentence::Arrival(e));
        }
    }
    build(doc_id, &names, &plan, c)
}

fn verb_word(v: usize) -> &'static str {
    if v < RELATION_VERBS.len() {
        RELATION_VERBS[v]
    } else {
        NEUTRAL_VERBS[v - RELATION_VERBS.len()]
    }
}

struct Builder {
    words: Vec<String>,
    heads: Vec<usize>,
    rels: Vec<String>,
    base: usize,
}

impl Builder {
    fn push(&mut self, w: &str, head: usize, rel: &str) -> usize {
        self.words.push(w.to_string());
        self.heads.push(head);
        self.rels.push(rel.to_string());
        self.words.len()
    }

    fn leaf(&self, pos: usize, tag: &str) -> ConstituencyNode {
        ConstituencyNode::node(
            tag,
            vec![ConstituencyNode::leaf(
                &self.words[pos - 1],
                self.base + pos - 1,
            )],
        )
    }

    /// Name tokens with the last one as head; returns the head position.
    fn name(&mut self, name: &[String], head: usize, rel: &str) -> (usize, std::ops::Range<usize>) {
        let start = self.words.len() + 1;
        let last = start + name.len() - 1;
        for (k, w) in name.iter().enumerate() {
            if start + k == last {
                self.push(w, head, rel);
            } else {
                self.push(w, last, "compound");
            }
        }
        (last, start..last + 1)
    }

    fn np(&self, span: std::ops::Range<usize>) -> ConstituencyNode {
        ConstituencyNode::node("NP", span.map(|p| self.leaf(p, "NNP")).collect())
    }
}

fn build(doc_id: String, names: &[Vec<String>], plan: &[Sentence], c: usize) -> AnnotatedDocument {
    let mut sentences = Vec::new();
    let mut parses = Vec::new();
    let mut trees = Vec::new();
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); names.len()];
    let mut facts = Vec::new();
    let mut base = 0;
    for (si, s) in plan.iter().enumerate() {
        let mut b = Builder {
            words: Vec::new(),
            heads: Vec::new(),
            rels: Vec::new(),
            base,
        };
        let mut mention = |e: usize, span: &std::ops::Range<usize>| {
            mentions[e].push(Mention {
                entity_id: e,
                sentence_index: si,
                start: base + span.start - 1,
                end: base + span.end - 1,
            });
        };
        let tree = match *s {
            Sentence::Clause(subj, v, obj) => {
                // heads are patched once the verb position is known
                let (sh, ss) = b.name(&names[subj], 0, "nsubj");
                let verb = b.push(verb_word(v), 0, "root");
                b.heads[sh - 1] = verb;
                let (_, os) = b.name(&names[obj], verb, "obj");
                let dot = b.push(".", verb, "punct");
                mention(subj, &ss);
                mention(obj, &os);
                if v < c {
                    facts.push(RelationFact {
                        subject: subj,
                        object: obj,
                        relation: v,
                        evidence: [si].into(),
                    });
                }
                ConstituencyNode::node(
                    "ROOT",
                    vec![ConstituencyNode::node(
                        "S",
                        vec![
                            b.np(ss),
                            ConstituencyNode::node("VP", vec![b.leaf(verb, "VBD"), b.np(os)]),
                            b.leaf(dot, "."),
                        ],
                    )],
                )
            }
            Sentence::Arrival(e) => {
                let (sh, ss) = b.name(&names[e], 0, "nsubj");
                let verb = b.push("arrived", 0, "root");
                b.heads[sh - 1] = verb;
                let dot = b.push(".", verb, "punct");
                mention(e, &ss);
                ConstituencyNode::node(
                    "ROOT",
                    vec![ConstituencyNode::node(
                        "S",
                        vec![
                            b.np(ss),
                            ConstituencyNode::node("VP", vec![b.leaf(verb, "VBD")]),
                            b.leaf(dot, "."),
                        ],
                    )],
                )
            }
            Sentence::Filler(k) => {
                let (noun, adj) = FILLERS[k];
                b.push("The", 2, "det");
                b.push(noun, 4, "nsubj");
                b.push("was", 4, "cop");
                b.push(adj, 0, "root");
                b.push(".", 4, "punct");
                ConstituencyNode::node(
                    "ROOT",
                    vec![ConstituencyNode::node(
                        "S",
                        vec![
                            ConstituencyNode::node("NP", vec![b.leaf(1, "DT"), b.leaf(2, "NN")]),
                            ConstituencyNode::node(
                                "VP",
                                vec![
                                    b.leaf(3, "VBD"),
                                    ConstituencyNode::node("ADJP", vec![b.leaf(4, "JJ")]),
                                ],
                            ),
                            b.leaf(5, "."),
                        ],
                    )],
                )
            }
        };
        base += b.words.len();
        parses.push(DependencyParse {
            forms: b.words.clone(),
            heads: b.heads,
            relations: b.rels,
        });
        sentences.push(b.words);
        trees.push(tree);
    }
    let mut doc = AnnotatedDocument::from_sentences(doc_id, &sentences);
    doc.entities = mentions
        .into_iter()
        .enumerate()
        .map(|(e, ms)| Entity {
            entity_id: e,
            mentions: ms,
            type_label: Some("ORG".into()),
        })
        .collect();
    doc.facts = facts;
    doc.dependency_parses = parses;
    doc.constituency_trees = trees;
    doc
}

/// Unlabelled document with random dependency trees, flat constituency trees
/// and random single-sentence mentions; used to exercise graph code.
pub fn random_document<R: Rng>(
    rng: &mut R,
    doc_id: impl Into<String>,
    sentences: usize,
    entities: usize,
) -> AnnotatedDocument {
    let lengths: Vec<usize> = (0..sentences).map(|_| rng.gen_range(2..=9)).collect();
    let words: Vec<Vec<String>> = lengths
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| format!("w{}", rng.gen_range(0..30)))
                .collect()
        })
        .collect();
    let mut doc = AnnotatedDocument::from_sentences(doc_id, &words);
    for (s, w) in words.iter().enumerate() {
        let n = w.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut heads = vec![0; n];
        for k in 1..n {
            heads[order[k]] = order[rng.gen_range(0..k)] + 1;
        }
        doc.dependency_parses.push(DependencyParse {
            forms: w.clone(),
            heads,
            relations: vec!["dep".into(); n],
        });
        let base = doc.sentence_spans[s].start;
        doc.constituency_trees.push(ConstituencyNode::node(
            "S",
            w.iter()
                .enumerate()
                .map(|(i, x)| {
                    ConstituencyNode::node("X", vec![ConstituencyNode::leaf(x.as_str(), base + i)])
                })
                .collect(),
        ));
    }
    doc.entities = (0..entities)
        .map(|e| {
            let mentions = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let s = rng.gen_range(0..sentences);
                    let span = doc.sentence_spans[s].clone();
                    let start = rng.gen_range(span.clone());
                    let end = rng.gen_range(start + 1..=span.end.min(start + 3));
                    Mention {
                        entity_id: e,
                        sentence_index: s,
                        start,
                        end,
                    }
                })
                .collect();
            Entity {
                entity_id: e,
                mentions,
                type_label: None,
            }
        })
        .collect();
    doc
}
