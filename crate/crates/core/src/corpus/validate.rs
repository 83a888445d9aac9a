use std::collections::BTreeSet;
use std::fmt;

use super::conllu::find_cycle;
use super::{AnnotatedDocument, ConstituencyNode, LabelSchema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    EmptyToken,
    TokenIndex,
    SentenceSpan,
    DuplicateEntity,
    EntityWithoutMentions,
    MentionEntity,
    MentionSpan,
    MentionCrossesSentence,
    FactSelfLoop,
    FactUnknownEntity,
    FactRelation,
    FactEvidence,
    DuplicateFact,
    MissingDependencyParse,
    DependencyLength,
    DependencyForm,
    HeadOutOfRange,
    NoRoot,
    MultipleRoots,
    DependencyCycle,
    MissingConstituencyTree,
    LeafTokenInvariant,
    LeafMisalignment,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        use ViolationKind::*;
        match self {
            EmptyToken => "empty token",
            TokenIndex => "token index",
            SentenceSpan => "sentence span",
            DuplicateEntity => "duplicate entity",
            EntityWithoutMentions => "entity without mentions",
            MentionEntity => "mention entity",
            MentionSpan => "mention span",
            MentionCrossesSentence => "mention crosses sentence",
            FactSelfLoop => "fact self loop",
            FactUnknownEntity => "fact unknown entity",
            FactRelation => "fact relation",
            FactEvidence => "fact evidence",
            DuplicateFact => "duplicate fact",
            MissingDependencyParse => "missing dependency parse",
            DependencyLength => "dependency length",
            DependencyForm => "dependency form",
            HeadOutOfRange => "head out of range",
            NoRoot => "no root",
            MultipleRoots => "multiple roots",
            DependencyCycle => "dependency cycle",
            MissingConstituencyTree => "missing constituency tree",
            LeafTokenInvariant => "leaf token invariant",
            LeafMisalignment => "leaf/token misalignment",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn push(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.0.push(Violation {
            kind,
            detail: detail.into(),
        });
    }
}

/// Lists every broken invariant of `doc`, in document order. Relation labels
/// are not range-checked here; see [`validate_against`].
pub fn validate_document(doc: &AnnotatedDocument) -> Vec<Violation> {
    use ViolationKind::*;
    let mut r = Report(Vec::new());

    let mut expected_start = 0;
    for (s, span) in doc.sentence_spans.iter().enumerate() {
        if span.start != expected_start || span.end < span.start || span.end > doc.tokens.len() {
            r.push(SentenceSpan, format!("sentence {s} spans {span:?}"));
        }
        expected_start = span.end;
    }
    if expected_start != doc.tokens.len() {
        r.push(SentenceSpan, "sentences do not cover every token");
    }
    for (i, t) in doc.tokens.iter().enumerate() {
        if t.surface.is_empty() {
            r.push(EmptyToken, format!("token {i}"));
        }
        let in_span = doc
            .sentence_spans
            .get(t.sentence_index)
            .is_some_and(|sp| sp.start + t.position_in_sentence == i && sp.contains(&i));
        if t.global_index != i || !in_span {
            r.push(
                TokenIndex,
                format!("token {i} ({:?}) has inconsistent indices", t.surface),
            );
        }
    }

    let mut ids = BTreeSet::new();
    for (e_pos, e) in doc.entities.iter().enumerate() {
        if !ids.insert(e.entity_id) {
            r.push(DuplicateEntity, format!("entity id {}", e.entity_id));
        }
        if e.mentions.is_empty() {
            r.push(EntityWithoutMentions, format!("entity {}", e.entity_id));
        }
        for (m_pos, m) in e.mentions.iter().enumerate() {
            let name = format!("entity {} (#{e_pos}) mention {m_pos}", e.entity_id);
            if m.entity_id != e.entity_id {
                r.push(
                    MentionEntity,
                    format!("{name} refers to entity {}", m.entity_id),
                );
            }
            if m.start >= m.end || m.end > doc.tokens.len() {
                r.push(
                    MentionSpan,
                    format!("{name} has span [{}, {})", m.start, m.end),
                );
                continue;
            }
            match doc.sentence_spans.get(m.sentence_index) {
                Some(sp) if sp.start <= m.start && m.end <= sp.end => {}
                _ => r.push(
                    MentionCrossesSentence,
                    format!(
                        "{name} span [{}, {}) is not inside sentence {}",
                        m.start, m.end, m.sentence_index
                    ),
                ),
            }
        }
    }

    let mut seen_facts = BTreeSet::new();
    for (i, f) in doc.facts.iter().enumerate() {
        if f.subject == f.object {
            r.push(
                FactSelfLoop,
                format!("fact {i} relates entity {} to itself", f.subject),
            );
        }
        for id in [f.subject, f.object] {
            if !ids.contains(&id) {
                r.push(
                    FactUnknownEntity,
                    format!("fact {i} names unknown entity {id}"),
                );
            }
        }
        for &ev in &f.evidence {
            if ev >= doc.num_sentences() {
                r.push(FactEvidence, format!("fact {i} cites sentence {ev}"));
            }
        }
        if !seen_facts.insert((f.subject, f.object, f.relation)) {
            r.push(DuplicateFact, format!("fact {i}"));
        }
    }

    let n_sent = doc.num_sentences();
    if doc.dependency_parses.len() != n_sent {
        r.push(
            MissingDependencyParse,
            format!(
                "{} parses for {n_sent} sentences",
                doc.dependency_parses.len()
            ),
        );
    }
    for (s, p) in doc.dependency_parses.iter().enumerate().take(n_sent) {
        let words = doc.sentence_tokens(s);
        if p.heads.len() != words.len() || p.relations.len() != words.len() {
            r.push(
                DependencyLength,
                format!(
                    "sentence {s}: {} heads for {} tokens",
                    p.heads.len(),
                    words.len()
                ),
            );
            continue;
        }
        if !p.forms.is_empty() {
            for (k, (form, tok)) in p.forms.iter().zip(words).enumerate() {
                if form != &tok.surface {
                    r.push(
                        DependencyForm,
                        format!("sentence {s} token {k}: {form:?} vs {:?}", tok.surface),
                    );
                }
            }
        }
        if let Some(k) = p.heads.iter().position(|&h| h > words.len()) {
            r.push(
                HeadOutOfRange,
                format!("sentence {s} token {k} head {}", p.heads[k]),
            );
            continue;
        }
        match p.roots().len() {
            0 => r.push(NoRoot, format!("sentence {s}")),
            1 => {}
            n => r.push(MultipleRoots, format!("sentence {s} has {n} roots")),
        }
        if let Some(k) = find_cycle(&p.heads) {
            r.push(DependencyCycle, format!("sentence {s} through token {k}"));
        }
    }

    if doc.constituency_trees.len() != n_sent {
        r.push(
            MissingConstituencyTree,
            format!(
                "{} trees for {n_sent} sentences",
                doc.constituency_trees.len()
            ),
        );
    }
    for (s, tree) in doc.constituency_trees.iter().enumerate().take(n_sent) {
        if !leaf_invariant(tree) {
            r.push(LeafTokenInvariant, format!("sentence {s}"));
        }
        let leaves = tree.leaves();
        let span = doc.sentence_spans[s].clone();
        let aligned = leaves.len() == span.len()
            && leaves
                .iter()
                .zip(span)
                .all(|(l, g)| l.leaf_token == Some(g) && l.label == doc.tokens[g].surface);
        if !aligned {
            r.push(LeafMisalignment, format!("sentence {s}"));
        }
    }
    r.0
}

/// [`validate_document`] plus relation-label range checks.
pub fn validate_against(doc: &AnnotatedDocument, schema: &LabelSchema) -> Vec<Violation> {
    let mut v = validate_document(doc);
    for (i, f) in doc.facts.iter().enumerate() {
        if f.relation >= schema.num_relations() {
            v.push(Violation {
                kind: ViolationKind::FactRelation,
                detail: format!(
                    "fact {i} has relation {} of {}",
                    f.relation,
                    schema.num_relations()
                ),
            });
        }
    }
    v
}

fn leaf_invariant(n: &ConstituencyNode) -> bool {
    if n.children.is_empty() {
        n.leaf_token.is_some()
    } else {
        n.leaf_token.is_none() && n.children.iter().all(leaf_invariant)
    }
}
