//! Line-delimited corpus records plus sibling parse files.
//!
//! A split `NAME` lives in three files next to each other:
//! `NAME.jsonl` (one document record per line), `NAME.conllu` (dependency
//! parses) and `NAME.trees` (one bracketed constituency tree per sentence).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bracket::{parse_bracketed_tree, split_tree_file, write_tree_block};
use super::conllu::{parse_conllu_documents, write_conllu_document};
use super::validate::validate_against;
use super::{AnnotatedDocument, CorpusError, Entity, LabelSchema, Mention, RelationFact};
use crate::util::write_atomic;

pub const SCHEMA_FILE: &str = "relations.txt";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    doc_id: String,
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    entities: Vec<EntityRecord>,
    #[serde(default)]
    labels: Vec<LabelRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    id: usize,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    type_label: Option<String>,
    mentions: Vec<MentionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MentionRecord {
    sent: usize,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

/// Paths of the three files making up one split.
#[derive(Clone, Debug)]
pub struct SplitFiles {
    pub records: PathBuf,
    pub dependencies: PathBuf,
    pub trees: PathBuf,
}

impl SplitFiles {
    /// Files for a record path `X.jsonl`: `X.conllu` and `X.trees`.
    pub fn for_records(path: &Path) -> Self {
        SplitFiles {
            records: path.to_path_buf(),
            dependencies: path.with_extension("conllu"),
            trees: path.with_extension("trees"),
        }
    }

    pub fn in_dir(dir: &Path, split: &str) -> Self {
        Self::for_records(&dir.join(format!("{split}.jsonl")))
    }
}

pub fn load_schema(dir: &Path) -> Result<LabelSchema, CorpusError> {
    let path = dir.join(SCHEMA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
    LabelSchema::parse(&text)
}

/// Reads `path` (a `.jsonl` record file) and its sibling parse files.
pub fn load_corpus(
    path: &Path,
    schema: &LabelSchema,
) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let files = SplitFiles::for_records(path);
    let text =
        fs::read_to_string(&files.records).map_err(|e| CorpusError::io(&files.records, e))?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_record(line, i + 1, schema)?);
    }

    let dep_text = read_parse_file(&files.dependencies, &docs)?;
    let mut deps: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for d in parse_conllu_documents(&dep_text)? {
        let id = d.doc_id.ok_or_else(|| CorpusError::Record {
            doc_id: None,
            line: 0,
            field: "conllu".into(),
            message: format!(
                "{} has sentences before any `# newdoc id`",
                files.dependencies.display()
            ),
        })?;
        deps.insert(id, d.sentences);
    }
    let tree_text = read_parse_file(&files.trees, &docs)?;
    let mut trees: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for b in split_tree_file(&tree_text) {
        let id = b.doc_id.ok_or_else(|| CorpusError::Record {
            doc_id: None,
            line: b.trees.first().map_or(0, |t| t.0),
            field: "trees".into(),
            message: format!(
                "{} has a tree block without `# newdoc id`",
                files.trees.display()
            ),
        })?;
        trees.entry(id).or_default().extend(b.trees);
    }

    for doc in &mut docs {
        let n = doc.num_sentences();
        let parses = deps.remove(&doc.doc_id).unwrap_or_default();
        if parses.len() < n {
            return Err(CorpusError::MissingParse {
                doc_id: doc.doc_id.clone(),
                sentence: parses.len(),
                kind: "dependency",
            });
        }
        if parses.len() > n {
            return Err(CorpusError::ExtraParse {
                doc_id: doc.doc_id.clone(),
                kind: "dependency",
                found: parses.len(),
                sentences: n,
            });
        }
        doc.dependency_parses = parses;

        let lines = trees.remove(&doc.doc_id).unwrap_or_default();
        if lines.len() < n {
            return Err(CorpusError::MissingParse {
                doc_id: doc.doc_id.clone(),
                sentence: lines.len(),
                kind: "constituency",
            });
        }
        if lines.len() > n {
            return Err(CorpusError::ExtraParse {
                doc_id: doc.doc_id.clone(),
                kind: "constituency",
                found: lines.len(),
                sentences: n,
            });
        }
        for (s, (line, tree)) in lines.into_iter().enumerate() {
            let tree = parse_bracketed_tree(&tree, doc.sentence_tokens(s)).map_err(|e| {
                CorpusError::Tree {
                    doc_id: doc.doc_id.clone(),
                    sentence: s,
                    line,
                    source: Box::new(e),
                }
            })?;
            doc.constituency_trees.push(tree);
        }

        let violations = validate_against(doc, schema);
        if !violations.is_empty() {
            return Err(CorpusError::Validation {
                doc_id: doc.doc_id.clone(),
                violations,
            });
        }
    }
    Ok(docs)
}

fn read_parse_file(path: &Path, docs: &[AnnotatedDocument]) -> Result<String, CorpusError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => match docs.first() {
            Some(d) => Err(CorpusError::MissingParseFile {
                path: path.to_path_buf(),
                doc_id: d.doc_id.clone(),
                sentence: 0,
            }),
            None => Ok(String::new()),
        },
        Err(e) => Err(CorpusError::io(path, e)),
    }
}

fn parse_record(
    line: &str,
    line_no: usize,
    schema: &LabelSchema,
) -> Result<AnnotatedDocument, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CorpusError::Record {
        doc_id: None,
        line: line_no,
        field: "<json>".into(),
        message: e.to_string(),
    })?;
    let doc_id = value
        .get("doc_id")
        .and_then(|v| v.as_str())
        .map(String::from);
    let rec: DocRecord = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        CorpusError::Record {
            doc_id: doc_id.clone(),
            line: line_no,
            field: field_from_serde(&msg),
            message: msg,
        }
    })?;
    let err = |field: String, message: String| CorpusError::Record {
        doc_id: Some(rec.doc_id.clone()),
        line: line_no,
        field,
        message,
    };

    let mut doc = AnnotatedDocument::from_sentences(rec.doc_id.clone(), &rec.sentences);
    let mut seen = BTreeSet::new();
    for (ei, e) in rec.entities.iter().enumerate() {
        if !seen.insert(e.id) {
            return Err(err(
                format!("entities[{ei}].id"),
                format!("duplicate entity id {}", e.id),
            ));
        }
        if e.mentions.is_empty() {
            return Err(err(
                format!("entities[{ei}].mentions"),
                "entity has no mentions".into(),
            ));
        }
        let mut mentions = Vec::with_capacity(e.mentions.len());
        for (mi, m) in e.mentions.iter().enumerate() {
            let field = format!("entities[{ei}].mentions[{mi}]");
            let Some(span) = doc.sentence_spans.get(m.sent).cloned() else {
                return Err(err(field, format!("sentence {} does not exist", m.sent)));
            };
            if m.start >= m.end {
                return Err(err(field, format!("empty span [{}, {})", m.start, m.end)));
            }
            if m.end > span.len() {
                return Err(err(
                    field,
                    format!(
                        "mention span [{}, {}) crosses the end of sentence {} ({} tokens)",
                        m.start,
                        m.end,
                        m.sent,
                        span.len()
                    ),
                ));
            }
            mentions.push(Mention {
                entity_id: e.id,
                sentence_index: m.sent,
                start: span.start + m.start,
                end: span.start + m.end,
            });
        }
        doc.entities.push(Entity {
            entity_id: e.id,
            mentions,
            type_label: e.type_label.clone(),
        });
    }
    for (li, l) in rec.labels.iter().enumerate() {
        let field = format!("labels[{li}]");
        let relation = schema
            .index(&l.r)
            .ok_or_else(|| err(format!("{field}.r"), format!("unknown relation {:?}", l.r)))?;
        for id in [l.h, l.t] {
            if !seen.contains(&id) {
                return Err(err(field.clone(), format!("unknown entity {id}")));
            }
        }
        if l.h == l.t {
            return Err(err(field, "subject and object are the same entity".into()));
        }
        doc.facts.push(RelationFact {
            subject: l.h,
            object: l.t,
            relation,
            evidence: l.evidence.iter().copied().collect(),
        });
    }
    if let Some(t) = doc.tokens.iter().find(|t| t.surface.is_empty()) {
        return Err(err(
            format!(
                "sentences[{}][{}]",
                t.sentence_index, t.position_in_sentence
            ),
            "empty token".into(),
        ));
    }
    Ok(doc)
}

fn field_from_serde(msg: &str) -> String {
    // serde messages quote the offending field in backticks
    msg.split('`').nth(1).unwrap_or("<record>").to_string()
}

fn to_record(doc: &AnnotatedDocument, schema: &LabelSchema) -> DocRecord {
    DocRecord {
        doc_id: doc.doc_id.clone(),
        sentences: (0..doc.num_sentences())
            .map(|s| doc.sentence_words(s))
            .collect(),
        entities: doc
            .entities
            .iter()
            .map(|e| EntityRecord {
                id: e.entity_id,
                type_label: e.type_label.clone(),
                mentions: e
                    .mentions
                    .iter()
                    .map(|m| {
                        let base = doc.sentence_spans[m.sentence_index].start;
                        MentionRecord {
                            sent: m.sentence_index,
                            start: m.start - base,
                            end: m.end - base,
                        }
                    })
                    .collect(),
            })
            .collect(),
        labels: doc
            .facts
            .iter()
            .map(|f| LabelRecord {
                h: f.subject,
                t: f.object,
                r: schema.name(f.relation).to_string(),
                evidence: f.evidence.iter().copied().collect(),
            })
            .collect(),
    }
}

/// Serialises documents into the three canonical texts
/// (records, CoNLL-U, trees).
pub fn render_corpus(docs: &[AnnotatedDocument], schema: &LabelSchema) -> (String, String, String) {
    let mut records = String::new();
    let mut conllu = String::new();
    let mut trees = String::new();
    for d in docs {
        records.push_str(&serde_json::to_string(&to_record(d, schema)).expect("record serialises"));
        records.push('\n');
        conllu.push_str(&write_conllu_document(&d.doc_id, &d.dependency_parses));
        trees.push_str(&write_tree_block(&d.doc_id, &d.constituency_trees));
    }
    (records, conllu, trees)
}

/// Writes split `name` into `dir`, plus `relations.txt`.
pub fn write_corpus(
    dir: &Path,
    name: &str,
    docs: &[AnnotatedDocument],
    schema: &LabelSchema,
) -> Result<SplitFiles, CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let files = SplitFiles::in_dir(dir, name);
    let (records, conllu, trees) = render_corpus(docs, schema);
    for (path, text) in [
        (&files.records, records),
        (&files.dependencies, conllu),
        (&files.trees, trees),
        (&dir.join(SCHEMA_FILE), schema.to_text()),
    ] {
        write_atomic(path, text.as_bytes()).map_err(|e| CorpusError::io(path, e))?;
    }
    Ok(files)
}
