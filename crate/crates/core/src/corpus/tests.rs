use std::fs;
use std::path::Path;

use super::*;

const REL: &str = "born_in\nlives_in\n";

fn schema() -> LabelSchema {
    LabelSchema::parse(REL).unwrap()
}

fn record(doc_id: &str) -> String {
    format!(
        r#"{{"doc_id":"{doc_id}","sentences":[["Louis","Chollet","was","born","in","Paris"]],"entities":[{{"id":0,"type":"PER","mentions":[{{"sent":0,"start":0,"end":2}}]}},{{"id":1,"type":"LOC","mentions":[{{"sent":0,"start":5,"end":6}}]}}],"labels":[{{"h":0,"t":1,"r":"born_in","evidence":[0]}}]}}"#
    )
}

fn conllu(doc_id: &str) -> String {
    format!(
        "# newdoc id = {doc_id}\n\
         1\tLouis\t_\t_\t_\t_\t2\tcompound\t_\t_\n\
         2\tChollet\t_\t_\t_\t_\t4\tnsubj\t_\t_\n\
         3\twas\t_\t_\t_\t_\t4\taux\t_\t_\n\
         4\tborn\t_\t_\t_\t_\t0\troot\t_\t_\n\
         5\tin\t_\t_\t_\t_\t6\tcase\t_\t_\n\
         6\tParis\t_\t_\t_\t_\t4\tobl\t_\t_\n\n"
    )
}

const TREE: &str = "(ROOT (S (NP (NNP Louis) (NNP Chollet)) (VP (VBD was) (VP (VBN born) (PP (IN in) (NP (NNP Paris)))))))";

fn trees(doc_id: &str) -> String {
    format!("# newdoc id = {doc_id}\n{TREE}\n\n")
}

fn write(dir: &Path, records: &str, deps: &str, trees: &str) -> std::path::PathBuf {
    let p = dir.join("train.jsonl");
    fs::write(&p, records).unwrap();
    fs::write(dir.join("train.conllu"), deps).unwrap();
    fs::write(dir.join("train.trees"), trees).unwrap();
    p
}

#[test]
fn minimal_corpus_loads() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        &(record("d0") + "\n"),
        &conllu("d0"),
        &trees("d0"),
    );
    let docs = load_corpus(&p, &schema()).unwrap();
    assert_eq!(docs.len(), 1);
    let d = &docs[0];
    assert_eq!(d.num_sentences(), 1);
    assert_eq!(d.entities.len(), 2);
    assert_eq!(d.facts.len(), 1);
    assert_eq!(d.root_token(0), Some(3));
    assert!(validate_document(d).is_empty());
}

#[test]
fn mention_crossing_sentence_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = record("d0").replace(r#""start":5,"end":6"#, r#""start":5,"end":8"#);
    let p = write(dir.path(), &bad, &conllu("d0"), &trees("d0"));
    match load_corpus(&p, &schema()) {
        Err(CorpusError::Record {
            doc_id,
            line,
            field,
            message,
        }) => {
            assert_eq!(doc_id.as_deref(), Some("d0"));
            assert_eq!(line, 1);
            assert_eq!(field, "entities[1].mentions[0]");
            assert!(message.contains("crosses"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_tree_for_second_document() {
    let dir = tempfile::tempdir().unwrap();
    let recs = [record("d1"), record("d2"), record("d3")].join("\n");
    let deps = conllu("d1") + &conllu("d2") + &conllu("d3");
    let tr = trees("d1") + "# newdoc id = d2\n\n" + &trees("d3");
    let p = write(dir.path(), &recs, &deps, &tr);
    match load_corpus(&p, &schema()) {
        Err(CorpusError::MissingParse {
            doc_id,
            sentence,
            kind,
        }) => {
            assert_eq!((doc_id.as_str(), sentence, kind), ("d2", 0, "constituency"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_parse_file_names_a_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), &record("d0"), &conllu("d0"), &trees("d0"));
    fs::remove_file(dir.path().join("train.conllu")).unwrap();
    let e = load_corpus(&p, &schema()).unwrap_err();
    assert!(
        matches!(e, CorpusError::MissingParseFile { sentence: 0, .. }),
        "{e}"
    );
}

#[test]
fn malformed_record_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = r#"{"doc_id":"z","entities":[]}"#;
    let p = write(dir.path(), bad, "", "");
    match load_corpus(&p, &schema()) {
        Err(CorpusError::Record { doc_id, field, .. }) => {
            assert_eq!(doc_id.as_deref(), Some("z"));
            assert_eq!(field, "sentences");
        }
        other => panic!("{other:?}"),
    }
    let unknown = record("d0").replace("born_in", "married_to");
    let p = write(dir.path(), &unknown, &conllu("d0"), &trees("d0"));
    assert!(
        matches!(load_corpus(&p, &schema()), Err(CorpusError::Record { field, .. }) if field == "labels[0].r")
    );
}

#[test]
fn zero_entity_document_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let rec = r#"{"doc_id":"e","sentences":[["Louis","Chollet","was","born","in","Paris"]]}"#;
    let p = write(dir.path(), rec, &conllu("e"), &trees("e"));
    let docs = load_corpus(&p, &schema()).unwrap();
    assert!(docs[0].candidate_pairs().is_empty());
}

fn loaded() -> AnnotatedDocument {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), &record("d0"), &conllu("d0"), &trees("d0"));
    load_corpus(&p, &schema()).unwrap().remove(0)
}

#[test]
fn multiple_roots_violation() {
    let mut d = loaded();
    d.dependency_parses[0].heads[0] = 0;
    let v = validate_document(&d);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].kind, ViolationKind::MultipleRoots);
    assert_eq!(v[0].kind.to_string(), "multiple roots");
}

#[test]
fn leaf_order_violation() {
    let mut d = loaded();
    // swap the two leaves under the first NP
    let np = &mut d.constituency_trees[0].children[0].children[0];
    np.children.swap(0, 1);
    let v = validate_document(&d);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].kind.to_string(), "leaf/token misalignment");
}

#[test]
fn validation_is_exhaustive_and_ordered() {
    let mut d = loaded();
    d.entities[1].mentions[0].end = 99;
    d.facts.push(RelationFact {
        subject: 0,
        object: 0,
        relation: 5,
        evidence: [3].into(),
    });
    let kinds: Vec<_> = validate_against(&d, &schema())
        .iter()
        .map(|v| v.kind)
        .collect();
    assert_eq!(
        kinds,
        vec![
            ViolationKind::MentionSpan,
            ViolationKind::FactSelfLoop,
            ViolationKind::FactEvidence,
            ViolationKind::FactRelation
        ]
    );
}

#[test]
fn schema_rules() {
    assert!(LabelSchema::parse("a\na\n").is_err());
    assert!(LabelSchema::parse("a\nNA\n").is_err());
    let s = schema();
    assert_eq!(s.num_relations(), 2);
    assert_eq!(s.na_index(), 2);
    assert_eq!(s.name(2), NA_LABEL);
}

#[test]
fn write_then_load_is_identity() {
    let d = loaded();
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), "dev", std::slice::from_ref(&d), &schema()).unwrap();
    let again = load_corpus(&files.records, &load_schema(dir.path()).unwrap()).unwrap();
    assert_eq!(again, vec![d]);
}
