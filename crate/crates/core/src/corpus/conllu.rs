//! CoNLL-U reader and writer for dependency parses.
//!
//! Only basic word lines are accepted; multiword-token ranges (`1-2`) and
//! empty nodes (`1.1`) are rejected because token alignment with the corpus
//! would otherwise be ambiguous.

use std::fmt::Write as _;

use super::{CorpusError, DependencyParse};

/// One `# newdoc` section of a CoNLL-U file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluDocument {
    pub doc_id: Option<String>,
    pub sentences: Vec<DependencyParse>,
}

struct PendingSentence {
    ordinal: usize,
    first_line: usize,
    rows: Vec<(usize, usize, String, String)>, // (line, head, deprel, form)
}

/// Parses every sentence block, ignoring document boundaries.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencyParse>, CorpusError> {
    Ok(parse_conllu_documents(text)?
        .into_iter()
        .flat_map(|d| d.sentences)
        .collect())
}

/// Parses sentence blocks grouped by `# newdoc id = ...` comments.
pub fn parse_conllu_documents(text: &str) -> Result<Vec<ConlluDocument>, CorpusError> {
    let mut docs: Vec<ConlluDocument> = Vec::new();
    let mut pending: Option<PendingSentence> = None;
    let mut ordinal = 0;

    let flush = |pending: &mut Option<PendingSentence>,
                 docs: &mut Vec<ConlluDocument>|
     -> Result<(), CorpusError> {
        if let Some(p) = pending.take() {
            let parse = finish_sentence(p)?;
            if docs.is_empty() {
                docs.push(ConlluDocument {
                    doc_id: None,
                    sentences: Vec::new(),
                });
            }
            docs.last_mut().expect("non-empty").sentences.push(parse);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut pending, &mut docs)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = newdoc_id(comment) {
                flush(&mut pending, &mut docs)?;
                docs.push(ConlluDocument {
                    doc_id: Some(id),
                    sentences: Vec::new(),
                });
            }
            continue;
        }
        let p = pending.get_or_insert_with(|| {
            ordinal += 1;
            PendingSentence {
                ordinal,
                first_line: line_no,
                rows: Vec::new(),
            }
        });
        let err = |message: String| CorpusError::Conllu {
            sentence: p.ordinal,
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(format!(
                "expected 10 tab-separated columns, got {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') {
            return Err(err(format!("multiword token line {id:?} is not supported")));
        }
        if id.contains('.') {
            return Err(err(format!("empty node line {id:?} is not supported")));
        }
        let id: usize = id
            .parse()
            .map_err(|_| err(format!("non-integer token id {id:?}")))?;
        if id != p.rows.len() + 1 {
            return Err(err(format!("token id {id} out of sequence")));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(format!("non-integer head {:?}", cols[6])))?;
        p.rows
            .push((line_no, head, cols[7].to_string(), cols[1].to_string()));
    }
    flush(&mut pending, &mut docs)?;
    Ok(docs)
}

fn newdoc_id(comment: &str) -> Option<String> {
    let rest = comment.trim().strip_prefix("newdoc")?;
    let rest = rest.trim_start();
    let id = rest.strip_prefix("id").map(str::trim_start)?;
    let id = id.strip_prefix('=').map(str::trim)?;
    Some(id.to_string())
}

fn finish_sentence(p: PendingSentence) -> Result<DependencyParse, CorpusError> {
    let n = p.rows.len();
    let mut parse = DependencyParse::default();
    for (line, head, rel, form) in &p.rows {
        if *head > n {
            return Err(CorpusError::Conllu {
                sentence: p.ordinal,
                line: *line,
                message: format!("head {head} out of range for {n} tokens"),
            });
        }
        parse.heads.push(*head);
        parse.relations.push(rel.clone());
        parse.forms.push(form.clone());
    }
    if let Some(tok) = find_cycle(&parse.heads) {
        return Err(CorpusError::Conllu {
            sentence: p.ordinal,
            line: p.rows[tok].0,
            message: format!("cycle through token {}", tok + 1),
        });
    }
    let roots = parse.roots();
    if roots.len() != 1 {
        return Err(CorpusError::Conllu {
            sentence: p.ordinal,
            line: p.first_line,
            message: format!("expected exactly one root, found {}", roots.len()),
        });
    }
    Ok(parse)
}

/// First token (0-based) whose head chain never reaches the root.
pub(crate) fn find_cycle(heads: &[usize]) -> Option<usize> {
    // 0 = unvisited, 1 = on current chain, 2 = reaches root
    let mut state = vec![0u8; heads.len()];
    for start in 0..heads.len() {
        let mut chain = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => return Some(start),
                _ => {}
            }
            state[cur] = 1;
            chain.push(cur);
            let h = heads[cur];
            if h == 0 || h > heads.len() {
                break;
            }
            cur = h - 1;
        }
        for c in chain {
            state[c] = 2;
        }
    }
    None
}

/// Renders one document section; unused columns are `_`.
pub fn write_conllu_document(doc_id: &str, parses: &[DependencyParse]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# newdoc id = {doc_id}");
    for parse in parses {
        for i in 0..parse.len() {
            let form = parse.forms.get(i).map_or("_", String::as_str);
            let _ = writeln!(
                out,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                form,
                parse.heads[i],
                parse.relations[i]
            );
        }
        out.push('\n');
    }
    out
}
