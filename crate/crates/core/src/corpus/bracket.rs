//! Penn-Treebank style bracketed trees.

use super::types::unescape_word;
use super::{ConstituencyNode, CorpusError, Token};

#[derive(Debug, PartialEq)]
enum Lexeme<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str, usize),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Lexeme::Open(i));
                i += 1;
            }
            b')' => {
                out.push(Lexeme::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !matches!(bytes[i], b'(' | b')')
                    && !bytes[i].is_ascii_whitespace()
                {
                    i += 1;
                }
                out.push(Lexeme::Atom(&text[start..i], start));
            }
        }
    }
    out
}

fn err(position: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Bracket {
        position,
        message: message.into(),
    }
}

/// Parses one bracketed tree; leaf words are kept as labels with no token
/// index assigned.
pub fn parse_bracketed(text: &str) -> Result<ConstituencyNode, CorpusError> {
    let lexemes = lex(text);
    let mut pos = 0;
    let tree = parse_node(&lexemes, &mut pos, text.len())?;
    if let Some(extra) = lexemes.get(pos) {
        let at = match extra {
            Lexeme::Open(p) | Lexeme::Close(p) | Lexeme::Atom(_, p) => *p,
        };
        return Err(err(at, "trailing input after the tree"));
    }
    Ok(tree)
}

fn parse_node(
    lex: &[Lexeme<'_>],
    pos: &mut usize,
    end: usize,
) -> Result<ConstituencyNode, CorpusError> {
    let open_at = match lex.get(*pos) {
        Some(Lexeme::Open(p)) => *p,
        Some(Lexeme::Close(p)) => return Err(err(*p, "unbalanced ')'")),
        Some(Lexeme::Atom(_, p)) => return Err(err(*p, "expected '('")),
        None => return Err(err(end, "empty input")),
    };
    *pos += 1;
    let label = match lex.get(*pos) {
        Some(Lexeme::Atom(a, _)) => {
            *pos += 1;
            a.to_string()
        }
        _ => String::new(),
    };
    let mut children = Vec::new();
    loop {
        match lex.get(*pos) {
            Some(Lexeme::Close(_)) => {
                *pos += 1;
                break;
            }
            Some(Lexeme::Open(_)) => children.push(parse_node(lex, pos, end)?),
            Some(Lexeme::Atom(a, _)) => {
                children.push(ConstituencyNode {
                    label: unescape_word(a).to_string(),
                    children: Vec::new(),
                    leaf_token: None,
                });
                *pos += 1;
            }
            None => return Err(err(open_at, "unbalanced brackets: '(' never closed")),
        }
    }
    if children.is_empty() {
        return Err(err(open_at, format!("empty node {label:?}")));
    }
    Ok(ConstituencyNode {
        label,
        children,
        leaf_token: None,
    })
}

/// Parses a tree and binds its leaves, left to right, to `tokens`.
pub fn parse_bracketed_tree(text: &str, tokens: &[Token]) -> Result<ConstituencyNode, CorpusError> {
    let mut tree = parse_bracketed(text)?;
    let leaves = tree.leaves().len();
    if leaves != tokens.len() {
        return Err(CorpusError::LeafCount {
            leaves,
            tokens: tokens.len(),
        });
    }
    let mut next = 0;
    bind_leaves(&mut tree, tokens, &mut next)?;
    Ok(tree)
}

fn bind_leaves(
    node: &mut ConstituencyNode,
    tokens: &[Token],
    next: &mut usize,
) -> Result<(), CorpusError> {
    if node.children.is_empty() {
        let tok = &tokens[*next];
        if node.label != tok.surface {
            return Err(CorpusError::LeafMismatch {
                position: *next,
                leaf: node.label.clone(),
                token: tok.surface.clone(),
            });
        }
        node.leaf_token = Some(tok.global_index);
        *next += 1;
        return Ok(());
    }
    for c in &mut node.children {
        bind_leaves(c, tokens, next)?;
    }
    Ok(())
}

/// One `# newdoc` block of a tree file: raw tree lines with 1-based line numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeBlock {
    pub doc_id: Option<String>,
    pub trees: Vec<(usize, String)>,
}

/// Splits a tree file into per-document blocks. A block starts at a
/// `# newdoc id = ...` comment or after a blank line; each other line is one tree.
pub fn split_tree_file(text: &str) -> Vec<TreeBlock> {
    let mut blocks: Vec<TreeBlock> = Vec::new();
    let mut open = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            open = false;
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(id) = c
                .trim()
                .strip_prefix("newdoc")
                .and_then(|r| r.trim_start().strip_prefix("id"))
                .and_then(|r| r.trim_start().strip_prefix('='))
            {
                blocks.push(TreeBlock {
                    doc_id: Some(id.trim().to_string()),
                    trees: Vec::new(),
                });
                open = true;
            }
            continue;
        }
        if !open {
            blocks.push(TreeBlock {
                doc_id: None,
                trees: Vec::new(),
            });
            open = true;
        }
        blocks
            .last_mut()
            .expect("opened above")
            .trees
            .push((i + 1, line.to_string()));
    }
    blocks
}

pub fn write_tree_block(doc_id: &str, trees: &[ConstituencyNode]) -> String {
    let mut out = format!("# newdoc id = {doc_id}\n");
    for t in trees {
        out.push_str(&t.to_bracketed());
        out.push('\n');
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedDocument;

    fn tokens(words: &[&str]) -> Vec<Token> {
        AnnotatedDocument::from_sentences("d", &[words.iter().map(|w| w.to_string()).collect()])
            .tokens
    }

    #[test]
    fn single_chain() {
        let t = parse_bracketed_tree("(ROOT (NP (NN dog)))", &tokens(&["dog"])).unwrap();
        assert_eq!(t.label, "ROOT");
        assert_eq!(t.children.len(), 1);
        let np = &t.children[0];
        assert_eq!(np.label, "NP");
        let nn = &np.children[0];
        assert_eq!(nn.label, "NN");
        assert_eq!(nn.children[0], ConstituencyNode::leaf("dog", 0));
    }

    #[test]
    fn unbalanced() {
        assert!(matches!(
            parse_bracketed_tree("(ROOT (NP (NN dog)", &tokens(&["dog"])),
            Err(CorpusError::Bracket { .. })
        ));
        assert!(matches!(
            parse_bracketed("(A b))"),
            Err(CorpusError::Bracket { .. })
        ));
    }

    #[test]
    fn empty_node() {
        assert!(matches!(
            parse_bracketed("(ROOT (NP))"),
            Err(CorpusError::Bracket { .. })
        ));
        assert!(matches!(
            parse_bracketed("()"),
            Err(CorpusError::Bracket { .. })
        ));
    }

    #[test]
    fn leaf_count_mismatch() {
        let r = parse_bracketed_tree("(S (A a) (B b) (C c))", &tokens(&["a", "b"]));
        assert!(matches!(
            r,
            Err(CorpusError::LeafCount {
                leaves: 3,
                tokens: 2
            })
        ));
    }

    #[test]
    fn leaf_surface_mismatch() {
        let r = parse_bracketed_tree("(S (A a) (B x))", &tokens(&["a", "b"]));
        assert!(matches!(
            r,
            Err(CorpusError::LeafMismatch { position: 1, .. })
        ));
    }

    #[test]
    fn parentheses_are_escaped() {
        let toks = tokens(&["(", "x", ")"]);
        let t = parse_bracketed_tree("(S (-LRB- -LRB-) (NN x) (-RRB- -RRB-))", &toks).unwrap();
        assert_eq!(t.leaves()[0].label, "(");
        let again = parse_bracketed_tree(&t.to_bracketed(), &toks).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn tree_file_blocks() {
        let text = "# newdoc id = a\n(S (X x))\n(S (Y y))\n\n# newdoc id = b\n(S (Z z))\n";
        let blocks = split_tree_file(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].trees.len(), 2);
        assert_eq!(blocks[1].doc_id.as_deref(), Some("b"));
        assert_eq!(blocks[1].trees[0].0, 6);
    }
}
