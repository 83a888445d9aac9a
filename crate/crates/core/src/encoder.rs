//! Marker-augmented token sequences and the bidirectional LSTM encoder.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::corpus::{AnnotatedDocument, Entity, Mention};
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MARKER: usize = 2;
pub const MARKER_SYMBOL: &str = "*";

/// Token to id map. Ids 0..3 are reserved for padding, unknown and the marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Words seen at least `min_count` times, most frequent first, ties
    /// broken lexicographically.
    pub fn build<'a>(
        docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
        min_count: usize,
    ) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in docs {
            for t in &d.tokens {
                *counts.entry(t.surface.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w.to_string()).collect())
    }

    /// Corpus words in id order, starting at id 3.
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 3))
            .collect();
        Vocabulary { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Table size including the reserved ids.
    pub fn len(&self) -> usize {
        self.words.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }
}

/// One position of the augmented sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symbol {
    Marker,
    /// Global token index into the source document.
    Token(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSequence {
    pub symbols: Vec<Symbol>,
    /// Augmented position of each original token.
    pub index_map: Vec<usize>,
}

impl MarkedSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn ids(&self, doc: &AnnotatedDocument, vocab: &Vocabulary) -> Vec<usize> {
        self.symbols
            .iter()
            .map(|s| match *s {
                Symbol::Marker => MARKER,
                Symbol::Token(t) => vocab.id(&doc.tokens[t].surface),
            })
            .collect()
    }

    pub fn render(&self, doc: &AnnotatedDocument) -> Vec<String> {
        self.symbols
            .iter()
            .map(|s| match *s {
                Symbol::Marker => MARKER_SYMBOL.to_string(),
                Symbol::Token(t) => doc.tokens[t].surface.clone(),
            })
            .collect()
    }
}

/// Puts one marker immediately before and after every mention span.
pub fn insert_markers(doc: &AnnotatedDocument) -> MarkedSequence {
    let n = doc.tokens.len();
    let mut opens = vec![0usize; n];
    let mut closes = vec![0usize; n];
    for m in doc.mentions() {
        opens[m.start] += 1;
        closes[m.end - 1] += 1;
    }
    let mut symbols = Vec::with_capacity(n + 2 * doc.num_mentions());
    let mut index_map = Vec::with_capacity(n);
    for t in 0..n {
        symbols.extend(std::iter::repeat_n(Symbol::Marker, opens[t]));
        index_map.push(symbols.len());
        symbols.push(Symbol::Token(t));
        symbols.extend(std::iter::repeat_n(Symbol::Marker, closes[t]));
    }
    MarkedSequence { symbols, index_map }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// `[embedding × 4·hidden]`, gate blocks in the order i, f, g, o.
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub hidden: usize,
}

impl EncoderParams {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        vocab_size: usize,
        embedding_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let embedding =
            store.add_uniform("encoder.embedding", [vocab_size, embedding_dim], 1, rng)?;
        let mut lstm = |dir: &str| -> Result<LstmParams, TensorError> {
            Ok(LstmParams {
                w_x: store.add_uniform(
                    format!("encoder.{dir}.w_x"),
                    [embedding_dim, 4 * hidden],
                    hidden,
                    rng,
                )?,
                w_h: store.add_uniform(
                    format!("encoder.{dir}.w_h"),
                    [hidden, 4 * hidden],
                    hidden,
                    rng,
                )?,
                b: store.add_uniform(format!("encoder.{dir}.b"), [4 * hidden], hidden, rng)?,
            })
        };
        let forward = lstm("fwd")?;
        let backward = lstm("bwd")?;
        Ok(EncoderParams {
            embedding,
            forward,
            backward,
            hidden,
        })
    }
}

/// Encoder output for one document, living on the tape that produced it.
#[derive(Clone, Debug)]
pub struct EncodedDocument {
    /// `[T × 2·hidden]`, one row per augmented position.
    pub h: Var,
    pub index_map: Vec<usize>,
    pub len: usize,
    pub dim: usize,
}

impl EncodedDocument {
    /// Rows of `h` for the original tokens, in document order: `[T_orig × d]`.
    pub fn token_rows<T: Real>(&self, tape: &Tape<T>) -> Result<Var, TensorError> {
        tape.gather(self.h, &self.index_map)
    }
}

fn run_lstm<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    lstm: &LstmParams,
    x: Var,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>, TensorError> {
    let steps = tape.shape(x)[0];
    let xw = tape.add(tape.matmul(x, p[lstm.w_x])?, p[lstm.b])?;
    let mut h = tape.constant(Tensor::zeros([hidden]));
    let mut c = tape.constant(Tensor::zeros([hidden]));
    let mut out = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let gates = tape.add(tape.row(xw, t)?, tape.matmul(h, p[lstm.w_h])?)?;
        let block = |k: usize| tape.slice(gates, 0, k * hidden, (k + 1) * hidden);
        let i = tape.sigmoid(block(0)?);
        let f = tape.sigmoid(block(1)?);
        let g = tape.tanh(block(2)?);
        let o = tape.sigmoid(block(3)?);
        c = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
        h = tape.mul(o, tape.tanh(c))?;
        out[t] = h;
    }
    Ok(out)
}

/// Embeds the marker-augmented sequence and runs both LSTM directions.
pub fn encode_document<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &EncoderParams,
    doc: &AnnotatedDocument,
    vocab: &Vocabulary,
) -> Result<EncodedDocument, TensorError> {
    let seq = insert_markers(doc);
    encode_ids(tape, p, params, &seq.ids(doc, vocab), seq.index_map)
}

pub fn encode_ids<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &EncoderParams,
    ids: &[usize],
    index_map: Vec<usize>,
) -> Result<EncodedDocument, TensorError> {
    let x = tape.gather(p[params.embedding], ids)?;
    let fwd = run_lstm(tape, p, &params.forward, x, params.hidden, false)?;
    let bwd = run_lstm(tape, p, &params.backward, x, params.hidden, true)?;
    let h = tape.concat(&[tape.stack(&fwd)?, tape.stack(&bwd)?], 1)?;
    Ok(EncodedDocument {
        h,
        index_map,
        len: ids.len(),
        dim: 2 * params.hidden,
    })
}

/// Mean of the rows of the mention's own tokens; marker rows are skipped.
pub fn mention_embedding<T: Real>(
    tape: &Tape<T>,
    enc: &EncodedDocument,
    mention: &Mention,
) -> Result<Var, TensorError> {
    let rows: Vec<usize> = mention.tokens().map(|t| enc.index_map[t]).collect();
    tape.mean_axis(tape.gather(enc.h, &rows)?, 0)
}

/// Logsumexp over the entity's mention embeddings.
pub fn entity_vector<T: Real>(
    tape: &Tape<T>,
    enc: &EncodedDocument,
    entity: &Entity,
) -> Result<Var, TensorError> {
    let ms = entity
        .mentions
        .iter()
        .map(|m| mention_embedding(tape, enc, m))
        .collect::<Result<Vec<_>, _>>()?;
    tape.logsumexp(tape.stack(&ms)?, 0)
}
