//! The full scorer: both heads, the learnable fusion weight and the margin loss.

mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::constituency::{
    const_score, pair_attention, sentence_vectors, tree_lstm_forward, uniform_weights,
    AttentionParams, ConstScoreParams, TreeLstmParams,
};
use crate::corpus::{AnnotatedDocument, LabelSchema};
use crate::depgraph::{
    adjacency, build_graph, build_topology, gcn_forward, score_pair, DepGraphDims, DepGraphParams,
    GraphTopology,
};
use crate::encoder::{encode_document, entity_vector, EncoderParams, Vocabulary};
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

pub use checkpoint::{CheckpointError, CheckpointHeader, MAGIC};

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub tree: TreeLstmParams,
    pub attention: AttentionParams,
    pub constituency: ConstScoreParams,
    pub graph: DepGraphParams,
    pub eta: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: Config,
    pub vocab: Vocabulary,
    pub schema: LabelSchema,
    pub store: ParamStore<T>,
    pub params: ModelParams,
}

/// Scores of one ordered entity pair; `subject`/`object` are entity positions.
#[derive(Clone, Copy, Debug)]
pub struct PairScores {
    pub subject: usize,
    pub object: usize,
    pub z_const: Var,
    pub z_dep: Var,
    pub z_final: Var,
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(
        config: Config,
        vocab: Vocabulary,
        schema: LabelSchema,
    ) -> Result<Self, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let params = register(
            &mut store,
            &config,
            vocab.len(),
            schema.num_relations() + 1,
            &mut rng,
        )?;
        Ok(Model {
            config,
            vocab,
            schema,
            store,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.schema.num_relations() + 1
    }

    pub fn eta(&self) -> T {
        self.store.get(self.params.eta).value.item()
    }

    /// Scores every ordered entity pair of `doc` on `tape`.
    pub fn document_scores(
        &self,
        tape: &Tape<T>,
        p: &Bound,
        doc: &AnnotatedDocument,
    ) -> Result<Vec<PairScores>, TensorError> {
        let n = doc.entities.len();
        if n < 2 {
            return Ok(Vec::new());
        }
        let prm = &self.params;
        let enc = encode_document(tape, p, &prm.encoder, doc, &self.vocab)?;
        let states = (0..doc.num_sentences())
            .map(|s| {
                let span = doc.sentence_spans[s].clone();
                let rows = tape.gather(enc.h, &enc.index_map[span.clone()])?;
                tree_lstm_forward(
                    tape,
                    p,
                    &prm.tree,
                    &doc.constituency_trees[s],
                    rows,
                    span.start,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bank = sentence_vectors(tape, &states)?;
        let entities = doc
            .entities
            .iter()
            .map(|e| entity_vector(tape, &enc, e))
            .collect::<Result<Vec<_>, _>>()?;
        let topo = build_topology(doc, true);
        let shared = if self.config.shared_graph {
            let w = uniform_weights(tape, doc.num_sentences());
            let g = build_graph(tape, p, &prm.graph, doc, &topo, &enc, bank, w)?;
            let q = gcn_forward(tape, p, &prm.graph.gcn, g.adj, g.features)?;
            Some((g, q))
        } else {
            None
        };
        let mut out = Vec::with_capacity(n * (n - 1));
        for s in 0..n {
            for o in 0..n {
                if s == o {
                    continue;
                }
                let att = pair_attention(tape, p, &prm.attention, entities[s], entities[o], bank)?;
                let z_const =
                    const_score(tape, p, &prm.constituency, entities[s], entities[o], att.s)?;
                let (g, q) = match shared {
                    Some(gq) => gq,
                    None => {
                        let g = build_graph(tape, p, &prm.graph, doc, &topo, &enc, bank, att.a)?;
                        let q = gcn_forward(tape, p, &prm.graph.gcn, g.adj, g.features)?;
                        (g, q)
                    }
                };
                let z_dep = score_pair(tape, p, &prm.graph, &g, q, s, o)?;
                let z_final = fuse(tape, z_dep, z_const, p[prm.eta])?;
                out.push(PairScores {
                    subject: s,
                    object: o,
                    z_const,
                    z_dep,
                    z_final,
                });
            }
        }
        Ok(out)
    }

    /// Topology and edge weights of `doc` as seen by this model.
    pub fn graph_adjacency(
        &self,
        doc: &AnnotatedDocument,
    ) -> Result<(GraphTopology, Tensor<T>), TensorError> {
        let tape = Tape::new();
        let p = tape.bind_all(&self.store);
        let enc = encode_document(&tape, &p, &self.params.encoder, doc, &self.vocab)?;
        let states = (0..doc.num_sentences())
            .map(|s| {
                let span = doc.sentence_spans[s].clone();
                let rows = tape.gather(enc.h, &enc.index_map[span.clone()])?;
                tree_lstm_forward(
                    &tape,
                    &p,
                    &self.params.tree,
                    &doc.constituency_trees[s],
                    rows,
                    span.start,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bank = sentence_vectors(&tape, &states)?;
        let topo = build_topology(doc, true);
        let adj = adjacency(&tape, &topo, bank)?;
        let adj = tape.value(adj).clone();
        Ok((topo, adj))
    }

    /// Summed margin loss over all ordered pairs with the per-pair terms.
    pub fn document_loss(
        &self,
        tape: &Tape<T>,
        p: &Bound,
        doc: &AnnotatedDocument,
    ) -> Result<Option<(Var, Vec<(PairScores, Var)>)>, TensorError> {
        let scores = self.document_scores(tape, p, doc)?;
        if scores.is_empty() {
            return Ok(None);
        }
        let gold = gold_labels(doc);
        let alpha = T::lit(self.config.margin);
        let mut terms = Vec::with_capacity(scores.len());
        for sc in scores {
            let key = (
                doc.entities[sc.subject].entity_id,
                doc.entities[sc.object].entity_id,
            );
            let empty = BTreeSet::new();
            let labels = gold.get(&key).unwrap_or(&empty);
            terms.push((sc, margin_loss(tape, sc.z_final, labels, alpha)?));
        }
        let losses: Vec<Var> = terms.iter().map(|t| t.1).collect();
        let total = tape.sum(tape.concat(&losses, 0)?);
        Ok(Some((total, terms)))
    }

    /// Predicted relation sets keyed by (subject id, object id), with the
    /// margin `z[r] - z[NA]` of every predicted class.
    pub fn predict_document(
        &self,
        doc: &AnnotatedDocument,
    ) -> Result<Vec<((usize, usize), Vec<(usize, f64)>)>, TensorError> {
        let tape = Tape::new();
        let p = tape.bind_all(&self.store);
        let scores = self.document_scores(&tape, &p, doc)?;
        let na = self.schema.na_index();
        Ok(scores
            .into_iter()
            .map(|sc| {
                let z = tape.value(sc.z_final);
                let z = z.data();
                let rels = predict(z)
                    .into_iter()
                    .map(|r| (r, (z[r] - z[na]).as_f64()))
                    .collect();
                (
                    (
                        doc.entities[sc.subject].entity_id,
                        doc.entities[sc.object].entity_id,
                    ),
                    rels,
                )
            })
            .collect())
    }
}

fn register<T: Real>(
    store: &mut ParamStore<T>,
    cfg: &Config,
    vocab_size: usize,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams, TensorError> {
    let d = cfg.encoder_dim();
    let k = cfg.tree_state_dim;
    let encoder =
        EncoderParams::register(store, vocab_size, cfg.embedding_dim, cfg.hidden_dim, rng)?;
    let tree = TreeLstmParams::register(store, d, k, rng)?;
    let attention = AttentionParams::register(store, d, k, cfg.attention_heads, rng)?;
    let constituency = ConstScoreParams::register(
        store,
        d,
        k,
        cfg.bilinear_dim,
        cfg.bilinear_block,
        classes,
        rng,
    )?;
    let dims = DepGraphDims {
        encoder: d,
        sentence: k,
        gcn: cfg.gcn_dim,
        gcn_layers: cfg.gcn_layers,
        fusion_hidden: cfg.fusion_hidden,
        pair: cfg.pair_dim,
        dep_hidden: cfg.dep_hidden,
        classes,
    };
    let graph = DepGraphParams::register(store, &dims, rng)?;
    let eta = store.add("fusion.eta", Tensor::scalar(T::one()))?;
    Ok(ModelParams {
        encoder,
        tree,
        attention,
        constituency,
        graph,
        eta,
    })
}

/// Gold relation indices keyed by (subject id, object id).
pub fn gold_labels(doc: &AnnotatedDocument) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let mut out: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for f in &doc.facts {
        out.entry((f.subject, f.object))
            .or_default()
            .insert(f.relation);
    }
    out
}

/// `z_final = z_dep + η · z_const`.
pub fn fuse<T: Real>(
    tape: &Tape<T>,
    z_dep: Var,
    z_const: Var,
    eta: Var,
) -> Result<Var, TensorError> {
    let (a, b) = (tape.shape(z_dep), tape.shape(z_const));
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            left: a,
            right: b,
        });
    }
    tape.add(z_dep, tape.mul(eta, z_const)?)
}

/// `Σ_{i<C} max(0, α − c_i (z_i − z_NA))` with `c_i = +1` for gold classes.
pub fn margin_loss<T: Real>(
    tape: &Tape<T>,
    z: Var,
    gold: &BTreeSet<usize>,
    alpha: T,
) -> Result<Var, TensorError> {
    let c = tape.shape(z)[0] - 1;
    let diff = tape.sub(tape.slice(z, 0, 0, c)?, tape.slice(z, 0, c, c + 1)?)?;
    let signs = (0..c)
        .map(|i| {
            if gold.contains(&i) {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect();
    let signed = tape.mul(tape.constant(Tensor::vector(signs)), diff)?;
    let hinge = tape.max_with_zero(tape.add_scalar(tape.neg(signed), alpha));
    Ok(tape.sum(hinge))
}

/// Classes scoring strictly above the NA score (the last entry).
pub fn predict<T: Real>(z: &[T]) -> BTreeSet<usize> {
    let na = z.len() - 1;
    (0..na).filter(|&i| z[i] > z[na]).collect()
}
