//! Finite-difference checks of every differentiable component.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::constituency::{
    const_score, pair_attention, sentence_vectors, tree_lstm_forward, TreeStates,
};
use crate::corpus::AnnotatedDocument;
use crate::depgraph::{build_graph, build_topology, gcn_forward, score_pair};
use crate::encoder::{encode_document, entity_vector, EncodedDocument, Vocabulary};
use crate::model::{fuse, margin_loss, Model};
use crate::numerics::{grad_check, grad_check_params, ParamId, Tape, Tensor, TensorError, Var};
use crate::synthetic::{generate, SyntheticSpec};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub component: String,
    pub max_rel_error: f64,
    /// Parameter or input holding the worst entry.
    pub worst: String,
    pub scalars: usize,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Sum of `tanh(v ⊙ w)` for a fixed pseudo-random `w`; keeps every output
/// coordinate in the check without a kink.
fn probe(t: &Tape<f64>, v: Var, salt: usize) -> Result<Var, TensorError> {
    let shape = t.shape(v);
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n)
        .map(|i| ((i * 7 + salt * 3) % 11) as f64 / 5.0 - 1.0)
        .collect();
    let w = t.constant(Tensor::new(shape, w)?);
    Ok(t.sum(t.tanh(t.mul(v, w)?)))
}

fn probe_all(t: &Tape<f64>, vs: &[Var]) -> Result<Var, TensorError> {
    let mut parts = Vec::with_capacity(vs.len());
    for (i, &v) in vs.iter().enumerate() {
        parts.push(probe(t, v, i)?);
    }
    Ok(t.sum(t.concat(&parts, 0)?))
}

struct Fixture {
    model: Model<f64>,
    doc: AnnotatedDocument,
    h: Tensor<f64>,
    index_map: Vec<usize>,
    bank: Tensor<f64>,
    entities: Vec<Tensor<f64>>,
    weights: Tensor<f64>,
}

impl Fixture {
    fn new(config: &Config, seed: u64) -> Result<Self, TensorError> {
        let (docs, schema) = generate(&SyntheticSpec {
            documents: 1,
            relations: 2,
            min_sentences: 3,
            max_sentences: 3,
            min_entities: 3,
            max_entities: 3,
            seed,
        });
        let doc = docs.into_iter().next().expect("one document");
        let vocab = Vocabulary::build(std::slice::from_ref(&doc), 1);
        let mut model = Model::new(
            Config {
                seed,
                ..config.clone()
            },
            vocab,
            schema,
        )?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for p in model.store.iter_mut() {
            for x in p.value.data_mut() {
                *x = r.gen_range(-1.0..1.0);
            }
        }
        let t = Tape::new();
        let p = t.bind_all(&model.store);
        let prm = &model.params;
        let enc = encode_document(&t, &p, &prm.encoder, &doc, &model.vocab)?;
        let states = tree_states(&t, &model, &doc, enc.h, &enc.index_map)?;
        let bank = sentence_vectors(&t, &states)?;
        let entities: Vec<Var> = doc
            .entities
            .iter()
            .map(|e| entity_vector(&t, &enc, e))
            .collect::<Result<_, _>>()?;
        let att = pair_attention(&t, &p, &prm.attention, entities[0], entities[1], bank)?;
        let out = Fixture {
            h: t.value(enc.h).clone(),
            index_map: enc.index_map.clone(),
            bank: t.value(bank).clone(),
            entities: entities.iter().map(|&e| t.value(e).clone()).collect(),
            weights: t.value(att.a).clone(),
            model,
            doc,
        };
        Ok(out)
    }

    fn ids(&self, prefix: &str) -> Vec<ParamId> {
        self.model
            .store
            .ids()
            .filter(|&id| self.model.store.get(id).name.starts_with(prefix))
            .collect()
    }

    fn encoded(&self, h: Var) -> EncodedDocument {
        EncodedDocument {
            h,
            index_map: self.index_map.clone(),
            len: self.h.rows(),
            dim: self.h.cols(),
        }
    }

    fn params(
        &self,
        component: &str,
        prefix: &str,
        loss: impl Fn(&Tape<f64>, &crate::numerics::ParamStore<f64>) -> Result<Var, TensorError>,
    ) -> Result<ComponentReport, TensorError> {
        let ids = self.ids(prefix);
        let report = grad_check_params(&self.model.store, &ids, loss, STEP)?;
        let scalars = ids
            .iter()
            .map(|&id| self.model.store.get(id).value.numel())
            .sum();
        Ok(summarise(component, report, scalars))
    }
}

fn tree_states(
    t: &Tape<f64>,
    model: &Model<f64>,
    doc: &AnnotatedDocument,
    h: Var,
    index_map: &[usize],
) -> Result<Vec<TreeStates>, TensorError> {
    let p = t.bind_all(&model.store);
    (0..doc.num_sentences())
        .map(|s| {
            let span = doc.sentence_spans[s].clone();
            let rows = t.gather(h, &index_map[span.clone()])?;
            tree_lstm_forward(
                t,
                &p,
                &model.params.tree,
                &doc.constituency_trees[s],
                rows,
                span.start,
            )
        })
        .collect()
}

fn summarise(component: &str, report: Vec<(String, f64)>, scalars: usize) -> ComponentReport {
    let (worst, max_rel_error) = report
        .into_iter()
        .fold((String::new(), 0.0f64), |acc, (n, e)| {
            if e > acc.1 || acc.0.is_empty() {
                (n, e)
            } else {
                acc
            }
        });
    ComponentReport {
        component: component.to_string(),
        max_rel_error,
        worst,
        scalars,
    }
}

fn merge(component: &str, parts: Vec<ComponentReport>) -> ComponentReport {
    let scalars = parts.iter().map(|p| p.scalars).sum();
    let pairs = parts
        .into_iter()
        .map(|p| (p.worst, p.max_rel_error))
        .collect();
    summarise(component, pairs, scalars)
}

fn input_check(
    name: &str,
    x: &Tensor<f64>,
    f: impl Fn(&Tape<f64>, Var) -> Result<Var, TensorError>,
) -> Result<ComponentReport, TensorError> {
    let err = grad_check(f, x, STEP)?;
    Ok(summarise(name, vec![(name.to_string(), err)], x.numel()))
}

/// Checks encoder, Tree-LSTM, attention, const_score, graph through
/// dep_score, fuse, margin_loss and the full model at a random point.
pub fn grad_check_suite(config: &Config, seed: u64) -> Result<Vec<ComponentReport>, TensorError> {
    let fx = Fixture::new(config, seed)?;
    let m = &fx.model;
    let prm = &m.params;
    let doc = &fx.doc;
    let mut out = Vec::new();

    out.push(fx.params("encoder", "encoder.", |t, s| {
        let p = t.bind_all(s);
        let enc = encode_document(t, &p, &prm.encoder, doc, &m.vocab)?;
        probe(t, enc.h, 0)
    })?);

    let tree_states_probe =
        |t: &Tape<f64>, h: Var, s: &crate::numerics::ParamStore<f64>| -> Result<Var, TensorError> {
            let p = t.bind_all(s);
            let mut vs = Vec::new();
            for sent in 0..doc.num_sentences() {
                let span = doc.sentence_spans[sent].clone();
                let rows = t.gather(h, &fx.index_map[span.clone()])?;
                let st = tree_lstm_forward(
                    t,
                    &p,
                    &prm.tree,
                    &doc.constituency_trees[sent],
                    rows,
                    span.start,
                )?;
                vs.push(t.stack(&st.h)?);
                vs.push(t.stack(&st.c)?);
            }
            probe_all(t, &vs)
        };
    let tree_params = fx.params("tree-lstm", "tree.", |t, s| {
        let h = t.constant(fx.h.clone());
        tree_states_probe(t, h, s)
    })?;
    let tree_inputs = input_check("tree-lstm.leaf_inputs", &fx.h, |t, h| {
        tree_states_probe(t, h, &m.store)
    })?;
    out.push(merge("tree-lstm", vec![tree_params, tree_inputs]));

    let (e_s, e_o) = (fx.entities[0].clone(), fx.entities[1].clone());
    let attention = |t: &Tape<f64>,
                     s: &crate::numerics::ParamStore<f64>,
                     bank: Var|
     -> Result<Var, TensorError> {
        let p = t.bind_all(s);
        let a = pair_attention(
            t,
            &p,
            &prm.attention,
            t.constant(e_s.clone()),
            t.constant(e_o.clone()),
            bank,
        )?;
        probe_all(t, &[a.s, a.a])
    };
    let att_params = fx.params("attention", "attention.", |t, s| {
        attention(t, s, t.constant(fx.bank.clone()))
    })?;
    let att_inputs = input_check("attention.bank", &fx.bank, |t, b| attention(t, &m.store, b))?;
    out.push(merge("attention", vec![att_params, att_inputs]));

    let s_vec = {
        let t = Tape::new();
        let p = t.bind_all(&m.store);
        let a = pair_attention(
            &t,
            &p,
            &prm.attention,
            t.constant(e_s.clone()),
            t.constant(e_o.clone()),
            t.constant(fx.bank.clone()),
        )?;
        let v = t.value(a.s).clone();
        v
    };
    let cs = |t: &Tape<f64>,
              s: &crate::numerics::ParamStore<f64>,
              sv: Var|
     -> Result<Var, TensorError> {
        let p = t.bind_all(s);
        let z = const_score(
            t,
            &p,
            &prm.constituency,
            t.constant(e_s.clone()),
            t.constant(e_o.clone()),
            sv,
        )?;
        probe(t, z, 0)
    };
    let cs_params = fx.params("const_score", "const.", |t, s| {
        cs(t, s, t.constant(s_vec.clone()))
    })?;
    let cs_inputs = input_check("const_score.s", &s_vec, |t, sv| cs(t, &m.store, sv))?;
    out.push(merge("const_score", vec![cs_params, cs_inputs]));

    let topo = build_topology(doc, true);
    let n = doc.entities.len();
    let graph = |t: &Tape<f64>,
                 s: &crate::numerics::ParamStore<f64>,
                 h: Var,
                 bank: Var,
                 w: Var|
     -> Result<Var, TensorError> {
        let p = t.bind_all(s);
        let enc = fx.encoded(h);
        let g = build_graph(t, &p, &prm.graph, doc, &topo, &enc, bank, w)?;
        let q = gcn_forward(t, &p, &prm.graph.gcn, g.adj, g.features)?;
        let mut zs = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    zs.push(score_pair(t, &p, &prm.graph, &g, q, a, b)?);
                }
            }
        }
        probe_all(t, &zs)
    };
    let consts = |t: &Tape<f64>| {
        (
            t.constant(fx.h.clone()),
            t.constant(fx.bank.clone()),
            t.constant(fx.weights.clone()),
        )
    };
    let g_params = fx.params("graph->dep_score", "graph.", |t, s| {
        let (h, b, w) = consts(t);
        graph(t, s, h, b, w)
    })?;
    let g_h = input_check("graph.token_states", &fx.h, |t, h| {
        let (_, b, w) = consts(t);
        graph(t, &m.store, h, b, w)
    })?;
    let g_bank = input_check("graph.sentence_vectors", &fx.bank, |t, b| {
        let (h, _, w) = consts(t);
        graph(t, &m.store, h, b, w)
    })?;
    let g_w = input_check("graph.attention_weights", &fx.weights, |t, w| {
        let (h, b, _) = consts(t);
        graph(t, &m.store, h, b, w)
    })?;
    out.push(merge("graph->dep_score", vec![g_params, g_h, g_bank, g_w]));

    let classes = m.classes();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut rand_vec = |k: usize| Tensor::vector((0..k).map(|_| r.gen_range(-2.0..2.0)).collect());
    let (zd, zc, eta) = (rand_vec(classes), rand_vec(classes), rand_vec(1));
    let f_eta = input_check("fuse.eta", &eta, |t, e| {
        probe(
            t,
            fuse(t, t.constant(zd.clone()), t.constant(zc.clone()), e)?,
            0,
        )
    })?;
    let f_dep = input_check("fuse.z_dep", &zd, |t, z| {
        probe(
            t,
            fuse(t, z, t.constant(zc.clone()), t.constant(eta.clone()))?,
            0,
        )
    })?;
    let f_const = input_check("fuse.z_const", &zc, |t, z| {
        probe(
            t,
            fuse(t, t.constant(zd.clone()), z, t.constant(eta.clone()))?,
            0,
        )
    })?;
    out.push(merge("fuse", vec![f_eta, f_dep, f_const]));

    // margin_loss at a point whose hinges are all at least 0.1 from their kink
    let alpha = m.config.margin;
    let gold: BTreeSet<usize> = (0..classes - 1).filter(|i| i % 2 == 0).collect();
    let z = loop {
        let z = rand_vec(classes);
        let na = z.data()[classes - 1];
        let clear = (0..classes - 1).all(|i| {
            let c = if gold.contains(&i) { 1.0 } else { -1.0 };
            (alpha - c * (z.data()[i] - na)).abs() > 0.1
        });
        if clear {
            break z;
        }
    };
    out.push(input_check("margin_loss", &z, |t, zv| {
        margin_loss(t, zv, &gold, alpha)
    })?);
    out.last_mut().expect("pushed").component = "margin_loss".into();

    out.push(fx.params("end-to-end", "", |t, s| {
        let p = t.bind_all(s);
        let scores = m.document_scores(t, &p, doc)?;
        let zs: Vec<Var> = scores.iter().map(|sc| sc.z_final).collect();
        probe_all(t, &zs)
    })?);
    Ok(out)
}

pub fn render_table(reports: &[ComponentReport]) -> String {
    let mut s = format!(
        "{:<18} {:>14} {:>8}  {}\n",
        "component", "max_rel_error", "scalars", "worst"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<18} {:>14.3e} {:>8}  {}{}\n",
            r.component,
            r.max_rel_error,
            r.scalars,
            r.worst,
            if r.passed() { "" } else { "  FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_at_tiny_dims() {
        let reports = grad_check_suite(&Config::tiny(), 7).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.component.as_str()).collect();
        assert_eq!(
            names,
            [
                "encoder",
                "tree-lstm",
                "attention",
                "const_score",
                "graph->dep_score",
                "fuse",
                "margin_loss",
                "end-to-end"
            ]
        );
        for r in &reports {
            assert!(r.passed(), "{}", render_table(&reports));
            assert!(r.scalars > 0);
        }
    }

    #[test]
    fn probe_weights_are_not_all_zero() {
        let t = Tape::new();
        let v = t.constant(Tensor::full([3, 4], 1.0));
        assert!(t.item(probe(&t, v, 0).unwrap()) != 0.0);
    }
}
