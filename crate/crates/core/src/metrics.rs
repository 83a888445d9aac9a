//! Micro F1, Ign F1 and the intra/inter-sentence slices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDocument, LabelSchema};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("duplicate prediction {doc_id} ({subject}, {object}, {relation})")]
    Duplicate {
        doc_id: String,
        subject: usize,
        object: usize,
        relation: usize,
    },
    #[error("prediction for unknown document {0}")]
    UnknownDocument(String),
    #[error("{doc_id}: unknown entity {entity}")]
    UnknownEntity { doc_id: String, entity: usize },
}

/// `(doc_id, subject id, object id, relation index)`.
pub type FactKey = (String, usize, usize, usize);

/// Entity identity across documents: mention surface strings of both sides.
pub type NameKey = (BTreeSet<String>, BTreeSet<String>, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub subject: usize,
    pub object: usize,
    pub relation: String,
    #[serde(skip)]
    pub relation_index: usize,
    pub score: f64,
}

impl Prediction {
    pub fn key(&self) -> FactKey {
        (
            self.doc_id.clone(),
            self.subject,
            self.object,
            self.relation_index,
        )
    }
}

/// Prediction records with no repeated fact.
#[derive(Clone, Debug, Default)]
pub struct PredictionSet {
    records: Vec<Prediction>,
    keys: BTreeSet<FactKey>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Prediction) -> Result<(), MetricsError> {
        if !self.keys.insert(p.key()) {
            return Err(MetricsError::Duplicate {
                doc_id: p.doc_id,
                subject: p.subject,
                object: p.object,
                relation: p.relation_index,
            });
        }
        self.records.push(p);
        Ok(())
    }

    pub fn from_records(
        records: impl IntoIterator<Item = Prediction>,
    ) -> Result<Self, MetricsError> {
        let mut set = Self::new();
        for p in records {
            set.insert(p)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Prediction] {
        &self.records
    }

    pub fn keys(&self) -> &BTreeSet<FactKey> {
        &self.keys
    }

    /// Re-derives `relation_index` from names after deserialisation.
    pub fn resolve(records: Vec<Prediction>, schema: &LabelSchema) -> Result<Self, String> {
        let mut out = Vec::with_capacity(records.len());
        for mut p in records {
            p.relation_index = schema
                .index(&p.relation)
                .ok_or_else(|| format!("unknown relation {:?}", p.relation))?;
            out.push(p);
        }
        Self::from_records(out).map_err(|e| e.to_string())
    }
}

/// Precision, recall and F1 with the counts behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// No gold and no predicted facts fall in this slice.
    pub empty: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp: predicted - tp,
            fn_: gold - tp,
            empty: predicted == 0 && gold == 0,
        }
    }

    fn of_sets<K: Ord>(pred: &BTreeSet<K>, gold: &BTreeSet<K>) -> Self {
        Self::from_counts(pred.intersection(gold).count(), pred.len(), gold.len())
    }
}

pub fn gold_facts(docs: &[AnnotatedDocument]) -> BTreeSet<FactKey> {
    docs.iter()
        .flat_map(|d| {
            d.facts
                .iter()
                .map(move |f| (d.doc_id.clone(), f.subject, f.object, f.relation))
        })
        .collect()
}

/// Training facts keyed by entity surface names.
pub fn train_fact_names(docs: &[AnnotatedDocument]) -> BTreeSet<NameKey> {
    docs.iter()
        .flat_map(|d| {
            d.facts.iter().map(move |f| {
                (
                    d.mention_names(f.subject),
                    d.mention_names(f.object),
                    f.relation,
                )
            })
        })
        .collect()
}

pub fn micro_f1(preds: &PredictionSet, gold: &BTreeSet<FactKey>) -> Prf {
    Prf::of_sets(preds.keys(), gold)
}

fn doc_index(docs: &[AnnotatedDocument]) -> BTreeMap<&str, &AnnotatedDocument> {
    docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

fn lookup<'a>(
    index: &BTreeMap<&str, &'a AnnotatedDocument>,
    key: &FactKey,
) -> Result<&'a AnnotatedDocument, MetricsError> {
    let doc = index
        .get(key.0.as_str())
        .ok_or_else(|| MetricsError::UnknownDocument(key.0.clone()))?;
    for e in [key.1, key.2] {
        if doc.entity(e).is_none() {
            return Err(MetricsError::UnknownEntity {
                doc_id: key.0.clone(),
                entity: e,
            });
        }
    }
    Ok(doc)
}

/// Micro F1 after dropping every fact whose name key occurs in `train`,
/// from predictions and gold alike.
pub fn ign_f1(
    preds: &PredictionSet,
    gold: &BTreeSet<FactKey>,
    docs: &[AnnotatedDocument],
    train: &BTreeSet<NameKey>,
) -> Result<Prf, MetricsError> {
    let index = doc_index(docs);
    let keep = |set: &BTreeSet<FactKey>| -> Result<BTreeSet<FactKey>, MetricsError> {
        let mut out = BTreeSet::new();
        for k in set {
            let d = lookup(&index, k)?;
            if !train.contains(&(d.mention_names(k.1), d.mention_names(k.2), k.3)) {
                out.insert(k.clone());
            }
        }
        Ok(out)
    };
    Ok(Prf::of_sets(&keep(preds.keys())?, &keep(gold)?))
}

/// Micro F1 on intra-sentence (some sentence holds mentions of both
/// entities) and inter-sentence facts.
pub fn intra_inter_f1(
    preds: &PredictionSet,
    gold: &BTreeSet<FactKey>,
    docs: &[AnnotatedDocument],
) -> Result<(Prf, Prf), MetricsError> {
    let index = doc_index(docs);
    let split =
        |set: &BTreeSet<FactKey>| -> Result<(BTreeSet<FactKey>, BTreeSet<FactKey>), MetricsError> {
            let (mut intra, mut inter) = (BTreeSet::new(), BTreeSet::new());
            for k in set {
                if lookup(&index, k)?.co_occur(k.1, k.2) {
                    intra.insert(k.clone());
                } else {
                    inter.insert(k.clone());
                }
            }
            Ok((intra, inter))
        };
    let (p_intra, p_inter) = split(preds.keys())?;
    let (g_intra, g_inter) = split(gold)?;
    Ok((
        Prf::of_sets(&p_intra, &g_intra),
        Prf::of_sets(&p_inter, &g_inter),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_f1: f64,
    pub intra_f1: f64,
    pub inter_f1: f64,
    pub overall: Prf,
    pub ign: Prf,
    pub intra: Prf,
    pub inter: Prf,
}

impl MetricReport {
    pub fn compute(
        preds: &PredictionSet,
        docs: &[AnnotatedDocument],
        train: &BTreeSet<NameKey>,
    ) -> Result<Self, MetricsError> {
        let gold = gold_facts(docs);
        let overall = micro_f1(preds, &gold);
        let ign = ign_f1(preds, &gold, docs, train)?;
        let (intra, inter) = intra_inter_f1(preds, &gold, docs)?;
        Ok(MetricReport {
            precision: overall.precision,
            recall: overall.recall,
            f1: overall.f1,
            ign_f1: ign.f1,
            intra_f1: intra.f1,
            inter_f1: inter.f1,
            overall,
            ign,
            intra,
            inter,
        })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "slice", "precision", "recall", "f1", "tp", "fp", "fn"
        );
        for (name, m) in [
            ("all", &self.overall),
            ("ign", &self.ign),
            ("intra", &self.intra),
            ("inter", &self.inter),
        ] {
            let _ = write!(
                out,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                name, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_
            );
            if m.empty {
                out.push_str("  (empty slice)");
            }
            out.push('\n');
        }
        out
    }
}
