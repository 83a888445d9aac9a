//! Training loop, corpus-level prediction and evaluation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::corpus::{AnnotatedDocument, LabelSchema};
use crate::encoder::Vocabulary;
use crate::metrics::{
    train_fact_names, MetricReport, MetricsError, NameKey, Prediction, PredictionSet,
};
use crate::model::Model;
use crate::numerics::{Tape, TensorError};
use crate::optim::{AdamW, Schedule};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in document {doc_id} at pair ({subject}, {object})")]
    NonFinite {
        doc_id: String,
        subject: usize,
        object: usize,
    },
    #[error("{doc_id}: {source}")]
    Tensor {
        doc_id: String,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("empty training corpus")]
    EmptyCorpus,
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: Option<f64>,
    pub dev_ign_f1: Option<f64>,
    pub eta: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serialises")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub records: Vec<EpochRecord>,
    /// Optimiser steps taken when the returned parameters were current.
    pub step: u64,
    pub best_epoch: usize,
}

fn tensor_err(doc: &AnnotatedDocument) -> impl Fn(TensorError) -> TrainError + '_ {
    move |source| TrainError::Tensor {
        doc_id: doc.doc_id.clone(),
        source,
    }
}

/// Trains a fresh model on `train`.
///
/// With a dev split, every epoch is scored on it; when `patience > 0` training
/// stops after that many epochs without a dev F1 improvement and the best
/// parameters are returned.
pub fn train<T: Real>(
    config: Config,
    schema: LabelSchema,
    train: &[AnnotatedDocument],
    dev: Option<&[AnnotatedDocument]>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let vocab = Vocabulary::build(train, config.vocab_min_count);
    let mut model =
        Model::<T>::new(config.clone(), vocab, schema).map_err(tensor_err(&train[0]))?;
    let accum = config.grad_accum.max(1);
    let per_epoch = train.len().div_ceil(accum);
    let schedule = Schedule::new(
        config.learning_rate,
        config.warmup_ratio,
        config.epochs * per_epoch,
    );
    let mut opt = AdamW::new(&model.store, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let train_names = train_fact_names(train);

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, u64, crate::numerics::ParamStore<T>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(accum) {
            model.store.zero_grad();
            for &i in chunk {
                epoch_loss += accumulate_document(&mut model, &train[i])?;
            }
            let step = opt.steps() as usize + 1;
            opt.step(&mut model.store, schedule.lr(step));
        }
        let (dev_f1, dev_ign_f1) = match dev {
            Some(d) => {
                let r = evaluate(&model, d, &train_names)?;
                (Some(r.f1), Some(r.ign_f1))
            }
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            loss: epoch_loss,
            dev_f1,
            dev_ign_f1,
            eta: model.eta().as_f64(),
        };
        on_epoch(&rec);
        records.push(rec);

        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                best = Some((f1, epoch, opt.steps(), model.store.clone()));
            }
            let since = epoch - best.as_ref().map_or(epoch, |b| b.1);
            if config.patience > 0 && since >= config.patience {
                break;
            }
        }
    }
    let (step, best_epoch) = match best {
        Some((_, epoch, step, store)) => {
            model.store = store;
            (step, epoch)
        }
        None => (opt.steps(), records.len()),
    };
    Ok(TrainOutcome {
        model,
        records,
        step,
        best_epoch,
    })
}

/// Adds the gradient of one document's loss to the store; returns the loss.
pub fn accumulate_document<T: Real>(
    model: &mut Model<T>,
    doc: &AnnotatedDocument,
) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let p = tape.bind_all(&model.store);
    let Some((total, terms)) = model
        .document_loss(&tape, &p, doc)
        .map_err(tensor_err(doc))?
    else {
        return Ok(0.0);
    };
    for (sc, l) in &terms {
        if !tape.item(*l).is_finite() {
            return Err(TrainError::NonFinite {
                doc_id: doc.doc_id.clone(),
                subject: doc.entities[sc.subject].entity_id,
                object: doc.entities[sc.object].entity_id,
            });
        }
    }
    let value = tape.item(total).as_f64();
    tape.backward(total)
        .map_err(tensor_err(doc))?
        .accumulate_into(&mut model.store);
    Ok(value)
}

/// Predicted facts for every document, scored by their margin over NA.
pub fn predict_corpus<T: Real>(
    model: &Model<T>,
    docs: &[AnnotatedDocument],
) -> Result<PredictionSet, TrainError> {
    let mut set = PredictionSet::new();
    for doc in docs {
        for ((s, o), rels) in model.predict_document(doc).map_err(tensor_err(doc))? {
            for (r, margin) in rels {
                set.insert(Prediction {
                    doc_id: doc.doc_id.clone(),
                    subject: s,
                    object: o,
                    relation: model.schema.name(r).to_string(),
                    relation_index: r,
                    score: margin,
                })?;
            }
        }
    }
    Ok(set)
}

pub fn evaluate<T: Real>(
    model: &Model<T>,
    docs: &[AnnotatedDocument],
    train_names: &BTreeSet<NameKey>,
) -> Result<MetricReport, TrainError> {
    let preds = predict_corpus(model, docs)?;
    Ok(MetricReport::compute(&preds, docs, train_names)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::synthetic::{generate, SyntheticSpec};

    fn corpus(documents: usize, seed: u64) -> (Vec<AnnotatedDocument>, LabelSchema) {
        generate(&SyntheticSpec {
            documents,
            relations: 2,
            min_sentences: 3,
            max_sentences: 3,
            min_entities: 3,
            max_entities: 3,
            seed,
        })
    }

    fn small_config() -> Config {
        Config {
            epochs: 3,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            patience: 0,
            ..Config::tiny()
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let (docs, schema) = corpus(3, 1);
        let run = || {
            let out = train::<f64>(
                small_config(),
                schema.clone(),
                &docs,
                Some(&docs[..1]),
                |_| {},
            )
            .unwrap();
            (out.model.to_checkpoint_bytes(out.step), out.records)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn logs_one_record_per_epoch() {
        let (docs, schema) = corpus(2, 2);
        let mut seen = Vec::new();
        let out = train::<f64>(small_config(), schema, &docs, None, |r| {
            seen.push(r.clone())
        })
        .unwrap();
        assert_eq!(seen, out.records);
        assert_eq!(seen.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(seen
            .iter()
            .all(|r| r.dev_f1.is_none() && r.loss.is_finite()));
        assert_eq!(out.step, 6);
        let line = seen[0].to_json_line();
        let keys: serde_json::Value = serde_json::from_str(&line).unwrap();
        for k in ["epoch", "loss", "dev_f1", "dev_ign_f1", "eta"] {
            assert!(keys.get(k).is_some(), "{k} missing from {line}");
        }
    }

    #[test]
    fn eta_moves_after_one_step() {
        let (docs, schema) = corpus(1, 3);
        let config = Config {
            epochs: 1,
            ..small_config()
        };
        let out = train::<f64>(config, schema, &docs, None, |_| {}).unwrap();
        assert_ne!(out.model.eta(), 1.0);
    }

    #[test]
    fn grad_accumulation_counts_steps() {
        let (docs, schema) = corpus(5, 4);
        let config = Config {
            epochs: 2,
            grad_accum: 2,
            ..small_config()
        };
        let out = train::<f64>(config, schema, &docs, None, |_| {}).unwrap();
        assert_eq!(out.step, 6);
    }

    #[test]
    fn patience_stops_early_and_keeps_best() {
        let (docs, schema) = corpus(2, 5);
        let config = Config {
            epochs: 30,
            patience: 2,
            learning_rate: 0.0,
            ..small_config()
        };
        let out = train::<f64>(config, schema, &docs, Some(&docs), |_| {}).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.step, 2);
    }

    #[test]
    fn non_finite_loss_names_document_and_pair() {
        let (docs, schema) = corpus(1, 6);
        let mut model =
            Model::<f64>::new(small_config(), Vocabulary::build(&docs, 1), schema).unwrap();
        let eta = model.params.eta;
        model.store.get_mut(eta).value = Tensor::scalar(f64::NAN);
        let err = accumulate_document(&mut model, &docs[0]).unwrap_err();
        match err {
            TrainError::NonFinite {
                doc_id,
                subject,
                object,
            } => {
                assert_eq!(doc_id, docs[0].doc_id);
                assert_eq!(
                    (subject, object),
                    (docs[0].entities[0].entity_id, docs[0].entities[1].entity_id)
                );
            }
            other => panic!("unexpected {other}"),
        }
        assert!(TrainError::NonFinite {
            doc_id: "d7".into(),
            subject: 1,
            object: 2
        }
        .to_string()
        .contains("d7"));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let (_, schema) = corpus(1, 7);
        assert!(matches!(
            train::<f64>(small_config(), schema, &[], None, |_| {}),
            Err(TrainError::EmptyCorpus)
        ));
    }

    #[test]
    fn predictions_carry_relation_names() {
        let (docs, schema) = corpus(2, 8);
        let model =
            Model::<f64>::new(small_config(), Vocabulary::build(&docs, 1), schema.clone()).unwrap();
        let set = predict_corpus(&model, &docs).unwrap();
        for p in set.records() {
            assert_eq!(schema.index(&p.relation), Some(p.relation_index));
            assert!(p.score > 0.0);
        }
    }
}
