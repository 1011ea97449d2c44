//! Training loop with seeded shuffling, best-checkpoint retention and
//! exact resume, plus split evaluation.

use std::path::Path;

use bytetr_core::vsg::{encode_record, EncodedGraph, GraphRecord, Vocab};
use bytetr_ggnn::{
    evaluate_loss, init_params, predict, train_step, Adam, AdamConfig, Checkpoint, GgnnConfig,
    ModelParams,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_split, load_vocab, Split};
use crate::error::{read_text, write_text, HarnessError};
use crate::metrics::{evaluate, EvalReport, Outcome};

pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const STATE_FILE: &str = "train_state.json";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub model: GgnnConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            patience: None,
            model: GgnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stale: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub state: TrainState,
    pub history: Vec<EpochMetrics>,
}

/// Labelled graphs of a split, with untraceable (empty) records kept as
/// `None` so evaluation can count them.
pub fn encode_split(
    records: &[GraphRecord],
    vocab: &Vocab,
) -> Result<Vec<(usize, Option<EncodedGraph>)>, HarnessError> {
    records
        .iter()
        .map(|r| {
            let label = r
                .label
                .ok_or_else(|| HarnessError::Data(format!("{}: record has no label", r.id)))?;
            if r.is_empty() {
                return Ok((label, None));
            }
            let g = encode_record(r, vocab)
                .map_err(|e| HarnessError::Data(format!("{}: {e}", r.id)))?;
            Ok((label, Some(g)))
        })
        .collect()
}

pub fn outcomes(
    params: &ModelParams,
    cfg: &GgnnConfig,
    items: &[(usize, Option<EncodedGraph>)],
) -> Result<Vec<Outcome>, HarnessError> {
    items
        .iter()
        .map(|(label, g)| {
            let p = match g {
                Some(g) => Some(predict(params, cfg, g)?.0),
                None => None,
            };
            Ok((*label, p))
        })
        .collect()
}

fn accuracy(o: &[Outcome]) -> f64 {
    if o.is_empty() {
        return 0.0;
    }
    o.iter().filter(|(t, p)| Some(*t) == *p).count() as f64 / o.len() as f64
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn read_history(path: &Path, upto: usize) -> Result<Vec<EpochMetrics>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<EpochMetrics>(l)
                .map_err(|e| HarnessError::Data(format!("metrics log: {e}")))
        })
        .filter(|m| m.as_ref().map_or(true, |m| m.epoch <= upto))
        .collect()
}

fn write_history(path: &Path, h: &[EpochMetrics]) -> Result<(), HarnessError> {
    let text: String = h
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
        .collect();
    write_text(path, &text)
}

/// Trains on `<dataset>/train.jsonl`, validating on `val.jsonl` after every
/// epoch. With `resume`, continues from `<out>/checkpoint_last.json` and
/// reproduces the uninterrupted run.
pub fn train(
    dataset: &Path,
    out: &Path,
    opts: &TrainOptions,
    resume: bool,
) -> Result<TrainSummary, HarnessError> {
    if opts.batch_size == 0 {
        return Err(HarnessError::Usage("batch size must be positive".into()));
    }
    if opts.lr.is_nan() || opts.lr <= 0.0 {
        return Err(HarnessError::Usage("learning rate must be positive".into()));
    }
    let vocab = load_vocab(dataset)?;
    let train_items = encode_split(&load_split(dataset, Split::Train)?, &vocab)?;
    let val_items = encode_split(&load_split(dataset, Split::Val)?, &vocab)?;
    let train_graphs: Vec<&EncodedGraph> =
        train_items.iter().filter_map(|(_, g)| g.as_ref()).collect();
    if train_graphs.is_empty() {
        return Err(HarnessError::Data("training split is empty".into()));
    }
    let val_graphs: Vec<&EncodedGraph> = val_items.iter().filter_map(|(_, g)| g.as_ref()).collect();

    let metrics_path = out.join(METRICS_LOG);
    let (cfg, mut params, mut opt, mut state, mut history) = if resume {
        let ck = Checkpoint::load_for(&read_text(&out.join(LAST_CHECKPOINT))?, &vocab)?;
        let state: TrainState = serde_json::from_str(&read_text(&out.join(STATE_FILE))?)
            .map_err(|e| HarnessError::Data(format!("train state: {e}")))?;
        if state.epoch != ck.epoch {
            return Err(HarnessError::Data(
                "train state and last checkpoint disagree".into(),
            ));
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| HarnessError::Data("last checkpoint has no optimizer state".into()))?;
        let history = read_history(&metrics_path, ck.epoch)?;
        (ck.config, ck.params, opt, state, history)
    } else {
        let cfg = opts.model.clone();
        cfg.validate()?;
        let params = init_params(&cfg, vocab.len(), vocab.edge_kinds.len())?;
        let opt = Adam::new(
            AdamConfig {
                lr: opts.lr,
                ..AdamConfig::default()
            },
            &params,
        );
        let initial = evaluate_loss(&params, &cfg, &train_graphs)?;
        if !initial.is_finite() {
            return Err(HarnessError::Numeric(format!("initial loss is {initial}")));
        }
        let state = TrainState {
            epoch: 0,
            best_epoch: 0,
            best_val_accuracy: -1.0,
            stale: 0,
            stopped_early: false,
        };
        let history = vec![EpochMetrics {
            epoch: 0,
            train_loss: initial,
            val_loss: None,
            val_accuracy: None,
        }];
        (cfg, params, opt, state, history)
    };

    while state.epoch < opts.epochs && !state.stopped_early {
        let epoch = state.epoch + 1;
        let order = epoch_order(cfg.seed, epoch, train_graphs.len());
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&EncodedGraph> = chunk.iter().map(|&i| train_graphs[i]).collect();
            let l = train_step(&mut params, &cfg, &mut opt, &batch)?;
            total += l * batch.len() as f64;
        }
        let train_loss = total / train_graphs.len() as f64;
        let (val_loss, val_accuracy) = if val_items.is_empty() {
            (None, None)
        } else {
            let vl = if val_graphs.is_empty() {
                None
            } else {
                Some(evaluate_loss(&params, &cfg, &val_graphs)?)
            };
            (vl, Some(accuracy(&outcomes(&params, &cfg, &val_items)?)))
        };
        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        state.epoch = epoch;
        // without a validation split every epoch counts as the new best
        let score = val_accuracy.unwrap_or(f64::INFINITY);
        let improved = score > state.best_val_accuracy || val_accuracy.is_none();
        if improved {
            state.best_epoch = epoch;
            state.best_val_accuracy = val_accuracy.unwrap_or(state.best_val_accuracy);
            state.stale = 0;
            write_text(
                &out.join(BEST_CHECKPOINT),
                &Checkpoint::new(cfg.clone(), &vocab, params.clone(), None, epoch).to_json(),
            )?;
        } else {
            state.stale += 1;
        }
        if opts.patience.is_some_and(|p| state.stale >= p) {
            state.stopped_early = true;
        }
        write_text(
            &out.join(LAST_CHECKPOINT),
            &Checkpoint::new(
                cfg.clone(),
                &vocab,
                params.clone(),
                Some(opt.clone()),
                epoch,
            )
            .to_json(),
        )?;
        write_history(&metrics_path, &history)?;
        write_text(
            &out.join(STATE_FILE),
            &(serde_json::to_string_pretty(&state).expect("state serializes") + "\n"),
        )?;
    }
    if state.epoch == 0 {
        return Err(HarnessError::Usage("no epochs to run".into()));
    }
    Ok(TrainSummary { state, history })
}

/// Evaluates a checkpoint on one split of a dataset directory.
pub fn evaluate_split(
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
) -> Result<EvalReport, HarnessError> {
    let vocab = load_vocab(dataset)?;
    let ck = Checkpoint::load_for(&read_text(checkpoint)?, &vocab)?;
    let items = encode_split(&load_split(dataset, split)?, &vocab)?;
    if items.is_empty() {
        return Err(HarnessError::Data(format!(
            "split `{}` is empty",
            split.name()
        )));
    }
    let o = outcomes(&ck.params, &ck.config, &items)?;
    Ok(evaluate(split.name(), &o))
}
