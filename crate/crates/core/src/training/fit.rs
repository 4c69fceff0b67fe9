//! Mini-batch Adam with early stopping on validation loss.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sedst_autodiff::{adam_step, AdamConfig, Gradients, ParamStore};

use super::data::PreparedSession;
use super::objective::{batch_loss, LossBreakdown, LossSettings};
use super::{lambda_at, Mode, TrainingConfig};
use crate::model::Model;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStopping { epoch: usize },
    EpochBudget,
    Diverged { epoch: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub lambda: f64,
    pub train: LossBreakdown,
    pub valid: LossBreakdown,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: Option<Mode>,
    pub annotated: usize,
    pub unannotated: usize,
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(m) = self.mode {
            let _ = writeln!(
                out,
                "# mode={} annotated={} unannotated={}",
                m.name(),
                self.annotated,
                self.unannotated
            );
        }
        out.push_str(
            "epoch\tlambda\ttrain_total\ttrain_response\ttrain_span_prior\ttrain_span_posterior\t\
             train_reconstruction\ttrain_kl\tvalid_total\tvalid_response\tvalid_kl\tseconds\n",
        );
        for r in &self.rows {
            let (t, v) = (r.train.per_session(), r.valid.per_session());
            let secs = r.seconds.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                r.epoch,
                r.lambda,
                t.total,
                t.response_nll,
                t.span_prior_nll,
                t.span_posterior_nll,
                t.reconstruction_nll,
                t.kl_term,
                v.total,
                v.response_nll,
                v.kl_term,
                secs
            );
        }
        out
    }
}

pub struct FitOutcome {
    pub model: Model,
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub log: TrainingLog,
    pub stop: StopReason,
    /// The shuffling RNG where training left it.
    pub rng: ChaCha8Rng,
}

/// Per-epoch order in which annotated and unannotated sessions are spread
/// evenly, so each batch sees them in corpus proportion.
fn stratified_order(sessions: &[PreparedSession], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (mut a, mut u): (Vec<usize>, Vec<usize>) =
        (0..sessions.len()).partition(|&i| sessions[i].annotated());
    a.shuffle(rng);
    u.shuffle(rng);
    let key = |k: usize, n: usize| (2 * k + 1) as f64 / (2 * n) as f64;
    let mut keyed: Vec<(f64, usize, usize)> = a
        .iter()
        .enumerate()
        .map(|(k, &i)| (key(k, a.len()), 0, i))
        .chain(u.iter().enumerate().map(|(k, &i)| (key(k, u.len()), 1, i)))
        .collect();
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

fn clip(grads: &mut Gradients, max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let n = grads.global_norm();
        if n > c {
            grads.scale(c / n);
        }
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::Numerical(_) | Error::Tensor(sedst_autodiff::Error::NonFiniteGradient(_))
    )
}

fn evaluate(
    store: &ParamStore,
    model: &Model,
    sessions: &[PreparedSession],
    settings: &LossSettings,
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for chunk in sessions.chunks(64) {
        let refs: Vec<&PreparedSession> = chunk.iter().collect();
        acc.add(&batch_loss(store, model, &refs, settings, false)?.0);
    }
    Ok(acc)
}

/// Trains a fresh model on `train`. Unannotated sessions are dropped when
/// `use_unlabeled` is off; validation loss drives early stopping and model
/// selection (training loss stands in when `valid` is empty).
pub fn fit(
    train: &[PreparedSession],
    valid: &[PreparedSession],
    vocab_size: usize,
    cfg: &TrainingConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let mode = cfg.mode();
    let keep = |s: &&PreparedSession| cfg.use_unlabeled || s.annotated();
    let train: Vec<PreparedSession> = train.iter().filter(keep).cloned().collect();
    let valid: Vec<PreparedSession> = valid.iter().filter(keep).cloned().collect();
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (model, mut store) = Model::init(cfg.model_config(vocab_size), &mut rng)?;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let annotated = train.iter().filter(|s| s.annotated()).count();
    let mut log = TrainingLog {
        mode: Some(mode),
        annotated,
        unannotated: train.len() - annotated,
        rows: Vec::new(),
    };
    let mut settings = LossSettings::new(mode.objective(), 0.0, cfg.span_len);
    settings.regularize = cfg.posterior_regularization;

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut stop = StopReason::EpochBudget;
    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let order = stratified_order(&train, &mut rng);
        let mut acc = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            settings.lambda = lambda_at(step, &cfg.lambda, steps_per_epoch);
            let batch: Vec<&PreparedSession> = chunk.iter().map(|&i| &train[i]).collect();
            let result = batch_loss(&store, &model, &batch, &settings, true).and_then(|(b, g)| {
                let mut g = g.expect("gradients requested");
                clip(&mut g, cfg.grad_clip);
                adam_step(&mut store, &g, &adam)?;
                Ok(b)
            });
            match result {
                Ok(b) => acc.add(&b),
                Err(e) if is_divergence(&e) => {
                    stop = StopReason::Diverged {
                        epoch,
                        message: e.to_string(),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        settings.lambda = lambda_at(step, &cfg.lambda, steps_per_epoch);
        let v = if valid.is_empty() {
            acc.clone()
        } else {
            match evaluate(&store, &model, &valid, &settings) {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => {
                    stop = StopReason::Diverged {
                        epoch,
                        message: e.to_string(),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        };
        let score = v.per_session().total;
        log.rows.push(LogRow {
            epoch,
            lambda: settings.lambda,
            train: acc,
            valid: v,
            seconds: cfg.log_wall_clock.then(|| started.elapsed().as_secs_f64()),
        });
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            stop = StopReason::EarlyStopping { epoch };
            break;
        }
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, store),
    };
    Ok(FitOutcome {
        model,
        params,
        best_epoch,
        log,
        stop,
        rng,
    })
}
