//! Objectives, λ scheduling and the training loop.

mod data;
mod fit;
mod objective;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::{Error, Result};

pub use data::{prepare, prepare_session, PreparedSession, PreparedTurn};
pub use fit::{fit, FitOutcome, LogRow, StopReason, TrainingLog};
pub use objective::{
    batch_loss, loss_semi_supervised, loss_unsupervised, session_loss, LossBreakdown,
    LossSettings, Objective, KL_FLOOR,
};

/// Which objective a supervision proportion selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Supervised,
    SemiSupervised,
    Unsupervised,
}

impl Mode {
    pub fn from_supervision(p: f64) -> Self {
        if p <= 0.0 {
            Mode::Unsupervised
        } else if p >= 1.0 {
            Mode::Supervised
        } else {
            Mode::SemiSupervised
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Mode::Unsupervised => Objective::Reconstruction,
            _ => Objective::Joint,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::SemiSupervised => "semi-supervised",
            Mode::Unsupervised => "unsupervised",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaSchedule {
    Constant { value: f64 },
    /// Linear from `start` to `end` over the first epoch, then `end`.
    Linear { start: f64, end: f64 },
}

pub fn lambda_at(step: usize, schedule: &LambdaSchedule, steps_per_epoch: usize) -> f64 {
    match *schedule {
        LambdaSchedule::Constant { value } => value,
        LambdaSchedule::Linear { start, end } => {
            if steps_per_epoch == 0 || step >= steps_per_epoch {
                end
            } else {
                start + (end - start) * step as f64 / steps_per_epoch as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub utterance_len: usize,
    pub span_len: usize,
    pub init_range: f64,
    pub lambda: LambdaSchedule,
    /// Share of training sessions that keep their gold spans.
    pub supervision: f64,
    /// Weight the KL term; off gives the ablation without posterior
    /// regularization.
    pub posterior_regularization: bool,
    /// Train on unannotated sessions too; off discards them.
    pub use_unlabeled: bool,
    pub seed: u64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Record elapsed seconds in the log; off writes `-` for reproducible logs.
    pub log_wall_clock: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.003,
            batch_size: 32,
            embed_size: 50,
            hidden_size: 50,
            utterance_len: 20,
            span_len: 8,
            init_range: 0.08,
            lambda: LambdaSchedule::Constant { value: 0.1 },
            supervision: 1.0,
            posterior_regularization: true,
            use_unlabeled: true,
            seed: 1,
            patience: 3,
            max_epochs: 30,
            grad_clip: Some(5.0),
            log_wall_clock: true,
        }
    }
}

impl TrainingConfig {
    /// Settings for open-domain corpora.
    pub fn nontask() -> Self {
        TrainingConfig {
            learning_rate: 0.0005,
            batch_size: 24,
            lambda: LambdaSchedule::Linear {
                start: 0.1,
                end: 0.001,
            },
            span_len: 5,
            supervision: 0.0,
            ..TrainingConfig::default()
        }
    }

    pub fn mode(&self) -> Mode {
        Mode::from_supervision(self.supervision)
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_size: self.embed_size,
            hidden_size: self.hidden_size,
            utterance_len: self.utterance_len,
            span_len: self.span_len,
            init_range: self.init_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.supervision) {
            return bad(format!("supervision must be in [0, 1], got {}", self.supervision));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip must be positive, got {c}"));
            }
        }
        let l = match self.lambda {
            LambdaSchedule::Constant { value } => [value, value],
            LambdaSchedule::Linear { start, end } => [start, end],
        };
        if l.iter().any(|v| !(*v >= 0.0)) {
            return bad("λ must be nonnegative".into());
        }
        Ok(())
    }
}

/// `Σ_l q_l · ln(q_l / max(p_l, floor))`, terms with `q_l = 0` dropped.
pub fn kl_divergence(q: &[f64], p: &[f64], floor: f64) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Domain(format!("lengths {} and {} differ", q.len(), p.len())));
    }
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("floor must be positive, got {floor}")));
    }
    if q.iter().chain(p).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
    }
    Ok(q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi / pi.max(floor)).ln())
        .sum())
}

/// `(ln p_i, −KL(onehot(i) ‖ p))`; both sides are −∞ when `p_i = 0`.
pub fn dawnet_equivalence_check(p: &[f64], i: usize) -> Result<(f64, f64)> {
    if i >= p.len() {
        return Err(Error::Domain(format!("index {i} outside distribution of {}", p.len())));
    }
    let lhs = p[i].ln();
    // With a one-hot q only the i-th term survives: 1 · ln(1 / p_i).
    let rhs = if p[i] == 0.0 {
        f64::NEG_INFINITY
    } else {
        -(1.0f64 / p[i]).ln()
    };
    Ok((lhs, rhs))
}
