//! k-order Markov next-place prediction.
//!
//! The predictor keeps one count table per order `0..=k`, all updated in the
//! same pass. Prediction takes the most frequent successor of the exact
//! context (smallest id on ties) and, when the context has never been seen,
//! backs off to shorter suffixes down to the global visit frequencies.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::cdr_ingest::Trajectory;
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 2;

#[derive(Debug, Clone)]
struct Successors<T> {
    counts: BTreeMap<T, u64>,
    best: Option<(T, u64)>,
}

impl<T: Ord + Clone> Successors<T> {
    fn new() -> Self {
        Successors {
            counts: BTreeMap::new(),
            best: None,
        }
    }

    fn bump(&mut self, next: T) {
        let c = self.counts.entry(next.clone()).or_insert(0);
        *c += 1;
        let c = *c;
        // counts only grow, so only the bumped entry can overtake the leader
        let takes_lead = match &self.best {
            None => true,
            Some((id, bc)) => c > *bc || (c == *bc && next < *id),
        };
        if takes_lead {
            self.best = Some((next, c));
        }
    }
}

/// Successor counts for contexts of one fixed length.
#[derive(Debug, Clone)]
pub struct TransitionModel<T> {
    order: usize,
    table: HashMap<Vec<T>, Successors<T>>,
    total_observations: u64,
}

impl<T: Ord + Hash + Clone> TransitionModel<T> {
    pub fn new(order: usize) -> Self {
        TransitionModel {
            order,
            table: HashMap::new(),
            total_observations: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn total_observations(&self) -> u64 {
        self.total_observations
    }

    fn check(&self, context: &[T]) -> Result<()> {
        if context.len() != self.order {
            return Err(Error::domain(format!(
                "context of length {} for an order-{} model",
                context.len(),
                self.order
            )));
        }
        Ok(())
    }

    pub fn observe(&mut self, context: &[T], next: T) -> Result<()> {
        self.check(context)?;
        match self.table.get_mut(context) {
            Some(s) => s.bump(next),
            None => {
                let mut s = Successors::new();
                s.bump(next);
                self.table.insert(context.to_vec(), s);
            }
        }
        self.total_observations += 1;
        Ok(())
    }

    pub fn count(&self, context: &[T], next: &T) -> u64 {
        self.table
            .get(context)
            .and_then(|s| s.counts.get(next))
            .copied()
            .unwrap_or(0)
    }

    /// Most frequent successor of exactly this context, if it was ever seen.
    pub fn predict_exact(&self, context: &[T]) -> Result<Option<&T>> {
        self.check(context)?;
        Ok(self
            .table
            .get(context)
            .and_then(|s| s.best.as_ref().map(|b| &b.0)))
    }

    /// Sum over all stored successor counts.
    pub fn leaf_total(&self) -> u64 {
        self.table.values().flat_map(|s| s.counts.values()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenContext {
    /// Fall back to shorter context suffixes, down to order 0.
    #[default]
    Backoff,
    /// Report no prediction; the step counts as a miss.
    Miss,
}

/// Order-k predictor with its lower-order views.
#[derive(Debug, Clone)]
pub struct MarkovPredictor<T> {
    models: Vec<TransitionModel<T>>,
    unseen: UnseenContext,
}

impl<T: Ord + Hash + Clone> MarkovPredictor<T> {
    pub fn new(order: usize, unseen: UnseenContext) -> Self {
        MarkovPredictor {
            models: (0..=order).map(TransitionModel::new).collect(),
            unseen,
        }
    }

    pub fn order(&self) -> usize {
        self.models.len() - 1
    }

    pub fn model(&self, order: usize) -> &TransitionModel<T> {
        &self.models[order]
    }

    /// Records `next` following `history`, for every order the history is
    /// long enough to supply.
    pub fn observe(&mut self, history: &[T], next: &T) {
        let usable = history.len().min(self.order());
        for k in 0..=usable {
            self.models[k]
                .observe(&history[history.len() - k..], next.clone())
                .expect("suffix length equals model order");
        }
    }

    pub fn predict(&self, context: &[T]) -> Result<Option<&T>> {
        let k = self.order();
        if context.len() != k {
            return Err(Error::domain(format!(
                "context of length {} for an order-{k} predictor",
                context.len()
            )));
        }
        let lowest = match self.unseen {
            UnseenContext::Backoff => 0,
            UnseenContext::Miss => k,
        };
        for j in (lowest..=k).rev() {
            if let Some(p) = self.models[j].predict_exact(&context[k - j..])? {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub user_id: String,
    pub order: usize,
    pub attempts: u64,
    pub hits: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "train_fraction")]
pub enum EvaluationMode {
    /// Predict each position from everything before it, then learn it.
    #[default]
    Prequential,
    /// Learn the first fraction of the sequence, then predict the rest with
    /// the model frozen.
    Split(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub order: usize,
    pub unseen: UnseenContext,
    pub mode: EvaluationMode,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            order: DEFAULT_ORDER,
            unseen: UnseenContext::Backoff,
            mode: EvaluationMode::Prequential,
        }
    }
}

/// Hit and attempt counts on a raw symbol sequence.
pub fn evaluate_sequence<T: Ord + Hash + Clone>(
    seq: &[T],
    options: &EvaluationOptions,
) -> Result<(u64, u64)> {
    let k = options.order;
    let n = seq.len();
    if n < k + 1 {
        return Err(Error::TooShort {
            required: k + 1,
            actual: n,
        });
    }
    let mut predictor = MarkovPredictor::new(k, options.unseen);
    let first_test = match options.mode {
        EvaluationMode::Prequential => k,
        EvaluationMode::Split(frac) => {
            if !(0.0..=1.0).contains(&frac) || frac.is_nan() {
                return Err(Error::domain(format!("split fraction {frac} outside [0, 1]")));
            }
            let cut = ((n as f64) * frac).floor() as usize;
            if cut >= n {
                return Err(Error::domain("split leaves no positions to test"));
            }
            cut.max(k)
        }
    };
    for i in 0..first_test {
        predictor.observe(&seq[..i], &seq[i]);
    }
    let learn_online = matches!(options.mode, EvaluationMode::Prequential);
    let mut hits = 0;
    for i in first_test..n {
        if predictor.predict(&seq[i - k..i])? == Some(&seq[i]) {
            hits += 1;
        }
        if learn_online {
            predictor.observe(&seq[..i], &seq[i]);
        }
    }
    Ok(((n - first_test) as u64, hits))
}

pub fn evaluate_prequential(traj: &Trajectory, options: &EvaluationOptions) -> Result<PredictionResult> {
    let (attempts, hits) = evaluate_sequence(traj.symbols(), options)?;
    Ok(PredictionResult {
        user_id: traj.user_id().to_owned(),
        order: options.order,
        attempts,
        hits,
        accuracy: hits as f64 / attempts as f64,
    })
}
