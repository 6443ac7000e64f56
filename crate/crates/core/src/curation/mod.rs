//! Candidate pools, metric ranking, chat-model judging and the bounded
//! character-consistency repair loop.

mod judge;
mod repair;

pub use judge::{
    judge_select, judge_select_image, judge_select_video, JudgeOutcome, FORMAT_REMINDER, MAX_VIDEO_JUDGE,
};
pub use repair::{
    consistency_repair, parse_inconsistencies, AuditAction, AuditEntry, Inconsistency,
    ReflectionOutcome, RepairInputs, DEFAULT_MAX_REPAIR_ITERS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CompositeWeights, MetricReport, MetricsError};
use crate::prompt::PromptError;
use crate::providers::ProviderError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CurationError {
    #[error("pool has no scores")]
    ScoresMissing,
    #[error("pool is empty")]
    EmptyPool,
    #[error("{got} scores for {items} candidates")]
    ScoreCount { items: usize, got: usize },
    #[error("index {index} is outside a pool of {size}")]
    IndexOutOfPool { index: usize, size: usize },
    #[error("{count} candidates exceed the judge's limit of {limit} images")]
    TooManyCandidates { count: usize, limit: usize },
    #[error("judging {count} candidates is not supported (1..={max})")]
    BadJudgeCount { count: usize, max: usize },
    #[error("judge gave no usable verdict after {attempts} attempts; last reply: {last_reply:?}")]
    JudgeFailed { attempts: usize, last_reply: String },
    #[error("repair budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Where a pool came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub request_digest: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool<T> {
    items: Vec<T>,
    scores: Option<Vec<MetricReport>>,
    selected: Option<usize>,
    pub provenance: Provenance,
}

impl<T> CandidatePool<T> {
    pub fn new(items: Vec<T>, provenance: Provenance) -> Result<Self, CurationError> {
        if items.is_empty() {
            return Err(CurationError::EmptyPool);
        }
        Ok(Self {
            items,
            scores: None,
            selected: None,
            provenance,
        })
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scores(&self) -> Option<&[MetricReport]> {
        self.scores.as_deref()
    }

    pub fn set_scores(&mut self, scores: Vec<MetricReport>) -> Result<(), CurationError> {
        if scores.len() != self.items.len() {
            return Err(CurationError::ScoreCount {
                items: self.items.len(),
                got: scores.len(),
            });
        }
        self.scores = Some(scores);
        Ok(())
    }

    pub fn selected(&self) -> Option<usize> {
        self.selected
    }

    pub fn select(&mut self, index: usize) -> Result<&T, CurationError> {
        if index >= self.items.len() {
            return Err(CurationError::IndexOutOfPool {
                index,
                size: self.items.len(),
            });
        }
        self.selected = Some(index);
        Ok(&self.items[index])
    }

    pub fn composite_scores(&self, weights: &CompositeWeights) -> Result<Vec<f64>, CurationError> {
        Ok(self
            .scores
            .as_ref()
            .ok_or(CurationError::ScoresMissing)?
            .iter()
            .map(|r| r.composite(weights))
            .collect())
    }
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn rank_scores(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn rank_candidates<T>(
    pool: &CandidatePool<T>,
    k: usize,
    weights: &CompositeWeights,
) -> Result<Vec<usize>, CurationError> {
    Ok(rank_scores(&pool.composite_scores(weights)?, k))
}
