//! Interval-set algebra and the composite episode reward.
//!
//! The reward has three parts: a binary answer reward, a temporal-grounding
//! reward (the harmonic mean of coverage and precision between the time
//! spans the policy requested and the annotated clue spans), and a penalty
//! for re-requesting already-visited segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{interval_of, NodePath, TreeConfig, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("interval start {0} exceeds end {1}")]
    Inverted(f64, f64),
    #[error("interval endpoint is not finite")]
    NonFinite,
    #[error("ground-truth interval set is empty")]
    EmptyGroundTruth,
    #[error("tree error: {0}")]
    Tree(#[from] TreeError),
}

/// Sorted, pairwise-disjoint half-open intervals in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from arbitrary intervals: sorts, drops zero-length
    /// entries, and merges overlapping or touching neighbours.
    pub fn normalize(intervals: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, RewardError> {
        let mut raw: Vec<(f64, f64)> = Vec::new();
        for (start, end) in intervals {
            if !start.is_finite() || !end.is_finite() {
                return Err(RewardError::NonFinite);
            }
            if start > end {
                return Err(RewardError::Inverted(start, end));
            }
            if start < end {
                raw.push((start, end));
            }
        }
        raw.sort_by(|a, b| a.partial_cmp(b).expect("finite endpoints"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (start, end) in raw {
            match merged.last_mut() {
                Some(last) if start <= last.1 => last.1 = last.1.max(end),
                _ => merged.push((start, end)),
            }
        }
        Ok(IntervalSet { intervals: merged })
    }

    pub fn single(start: f64, end: f64) -> Result<Self, RewardError> {
        Self::normalize([(start, end)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Sum of interval lengths.
    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::normalize(self.intervals.iter().chain(&other.intervals).copied())
            .expect("operands are already normalized")
    }

    pub fn intersection(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a0, a1) = self.intervals[i];
            let (b0, b1) = other.intervals[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo < hi {
                out.push((lo, hi));
            }
            if a1 <= b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { intervals: out }
    }

    pub fn intersection_length(&self, other: &IntervalSet) -> f64 {
        self.intersection(other).total_length()
    }

    /// True when the t instant lies inside some interval of the set.
    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= t && t < b)
    }

    /// True when every interval lies inside `[lo, hi)`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.intervals.iter().all(|&(a, b)| a >= lo && b <= hi)
    }
}

/// Weights of the composite reward. `w_repeat` multiplies a non-positive
/// penalty term, so all three weights are kept positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_ans: f64,
    pub w_loc: f64,
    pub w_repeat: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_ans: 1.0,
            w_loc: 0.5,
            w_repeat: 0.1,
        }
    }
}

/// Union of the clip intervals the policy requested during an episode.
///
/// With `exclude_init` (the default in scoring) only policy-chosen requests
/// count; the mandatory context captions seeded at episode start are left
/// out, since under first-level init they would tile the whole video and
/// wash out the precision signal.
pub fn model_interval_set(
    policy_paths: &[NodePath],
    init_paths: &[NodePath],
    duration_s: f64,
    cfg: &TreeConfig,
    exclude_init: bool,
) -> Result<IntervalSet, RewardError> {
    let mut ivs = Vec::new();
    for path in policy_paths {
        ivs.push(interval_of(path, duration_s, cfg)?);
    }
    if !exclude_init {
        for path in init_paths {
            ivs.push(interval_of(path, duration_s, cfg)?);
        }
    }
    IntervalSet::normalize(ivs)
}

/// F1-style grounding reward: harmonic mean of coverage
/// `|model ∩ gt| / |gt|` and precision `|model ∩ gt| / |model|`.
///
/// Precision is defined as 0 for an empty model set; the reward is 0 when
/// both terms vanish.
pub fn location_reward(model: &IntervalSet, gt: &IntervalSet) -> Result<f64, RewardError> {
    if gt.is_empty() {
        return Err(RewardError::EmptyGroundTruth);
    }
    let inter = model.intersection_length(gt);
    let cov = inter / gt.total_length();
    let pre = if model.is_empty() {
        0.0
    } else {
        inter / model.total_length()
    };
    if cov + pre == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * cov * pre / (cov + pre))
}

/// Minus the number of tool calls whose path already appeared earlier in
/// the call log. Always `<= 0`.
pub fn repeat_penalty(visit_log: &[NodePath]) -> f64 {
    let mut seen = std::collections::BTreeSet::new();
    let mut repeats = 0;
    for path in visit_log {
        if !seen.insert(path) {
            repeats += 1;
        }
    }
    if repeats == 0 {
        0.0
    } else {
        -(repeats as f64)
    }
}

/// `w_ans * r_ans + w_loc * r_loc + w_repeat * r_repeat`.
pub fn composite_reward(r_ans: f64, r_loc: f64, r_repeat: f64, w: &RewardWeights) -> f64 {
    w.w_ans * r_ans + w.w_loc * r_loc + w.w_repeat * r_repeat
}

/// Per-component reward record for one scored episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ans: f64,
    pub r_loc: f64,
    pub r_repeat: f64,
    pub total: f64,
}
