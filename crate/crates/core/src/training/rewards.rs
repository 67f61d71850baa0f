//! Reference matching and two-level caption rewards.

use serde::{Deserialize, Serialize};

use crate::interval::{tiou, Interval};
use crate::metrics::{bleu, Cider};

/// Caption similarity used as the reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMetric {
    Cider,
    Bleu4,
}

/// A reward function over word-id captions.
pub struct Scorer<'a> {
    pub metric: RewardMetric,
    pub cider: &'a Cider,
}

impl Scorer<'_> {
    pub fn score(&self, candidate: &[usize], reference: &[usize]) -> f64 {
        match self.metric {
            RewardMetric::Cider => self.cider.score(candidate, &[reference]),
            RewardMetric::Bleu4 => bleu(candidate, &[reference], 4),
        }
    }
}

/// For each detected event, the index of the GT event with highest tIoU (earlier start on ties)
/// and that tIoU.
pub fn match_reference_sequence(detected: &[Interval], gt: &[Interval]) -> Vec<(usize, f64)> {
    assert!(!gt.is_empty(), "matching needs ground-truth events");
    detected
        .iter()
        .map(|d| {
            let mut best = 0;
            for (j, e) in gt.iter().enumerate() {
                let (a, b) = (tiou(d, e), tiou(d, &gt[best]));
                if a > b || (a == b && e.start < gt[best].start) {
                    best = j;
                }
            }
            (best, tiou(d, &gt[best]))
        })
        .collect()
}

/// Per-event decomposition of the reward
/// `R(d̂_n) = [f(d̂_n, d̃_n) − f(ď_n, d̃_n)] + [f(D̂, D̃) − f(Ď, D̃)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub event_terms: Vec<f64>,
    pub episode_term: f64,
    pub totals: Vec<f64>,
    /// `f(d̂_n, d̃_n)` for each event, before the baseline.
    pub sampled_scores: Vec<f64>,
}

/// Captions in temporal order joined into one paragraph.
pub fn paragraph(captions: &[Vec<usize>]) -> Vec<usize> {
    captions.iter().flatten().copied().collect()
}

/// Rewards for one rollout. All three caption sets hold word ids and have equal length.
pub fn compute_rewards(sampled: &[Vec<usize>], baseline: &[Vec<usize>], references: &[Vec<usize>], f: &Scorer<'_>) -> RewardReport {
    assert!(
        sampled.len() == baseline.len() && baseline.len() == references.len(),
        "caption sets must align"
    );
    let sampled_scores: Vec<f64> = sampled.iter().zip(references).map(|(s, r)| f.score(s, r)).collect();
    let event_terms: Vec<f64> = sampled_scores
        .iter()
        .zip(baseline.iter().zip(references))
        .map(|(s, (b, r))| s - f.score(b, r))
        .collect();
    let reference_paragraph = paragraph(references);
    let episode_term =
        f.score(&paragraph(sampled), &reference_paragraph) - f.score(&paragraph(baseline), &reference_paragraph);
    RewardReport {
        totals: event_terms.iter().map(|e| e + episode_term).collect(),
        event_terms,
        episode_term,
        sampled_scores,
    }
}
