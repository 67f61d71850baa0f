//! Single-stream event proposals.
//!
//! A two-layer GRU scans the segment features. At every segment `t` the
//! top layer emits `K` logits; logit `k` scores the proposal that ends at
//! `t` and spans `k + 1` segments.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use densecap_nn::{sigmoid, Graph, GruCell, ParamStore, Tensor, Var};

use crate::error::Result;
use crate::interval::{tiou, Interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpnConfig {
    pub d_feat: usize,
    pub hidden: usize,
    pub k: usize,
    pub top_n: usize,
    pub nms_threshold: f64,
    pub m_max: usize,
}

impl Default for EpnConfig {
    fn default() -> Self {
        EpnConfig {
            d_feat: 16,
            hidden: 32,
            k: 8,
            top_n: 200,
            nms_threshold: 0.8,
            m_max: 32,
        }
    }
}

impl EpnConfig {
    /// Dimension of `Vis(p)`.
    pub fn vis_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// A scored temporal interval with its visual feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub interval: Interval,
    pub score: f64,
    #[serde(skip)]
    pub vis: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Epn {
    pub config: EpnConfig,
    l0: GruCell,
    l1: GruCell,
}

/// Per-video output of [`Epn::score_proposals`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalScores {
    pub t_c: usize,
    pub k: usize,
    /// Row-major `T_c x K` confidences.
    pub confidence: Vec<f64>,
    /// Top-layer hidden state at each segment.
    pub hidden: Vec<Vec<f64>>,
}

impl ProposalScores {
    pub fn confidence(&self, t: usize, k: usize) -> f64 {
        self.confidence[t * self.k + k]
    }

    /// The interval scored at `(t, k)`, or `None` when its start precedes segment 0.
    pub fn interval(&self, t: usize, k: usize) -> Option<Interval> {
        proposal_interval(t, k)
    }

    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        k <= t
    }

    /// `Vis(p)`: hidden states at the start and end segment, concatenated.
    pub fn vis(&self, iv: Interval) -> Vec<f64> {
        let mut v = self.hidden[iv.start].clone();
        v.extend_from_slice(&self.hidden[iv.end]);
        v
    }

    pub fn proposal(&self, iv: Interval, score: f64) -> Proposal {
        Proposal {
            interval: iv,
            score,
            vis: self.vis(iv),
        }
    }

    /// Every valid proposal, unordered.
    pub fn all_proposals(&self) -> Vec<Proposal> {
        let mut out = Vec::new();
        for t in 0..self.t_c {
            for k in 0..self.k.min(t + 1) {
                let iv = proposal_interval(t, k).expect("k <= t");
                out.push(self.proposal(iv, self.confidence(t, k)));
            }
        }
        out
    }
}

fn proposal_interval(t: usize, k: usize) -> Option<Interval> {
    (k <= t).then(|| Interval { start: t - k, end: t })
}

impl Epn {
    pub fn new(config: EpnConfig) -> Self {
        Epn {
            l0: GruCell::new("epn.gru0", config.d_feat, config.hidden),
            l1: GruCell::new("epn.gru1", config.hidden, config.hidden),
            config,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        self.l0.init(store, scale, rng)?;
        self.l1.init(store, scale, rng)?;
        store.insert_uniform("epn.out.w", &[self.config.k, self.config.hidden], scale, rng)?;
        store.insert_uniform("epn.out.b", &[self.config.k], scale, rng)?;
        Ok(())
    }

    /// Records the scan; returns per-segment logits and top-layer hidden states.
    pub fn forward(&self, g: &Graph, features: &Tensor) -> Result<(Vec<Var>, Vec<Var>)> {
        let (l0, l1) = (self.l0.bind(g)?, self.l1.bind(g)?);
        let (w, b) = (g.param("epn.out.w")?, g.param("epn.out.b")?);
        let mut h0 = g.constant_vec(vec![0.0; self.config.hidden]);
        let mut h1 = g.constant_vec(vec![0.0; self.config.hidden]);
        let mut logits = Vec::with_capacity(features.rows());
        let mut hidden = Vec::with_capacity(features.rows());
        for t in 0..features.rows() {
            let x = g.constant_vec(features.row(t).to_vec());
            h0 = l0.step(g, x, h0)?;
            h1 = l1.step(g, h0, h1)?;
            logits.push(g.linear(w, b, h1));
            hidden.push(h1);
        }
        Ok((logits, hidden))
    }

    pub fn score_proposals(&self, store: &ParamStore, features: &Tensor) -> Result<ProposalScores> {
        let g = Graph::inference(store);
        let (logits, hidden) = self.forward(&g, features)?;
        let confidence = logits
            .iter()
            .flat_map(|&l| g.value(l).data().iter().map(|&x| sigmoid(x)).collect::<Vec<_>>())
            .collect();
        Ok(ProposalScores {
            t_c: features.rows(),
            k: self.config.k,
            confidence,
            hidden: hidden.iter().map(|&h| g.value(h).data().to_vec()).collect(),
        })
    }

    /// Weighted BCE over all valid `(t, k)`; invalid entries carry weight 0.
    pub fn loss(&self, g: &Graph, features: &Tensor, labels: &ProposalLabels) -> Result<Var> {
        let (logits, _) = self.forward(g, features)?;
        let pos_w = labels.positive_weight();
        let k = self.config.k;
        let terms: Vec<Var> = logits
            .iter()
            .enumerate()
            .map(|(t, &l)| {
                let y = &labels.y[t * k..(t + 1) * k];
                let targets: Vec<f64> = y.iter().map(|&b| b as f64).collect();
                let weights: Vec<f64> = (0..k)
                    .map(|j| match (labels.is_valid(t, j), y[j]) {
                        (false, _) => 0.0,
                        (true, 1) => pos_w,
                        (true, _) => 1.0,
                    })
                    .collect();
                g.bce_with_logits(l, &targets, &weights)
            })
            .collect();
        Ok(g.add_n(&terms))
    }

    pub fn extract_candidates(&self, store: &ParamStore, features: &Tensor) -> Result<Vec<Proposal>> {
        let scores = self.score_proposals(store, features)?;
        Ok(candidates_from_scores(
            &scores,
            self.config.top_n,
            self.config.nms_threshold,
            self.config.m_max,
        ))
    }
}

/// Binary training targets for one video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProposalLabels {
    pub t_c: usize,
    pub k: usize,
    /// Row-major `T_c x K`; 1 iff the proposal is valid and has tIoU > 0.5 with some event.
    pub y: Vec<u8>,
}

impl ProposalLabels {
    pub fn get(&self, t: usize, k: usize) -> u8 {
        self.y[t * self.k + k]
    }

    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        k <= t
    }

    pub fn counts(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for t in 0..self.t_c {
            for k in 0..self.k.min(t + 1) {
                if self.get(t, k) == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        (pos, neg)
    }

    /// Positive-class weight `#neg / #pos`, clamped to `[1, 100]`.
    pub fn positive_weight(&self) -> f64 {
        match self.counts() {
            (0, _) => 1.0,
            (pos, neg) => (neg as f64 / pos as f64).clamp(1.0, 100.0),
        }
    }
}

pub fn label_proposals(events: &[Interval], t_c: usize, k: usize) -> ProposalLabels {
    let mut y = vec![0u8; t_c * k];
    for t in 0..t_c {
        for j in 0..k.min(t + 1) {
            let iv = Interval { start: t - j, end: t };
            if events.iter().any(|e| tiou(&iv, e) > 0.5) {
                y[t * k + j] = 1;
            }
        }
    }
    ProposalLabels { t_c, k, y }
}

/// Ranking order: higher score, then earlier start, then shorter length.
pub fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start.cmp(&b.interval.start))
        .then(a.interval.len().cmp(&b.interval.len()))
}

/// Greedy temporal non-maximum suppression. Output is sorted by start, then end.
pub fn nms(mut proposals: Vec<Proposal>, threshold: f64, m_max: usize) -> Vec<Proposal> {
    proposals.sort_by(rank_order);
    let mut kept: Vec<Proposal> = Vec::new();
    for p in proposals {
        if kept.len() >= m_max {
            break;
        }
        if kept.iter().all(|q| tiou(&q.interval, &p.interval) <= threshold) {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| p.interval);
    kept
}

/// Top-`top_n` by confidence followed by [`nms`].
pub fn candidates_from_scores(scores: &ProposalScores, top_n: usize, threshold: f64, m_max: usize) -> Vec<Proposal> {
    let mut all = scores.all_proposals();
    all.sort_by(rank_order);
    all.truncate(top_n);
    nms(all, threshold, m_max)
}
