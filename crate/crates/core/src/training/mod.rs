//! Stage-wise training: proposals, then selection and captioning on frozen
//! proposals, then policy-gradient fine-tuning of the captioner.

mod rewards;
mod rl;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use densecap_nn::{Adam, AdamConfig, Graph, ParamStore, Var};

use crate::epn::{label_proposals, Epn, Proposal, ProposalScores};
use crate::error::{Error, Result};
use crate::esgn::Esgn;
use crate::interval::Interval;
use crate::rng;
use crate::scn::{EventContext, Scn};
use crate::synthdata::SyntheticVideo;

pub use rewards::{compute_rewards, match_reference_sequence, paragraph, RewardMetric, RewardReport, Scorer};
pub use rl::{reinforce_loss, train_rl, RlMode, RlVideo, Rollouts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Epn,
    Esgn,
    Scn,
    Rl,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Epn => "epn",
            Stage::Esgn => "esgn",
            Stage::Scn => "scn",
            Stage::Rl => "rl",
        }
    }

    /// Checkpoints (by stage) that must exist before this stage can run.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Epn => &[],
            Stage::Esgn | Stage::Scn => &[Stage::Epn],
            Stage::Rl => &[Stage::Epn, Stage::Esgn, Stage::Scn],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epn" => Ok(Stage::Epn),
            "esgn" => Ok(Stage::Esgn),
            "scn" => Ok(Stage::Scn),
            "rl" => Ok(Stage::Rl),
            _ => Err(Error::Config(format!("unknown stage `{s}` (expected epn, esgn, scn or rl)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_scale: f64,
    pub epn_epochs: usize,
    pub esgn_epochs: usize,
    pub scn_epochs: usize,
    pub rl_epochs: usize,
    pub rl_lr: f64,
    pub rollouts: usize,
    pub temperature: f64,
    pub clip_norm: f64,
    pub reward: RewardMetric,
    pub rl_mode: RlMode,
    /// Videos visited per RL epoch; 0 means the whole training split.
    pub rl_videos: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_scale: 0.08,
            epn_epochs: 20,
            esgn_epochs: 20,
            scn_epochs: 30,
            rl_epochs: 30,
            rl_lr: 5e-5,
            rollouts: 16,
            temperature: 1.0,
            clip_norm: 5.0,
            reward: RewardMetric::Cider,
            rl_mode: RlMode::Captions,
            rl_videos: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidSpec {
                field: format!("train.{field}"),
                reason: reason.to_string(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.rl_lr > 0.0 && self.rl_lr.is_finite()) {
            return bad("rl_lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "betas must lie in [0, 1)");
        }
        if self.rollouts == 0 {
            return bad("rollouts", "must be positive");
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad("temperature", "must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm", "must be positive");
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    /// Mean per-video training loss.
    pub loss: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// Everything later stages need from one video once the proposal network is frozen.
#[derive(Clone, Debug)]
pub struct VideoData {
    pub id: String,
    pub t_c: usize,
    pub scores: ProposalScores,
    pub candidates: Vec<Proposal>,
    pub gt: Vec<Interval>,
    /// Ground-truth caption ids, each ending in EOS.
    pub captions: Vec<Vec<usize>>,
    /// Ground-truth events with `Vis` from the frozen proposal network.
    pub gt_contexts: Vec<EventContext>,
}

impl VideoData {
    /// Context of an arbitrary interval of this video.
    pub fn context(&self, video: &SyntheticVideo, iv: Interval) -> Result<EventContext> {
        EventContext::from_video(&video.features, iv, self.scores.vis(iv))
    }
}

/// Runs the frozen proposal network over `videos` in parallel.
pub fn prepare(epn: &Epn, store: &ParamStore, videos: &[&SyntheticVideo]) -> Result<Vec<VideoData>> {
    videos
        .par_iter()
        .map(|v| {
            let scores = epn.score_proposals(store, &v.features)?;
            let c = &epn.config;
            let candidates = crate::epn::candidates_from_scores(&scores, c.top_n, c.nms_threshold, c.m_max);
            let gt = v.intervals();
            let gt_contexts = gt
                .iter()
                .map(|&iv| EventContext::from_video(&v.features, iv, scores.vis(iv)))
                .collect::<Result<Vec<_>>>()?;
            Ok(VideoData {
                id: v.id.clone(),
                t_c: v.t_c(),
                candidates,
                gt,
                captions: v.events.iter().map(|e| e.caption.ids().to_vec()).collect(),
                gt_contexts,
                scores,
            })
        })
        .collect()
}

fn check_finite(stage: Stage, epoch: usize, item: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{} epoch {epoch}: non-finite loss {value} on {item}",
            stage.name()
        )))
    }
}

/// Options for the shared per-video training loop.
pub(crate) struct LoopSpec<'a> {
    pub stage: Stage,
    pub epochs: usize,
    pub items: usize,
    /// Items visited per epoch (a seeded sample without replacement); `items` when 0.
    pub per_epoch: usize,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub label: &'a dyn Fn(usize) -> String,
}

/// Per-item Adam updates with seeded shuffling. `loss` may return `None` to skip an item;
/// `after_epoch` adds metrics to the epoch record.
pub(crate) fn run_loop(
    spec: &LoopSpec<'_>,
    store: &mut ParamStore,
    mut loss: impl FnMut(&Graph<'_>, usize, usize) -> Result<Option<Var>>,
    mut after_epoch: impl FnMut(&ParamStore, usize) -> Result<BTreeMap<String, f64>>,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    let mut adam = Adam::new(spec.adam);
    let mut order: Vec<usize> = (0..spec.items).collect();
    for epoch in 0..spec.epochs {
        let mut shuffle = rng::stream(spec.seed, &format!("shuffle-{}", spec.stage.name()), epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let visit = if spec.per_epoch == 0 {
            &order[..]
        } else {
            &order[..spec.per_epoch.min(order.len())]
        };
        let (mut total, mut counted) = (0.0, 0usize);
        for &i in visit {
            let grads = {
                let g = Graph::new(store);
                let Some(l) = loss(&g, i, epoch)? else {
                    continue;
                };
                let value = g.item(l);
                check_finite(spec.stage, epoch, &(spec.label)(i), value)?;
                total += value;
                counted += 1;
                g.backward(l)?
            };
            store.zero_grad();
            store.accumulate(&grads)?;
            if let Some(max) = spec.clip_norm {
                store.clip_grad_norm(max);
            }
            adam.step(store);
            if !store.all_finite() {
                return Err(Error::Numeric(format!(
                    "{} epoch {epoch}: parameters became non-finite after {}",
                    spec.stage.name(),
                    (spec.label)(i)
                )));
            }
        }
        let metrics = after_epoch(store, epoch)?;
        log.push(EpochRecord {
            stage: spec.stage.name().to_string(),
            epoch,
            loss: if counted > 0 { total / counted as f64 } else { 0.0 },
            metrics,
        });
        log::info!(
            "{} epoch {epoch}: loss {:.4}",
            spec.stage.name(),
            log.last().expect("just pushed").loss
        );
    }
    Ok(())
}

/// Candidate recall at tIoU 0.5 for prepared videos.
pub fn candidate_recall(data: &[VideoData], theta: f64) -> f64 {
    let preds: Vec<Vec<Interval>> = data
        .iter()
        .map(|d| d.candidates.iter().map(|p| p.interval).collect())
        .collect();
    let gt: Vec<Vec<Interval>> = data.iter().map(|d| d.gt.clone()).collect();
    let (mut s, n) = (0.0, preds.len().max(1) as f64);
    for (p, g) in preds.iter().zip(&gt) {
        let hit = g
            .iter()
            .filter(|e| p.iter().any(|q| crate::interval::tiou(e, q) >= theta))
            .count();
        s += hit as f64 / g.len().max(1) as f64;
    }
    s / n
}

pub fn train_epn(
    epn: &Epn,
    store: &mut ParamStore,
    train: &[&SyntheticVideo],
    val: &[&SyntheticVideo],
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    let labels: Vec<_> = train
        .iter()
        .map(|v| label_proposals(&v.intervals(), v.t_c(), epn.config.k))
        .collect();
    let label = |i: usize| train[i].id.clone();
    let spec = LoopSpec {
        stage: Stage::Epn,
        epochs: cfg.epn_epochs,
        items: train.len(),
        per_epoch: 0,
        adam: cfg.adam(cfg.lr),
        clip_norm: None,
        seed: cfg.seed,
        label: &label,
    };
    run_loop(
        &spec,
        store,
        |g, i, _| Ok(Some(epn.loss(g, &train[i].features, &labels[i])?)),
        |s, _| {
            let data = prepare(epn, s, val)?;
            Ok(BTreeMap::from([("val_recall@0.5".to_string(), candidate_recall(&data, 0.5))]))
        },
        log,
    )
}

pub fn train_esgn(
    esgn: &Esgn,
    store: &mut ParamStore,
    train: &[VideoData],
    val: &[VideoData],
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    let label = |i: usize| train[i].id.clone();
    let spec = LoopSpec {
        stage: Stage::Esgn,
        epochs: cfg.esgn_epochs,
        items: train.len(),
        per_epoch: 0,
        adam: cfg.adam(cfg.lr),
        clip_norm: None,
        seed: cfg.seed,
        label: &label,
    };
    run_loop(
        &spec,
        store,
        |g, i, _| {
            let d = &train[i];
            if d.candidates.is_empty() {
                return Ok(None);
            }
            Ok(Some(esgn.loss(g, &d.candidates, &d.gt, d.t_c)?))
        },
        |s, _| {
            let counts = val
                .par_iter()
                .map(|d| match esgn.select_sequence(s, &d.candidates, d.t_c) {
                    Ok(seq) => Ok(seq.events.len() as f64),
                    Err(Error::EmptyCandidates) => Ok(0.0),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = counts.iter().sum::<f64>() / counts.len().max(1) as f64;
            Ok(BTreeMap::from([("val_selected".to_string(), mean)]))
        },
        log,
    )
}

/// Teacher-forced per-token NLL over prepared videos: `(total nll, tokens)`.
pub fn caption_nll(scn: &Scn, store: &ParamStore, data: &[VideoData]) -> Result<(f64, usize)> {
    let parts = data
        .par_iter()
        .map(|d| {
            let g = Graph::inference(store);
            let caps: Vec<&[usize]> = d.captions.iter().map(Vec::as_slice).collect();
            let nll = scn.nll(&g, &d.gt_contexts, &caps)?;
            Ok((g.item(nll), d.captions.iter().map(Vec::len).sum::<usize>()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y)))
}

pub fn train_scn(
    scn: &Scn,
    store: &mut ParamStore,
    train: &[VideoData],
    val: &[VideoData],
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    let label = |i: usize| train[i].id.clone();
    let spec = LoopSpec {
        stage: Stage::Scn,
        epochs: cfg.scn_epochs,
        items: train.len(),
        per_epoch: 0,
        adam: cfg.adam(cfg.lr),
        clip_norm: None,
        seed: cfg.seed ^ u64::from(!scn.contextual),
        label: &label,
    };
    let tag = if scn.contextual { "" } else { "ind_" };
    run_loop(
        &spec,
        store,
        |g, i, _| {
            let d = &train[i];
            let caps: Vec<&[usize]> = d.captions.iter().map(Vec::as_slice).collect();
            Ok(Some(scn.nll(g, &d.gt_contexts, &caps)?))
        },
        |s, _| {
            let (nll, tokens) = caption_nll(scn, s, val)?;
            Ok(BTreeMap::from([(
                format!("{tag}val_perplexity"),
                (nll / tokens.max(1) as f64).exp(),
            )]))
        },
        log,
    )
}
