//! Policy-gradient fine-tuning of the captioner.
//!
//! For each video the detected event sequence is captioned `R_n` times by
//! sampling. Every sampled caption is rewarded against the ground-truth
//! caption of its best-overlapping event, with the greedy captions of those
//! reference events as the baseline. The surrogate loss
//! `-(1/R_n) Σ_r Σ_n R(d̂_n) log p(d̂_n)` has the policy gradient as its gradient.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use densecap_nn::{Graph, ParamStore, Var};

use super::rewards::{compute_rewards, match_reference_sequence, Scorer};
use super::{run_loop, EpochRecord, LoopSpec, Stage, TrainConfig, VideoData};
use crate::error::{Error, Result};
use crate::esgn::Esgn;
use crate::interval::Interval;
use crate::metrics::words;
use crate::rng;
use crate::scn::{BoundScn, Decode, EventContext, Scn};
use crate::synthdata::SyntheticVideo;

/// What a rollout samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RlMode {
    /// Sample captions on the greedily detected event sequence.
    Captions,
    /// Also sample the event sequence from the frozen selector for every rollout.
    Sequences,
}

/// Output of [`reinforce_loss`].
#[derive(Clone, Debug)]
pub struct Rollouts {
    pub loss: Var,
    /// Per rollout, per event: sampled caption ids.
    pub captions: Vec<Vec<Vec<usize>>>,
    /// Per rollout, per event: reward.
    pub rewards: Vec<Vec<f64>>,
}

/// Samples `n` caption sets for `events` and builds the surrogate loss.
/// `reward` maps the sampled captions of one rollout to one reward per event.
#[allow(clippy::too_many_arguments)]
pub fn reinforce_loss<R: Rng>(
    scn: &Scn,
    g: &Graph,
    b: &BoundScn,
    events: &[EventContext],
    n: usize,
    temperature: f64,
    rng: &mut R,
    mut reward: impl FnMut(&[Vec<usize>]) -> Result<Vec<f64>>,
) -> Result<Rollouts> {
    let mut terms = Vec::new();
    let mut captions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let decoded = scn.caption_sequence(b, g, events, |_| Decode::Sample { temperature }, rng)?;
        let caps: Vec<Vec<usize>> = decoded.iter().map(|d| d.tokens.clone()).collect();
        let r = reward(&caps)?;
        for (d, &ri) in decoded.iter().zip(&r) {
            terms.push(g.scale(d.logp, -ri / n as f64));
        }
        captions.push(caps);
        rewards.push(r);
    }
    let loss = if terms.is_empty() {
        g.constant_vec(vec![0.0])
    } else {
        g.add_n(&terms)
    };
    Ok(Rollouts {
        loss: g.sum(loss),
        captions,
        rewards,
    })
}

/// A training video with its frozen detection.
pub struct RlVideo<'a> {
    pub data: &'a VideoData,
    pub video: &'a SyntheticVideo,
    pub detected: Vec<Interval>,
}

/// Fine-tunes `store` (a supervised SCN checkpoint). Selection stays frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    scn: &Scn,
    store: &mut ParamStore,
    videos: &[RlVideo<'_>],
    selector: Option<(&Esgn, &ParamStore)>,
    scorer: &Scorer<'_>,
    cfg: &TrainConfig,
    mut after_epoch: impl FnMut(&ParamStore, usize) -> Result<BTreeMap<String, f64>>,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    if cfg.rl_mode == RlMode::Sequences && selector.is_none() {
        return Err(Error::Config("sequence sampling needs the selector".into()));
    }
    let label = |i: usize| videos[i].data.id.clone();
    let spec = LoopSpec {
        stage: Stage::Rl,
        epochs: cfg.rl_epochs,
        items: videos.len(),
        per_epoch: cfg.rl_videos,
        adam: cfg.adam(cfg.rl_lr),
        clip_norm: Some(cfg.clip_norm),
        seed: cfg.seed,
        label: &label,
    };
    // epoch statistics: (reward sum, reward square sum, sampled score sum, count, skipped videos)
    let stats = RefCell::new((0.0, 0.0, 0.0, 0usize, 0usize));
    run_loop(
        &spec,
        store,
        |g, i, epoch| {
            let v = &videos[i];
            let mut rng = rng::stream(cfg.seed, "rollouts", (epoch * videos.len() + i) as u64);
            let detected = match (cfg.rl_mode, selector) {
                (RlMode::Sequences, Some((esgn, es))) if !v.data.candidates.is_empty() => esgn
                    .sample_sequence(es, &v.data.candidates, v.data.t_c, &mut rng)?
                    .events
                    .iter()
                    .map(|p| p.interval)
                    .collect(),
                _ => v.detected.clone(),
            };
            if detected.is_empty() {
                stats.borrow_mut().4 += 1;
                return Ok(None);
            }
            let matched = match_reference_sequence(&detected, &v.data.gt);
            let ref_contexts: Vec<EventContext> = matched
                .iter()
                .map(|&(j, _)| v.data.gt_contexts[j].clone())
                .collect();
            let references: Vec<Vec<usize>> = matched.iter().map(|&(j, _)| words(&v.data.captions[j])).collect();
            let store_now = g.store().expect("training graph has a store");
            let baseline: Vec<Vec<usize>> = scn
                .greedy(store_now, &ref_contexts)?
                .iter()
                .map(|c| words(c))
                .collect();
            let contexts = detected
                .iter()
                .map(|&iv| v.data.context(v.video, iv))
                .collect::<Result<Vec<_>>>()?;
            let b = scn.bind(g)?;
            let out = reinforce_loss(scn, g, &b, &contexts, cfg.rollouts, cfg.temperature, &mut rng, |caps| {
                let sampled: Vec<Vec<usize>> = caps.iter().map(|c| words(c)).collect();
                let report = compute_rewards(&sampled, &baseline, &references, scorer);
                let mut s = stats.borrow_mut();
                s.0 += report.totals.iter().sum::<f64>();
                s.1 += report.totals.iter().map(|r| r * r).sum::<f64>();
                s.2 += report.sampled_scores.iter().sum::<f64>();
                s.3 += report.totals.len();
                Ok(report.totals)
            })?;
            Ok(Some(out.loss))
        },
        |s, epoch| {
            let (rsum, rsq, ssum, n, skipped) = stats.replace((0.0, 0.0, 0.0, 0, 0));
            let mut m = after_epoch(s, epoch)?;
            let mean = rsum / n.max(1) as f64;
            m.insert("reward_mean".into(), mean);
            m.insert("reward_std".into(), (rsq / n.max(1) as f64 - mean * mean).max(0.0).sqrt());
            m.insert("sampled_score_mean".into(), ssum / n.max(1) as f64);
            m.insert("skipped_videos".into(), skipped as f64);
            Ok(m)
        },
        log,
    )
}
