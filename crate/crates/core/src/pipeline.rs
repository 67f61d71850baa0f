//! Model construction, checkpoint I/O, per-video generation and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use densecap_nn::{checkpoint, ParamStore};

use crate::config::ModelConfig;
use crate::epn::{Epn, Proposal};
use crate::error::{Error, Result};
use crate::esgn::{Esgn, EventSequence};
use crate::interval::Interval;
use crate::metrics::{dense_caption_scores, detection_scores, words, CaptionScore, Cider, DenseCaption, DetectionScore};
use crate::rng;
use crate::scn::Scn;
use crate::synthdata::{Corpus, SyntheticVideo, Vocabulary};
use crate::training::{Stage, VideoData};

#[derive(Clone, Debug)]
pub struct Models {
    pub config: ModelConfig,
    pub epn: Epn,
    pub esgn: Esgn,
    pub scn: Scn,
    /// Captioner without episode context, for the independent ablations.
    pub scn_ind: Scn,
}

impl Models {
    /// `config` must already be resolved against the corpus.
    pub fn new(config: &ModelConfig) -> Self {
        Models {
            config: config.clone(),
            epn: Epn::new(config.epn.clone()),
            esgn: Esgn::new(config.esgn.clone()),
            scn: Scn::new(config.scn.clone(), true),
            scn_ind: Scn::new(config.scn.clone(), false),
        }
    }

    pub fn init_epn(&self, seed: u64, scale: f64) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        self.epn.init(&mut s, scale, &mut rng::stream(seed, "init-epn", 0))?;
        Ok(s)
    }

    pub fn init_esgn(&self, seed: u64, scale: f64) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        self.esgn.init(&mut s, scale, &mut rng::stream(seed, "init-esgn", 0))?;
        Ok(s)
    }

    pub fn init_scn(&self, seed: u64, scale: f64, contextual: bool) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        let (model, purpose) = if contextual {
            (&self.scn, "init-scn")
        } else {
            (&self.scn_ind, "init-scn-ind")
        };
        model.init(&mut s, scale, &mut rng::stream(seed, purpose, 0))?;
        Ok(s)
    }
}

/// Checkpoint files inside an output directory.
pub fn checkpoint_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.ckpt"))
}

pub fn stage_checkpoint(out_dir: &Path, stage: Stage) -> PathBuf {
    checkpoint_path(out_dir, stage.name())
}

pub const IND_CHECKPOINT: &str = "scn_ind";

pub fn checkpoint_meta(stage: &str, vocab: &Vocabulary, model: &ModelConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("stage".to_string(), stage.to_string()),
        ("vocab".to_string(), vocab.fingerprint()),
        ("model".to_string(), serde_json::to_string(model).expect("model config serializes")),
    ])
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &BTreeMap<String, String>) -> Result<()> {
    Ok(checkpoint::save(path, store, meta)?)
}

/// Loads a checkpoint and checks it was trained on the same vocabulary.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(path.to_path_buf()));
    }
    let (store, meta) = checkpoint::load(path)?;
    if meta.get("vocab") != Some(&vocab.fingerprint()) {
        return Err(Error::VocabMismatch);
    }
    Ok(store)
}

/// Which captioner and which events are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every candidate captioned independently.
    EpnInd,
    /// Selected events captioned independently.
    EsgnInd,
    /// Selected events captioned in sequence.
    EsgnScn,
    /// As `EsgnScn`, with the policy-gradient fine-tuned captioner.
    EsgnScnRl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::EpnInd, Variant::EsgnInd, Variant::EsgnScn, Variant::EsgnScnRl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EpnInd => "epn-ind",
            Variant::EsgnInd => "esgn-ind",
            Variant::EsgnScn => "esgn-scn",
            Variant::EsgnScnRl => "esgn-scn-rl",
        }
    }

    pub fn contextual(self) -> bool {
        matches!(self, Variant::EsgnScn | Variant::EsgnScnRl)
    }

    /// Checkpoint holding the captioner parameters.
    pub fn captioner_checkpoint(self) -> &'static str {
        match self {
            Variant::EpnInd | Variant::EsgnInd => IND_CHECKPOINT,
            Variant::EsgnScn => "scn",
            Variant::EsgnScnRl => "rl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected epn-ind, esgn-ind, esgn-scn or esgn-scn-rl)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionedEvent {
    pub interval: Interval,
    pub score: f64,
    pub order: usize,
    /// Caption ids as generated, including EOS when emitted.
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoOutput {
    pub id: String,
    pub candidates: Vec<Proposal>,
    pub events: Vec<CaptionedEvent>,
}

/// Selected event sequence, empty when there are no candidates.
pub fn detect(models: &Models, esgn_store: &ParamStore, data: &VideoData) -> Result<EventSequence> {
    match models.esgn.select_sequence(esgn_store, &data.candidates, data.t_c) {
        Err(Error::EmptyCandidates) => Ok(EventSequence::empty()),
        other => other,
    }
}

/// Runs selection and captioning per video. `scn_store` must match the captioner of `variant`.
pub fn generate(
    models: &Models,
    esgn_store: &ParamStore,
    scn_store: &ParamStore,
    variant: Variant,
    data: &[VideoData],
    videos: &[&SyntheticVideo],
) -> Result<Vec<VideoOutput>> {
    data.par_iter()
        .zip(videos.par_iter())
        .map(|(d, v)| {
            let events: Vec<Proposal> = match variant {
                Variant::EpnInd => d.candidates.clone(),
                _ => detect(models, esgn_store, d)?.events,
            };
            let scn = if variant.contextual() { &models.scn } else { &models.scn_ind };
            let contexts = events
                .iter()
                .map(|p| d.context(v, p.interval))
                .collect::<Result<Vec<_>>>()?;
            let captions = scn.greedy(scn_store, &contexts)?;
            Ok(VideoOutput {
                id: d.id.clone(),
                candidates: d.candidates.clone(),
                events: events
                    .iter()
                    .zip(captions)
                    .enumerate()
                    .map(|(order, (p, tokens))| CaptionedEvent {
                        interval: p.interval,
                        score: p.score,
                        order,
                        tokens,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// CIDEr document frequencies from the ground-truth captions of `videos`.
pub fn cider_for(videos: &[&SyntheticVideo]) -> Result<Cider> {
    let docs: Vec<Vec<usize>> = videos
        .iter()
        .flat_map(|v| v.events.iter().map(|e| e.caption.words().to_vec()))
        .collect();
    Cider::new(docs.iter().map(Vec::as_slice))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: usize,
    pub matching: String,
    pub mean_gt_events: f64,
    pub mean_candidates: f64,
    pub mean_selected: f64,
    /// Candidates before selection.
    pub candidates: DetectionScore,
    /// Selected (captioned) events.
    pub detection: DetectionScore,
    pub captions: CaptionScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_video: Option<BTreeMap<String, CaptionScore>>,
}

/// Scores outputs against the corpus videos they name. Outputs are matched by id,
/// so their order does not matter.
pub fn evaluate(outputs: &[VideoOutput], videos: &[&SyntheticVideo], cider: &Cider, per_video: bool) -> Result<EvalReport> {
    let by_id: HashMap<&str, &SyntheticVideo> = videos.iter().map(|v| (v.id.as_str(), *v)).collect();
    let mut sorted: Vec<&VideoOutput> = outputs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for w in sorted.windows(2) {
        if w[0].id == w[1].id {
            return Err(Error::Dump(format!("duplicate video id `{}`", w[0].id)));
        }
    }
    let gt_videos: Vec<&SyntheticVideo> = sorted
        .iter()
        .map(|o| {
            by_id
                .get(o.id.as_str())
                .copied()
                .ok_or_else(|| Error::Dump(format!("video `{}` is not in the evaluated split", o.id)))
        })
        .collect::<Result<_>>()?;
    let gt_iv: Vec<Vec<Interval>> = gt_videos.iter().map(|v| v.intervals()).collect();
    let cand_iv: Vec<Vec<Interval>> = sorted
        .iter()
        .map(|o| o.candidates.iter().map(|p| p.interval).collect())
        .collect();
    let sel_iv: Vec<Vec<Interval>> = sorted
        .iter()
        .map(|o| o.events.iter().map(|e| e.interval).collect())
        .collect();
    let gt_caps: Vec<Vec<DenseCaption>> = gt_videos
        .iter()
        .map(|v| {
            v.events
                .iter()
                .map(|e| DenseCaption {
                    interval: e.interval,
                    words: e.caption.words().to_vec(),
                })
                .collect()
        })
        .collect();
    let pred_caps: Vec<Vec<DenseCaption>> = sorted
        .iter()
        .map(|o| {
            o.events
                .iter()
                .map(|e| DenseCaption {
                    interval: e.interval,
                    words: words(&e.tokens),
                })
                .collect()
        })
        .collect();
    let n = sorted.len().max(1) as f64;
    let per_video = per_video.then(|| {
        sorted
            .iter()
            .enumerate()
            .map(|(i, o)| {
                (
                    o.id.clone(),
                    dense_caption_scores(&pred_caps[i..=i], &gt_caps[i..=i], cider),
                )
            })
            .collect()
    });
    Ok(EvalReport {
        videos: sorted.len(),
        matching: "many-to-one: a prediction is scored against every GT event with tIoU >= threshold".into(),
        mean_gt_events: gt_iv.iter().map(Vec::len).sum::<usize>() as f64 / n,
        mean_candidates: cand_iv.iter().map(Vec::len).sum::<usize>() as f64 / n,
        mean_selected: sel_iv.iter().map(Vec::len).sum::<usize>() as f64 / n,
        candidates: detection_scores(&cand_iv, &gt_iv),
        detection: detection_scores(&sel_iv, &gt_iv),
        captions: dense_caption_scores(&pred_caps, &gt_caps, cider),
        per_video,
    })
}

/// Fraction of captions after the first event of a video that use a pronoun.
pub fn pronoun_rate(outputs: &[VideoOutput], vocab: &Vocabulary) -> f64 {
    let pronouns: Vec<usize> = ["he", "she", "they", "it"]
        .iter()
        .filter_map(|w| vocab.id(w))
        .collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for o in outputs {
        for e in o.events.iter().filter(|e| e.order >= 1) {
            total += 1;
            if words(&e.tokens).iter().any(|t| pronouns.contains(t)) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Train/val views of a corpus.
pub fn split_videos(corpus: &Corpus) -> (Vec<&SyntheticVideo>, Vec<&SyntheticVideo>) {
    use crate::synthdata::Split;
    (corpus.split(Split::Train), corpus.split(Split::Val))
}
