//! Synthetic episode corpus.
//!
//! Each video is a sequence of segment feature vectors. Events are drawn
//! from a library of latent templates: a template owns a mean feature
//! vector, a fixed duration and an action phrase. Segments inside an event
//! carry the template mean; every segment carries the video's subject
//! signature plus Gaussian noise.

mod format;
mod grammar;
mod vocab;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use densecap_nn::Tensor;

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::rng;

pub use format::{read_corpus, read_corpus_from, write_corpus, write_corpus_to, FORMAT_NAME, FORMAT_VERSION};
pub use vocab::{CaptionTokens, Vocabulary, BOS, EOS, PAD, RESERVED};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub num_videos: usize,
    /// Shortest video; shorter layouts are padded with background segments.
    pub t_c_min: usize,
    pub t_c_max: usize,
    pub d_feat: usize,
    pub events_min: usize,
    pub events_max: usize,
    pub event_len_min: usize,
    pub event_len_max: usize,
    /// Per-event random extension of the template duration, in segments.
    pub duration_jitter: usize,
    pub gap_max: usize,
    pub num_templates: usize,
    pub noise: f64,
    pub template_scale: f64,
    pub subject_signal: f64,
    pub overlap_prob: f64,
    pub pronoun_prob: f64,
    pub location_prob: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            num_videos: 500,
            t_c_min: 8,
            t_c_max: 64,
            d_feat: 16,
            events_min: 2,
            events_max: 4,
            event_len_min: 2,
            event_len_max: 8,
            duration_jitter: 0,
            gap_max: 4,
            num_templates: 12,
            noise: 0.5,
            template_scale: 3.0,
            subject_signal: 1.0,
            overlap_prob: 0.2,
            pronoun_prob: 0.8,
            location_prob: 0.5,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidSpec {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("num_videos", self.num_videos),
            ("t_c_min", self.t_c_min),
            ("t_c_max", self.t_c_max),
            ("d_feat", self.d_feat),
            ("events_min", self.events_min),
            ("events_max", self.events_max),
            ("event_len_min", self.event_len_min),
            ("event_len_max", self.event_len_max),
            ("gap_max", self.gap_max),
            ("num_templates", self.num_templates),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.t_c_min > self.t_c_max {
            return Err(invalid("t_c_min", "exceeds t_c_max"));
        }
        if self.events_min > self.events_max {
            return Err(invalid("events_min", "exceeds events_max"));
        }
        if self.event_len_min > self.event_len_max {
            return Err(invalid("event_len_min", "exceeds event_len_max"));
        }
        for (field, v) in [
            ("noise", self.noise),
            ("template_scale", self.template_scale),
            ("subject_signal", self.subject_signal),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        for (field, p) in [
            ("overlap_prob", self.overlap_prob),
            ("pronoun_prob", self.pronoun_prob),
            ("location_prob", self.location_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, "must lie in [0, 1]"));
            }
        }
        if self.num_templates > grammar::ACTIONS.len() {
            return Err(invalid(
                "num_templates",
                format!("the grammar defines only {} templates", grammar::ACTIONS.len()),
            ));
        }
        if self.num_templates < self.events_max {
            return Err(invalid(
                "num_templates",
                format!(
                    "{} templates cannot fill {} distinct events per video",
                    self.num_templates, self.events_max
                ),
            ));
        }
        // worst case: every event at maximum length with maximal gaps
        let longest = self.event_len_max + self.duration_jitter;
        let worst = self.gap_max + self.events_max * (longest + self.gap_max) + self.gap_max;
        if worst > self.t_c_max {
            return Err(invalid(
                "t_c_max",
                format!("layouts may need up to {worst} segments"),
            ));
        }
        Ok(())
    }

    /// Mean of the uniform event-count distribution.
    pub fn mean_events(&self) -> f64 {
        (self.events_min + self.events_max) as f64 / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub interval: Interval,
    pub caption: CaptionTokens,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    /// `[T_c, D_feat]`.
    pub features: Tensor,
    pub events: Vec<GroundTruthEvent>,
}

impl SyntheticVideo {
    pub fn t_c(&self) -> usize {
        self.features.rows()
    }

    pub fn d_feat(&self) -> usize {
        self.features.cols()
    }

    pub fn segment(&self, t: usize) -> &[f64] {
        self.features.row(t)
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.events.iter().map(|e| e.interval).collect()
    }

    /// Checks the structural invariants of a video against a vocabulary size.
    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        let bad = |reason: String| Error::CorpusVideo {
            id: self.id.clone(),
            reason,
        };
        if self.features.rank() != 2 {
            return Err(bad("features must be a matrix".into()));
        }
        if self.events.is_empty() {
            return Err(bad("no events".into()));
        }
        let t_c = self.t_c();
        for (k, e) in self.events.iter().enumerate() {
            if e.interval.end >= t_c {
                return Err(bad(format!("event {k} ends at {} but T_c is {t_c}", e.interval.end)));
            }
            if k > 0 && self.events[k - 1].interval > e.interval {
                return Err(bad("events are not sorted by start".into()));
            }
            if let Some(&id) = e.caption.ids().iter().find(|&&i| i >= vocab_len) {
                return Err(bad(format!("unknown token index {id}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub vocab: Vocabulary,
    pub videos: Vec<SyntheticVideo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    /// Fixed 80/20 assignment by FNV-1a hash of the video id.
    pub fn of(id: &str) -> Split {
        if rng::fnv1a(id.as_bytes()).is_multiple_of(5) {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub videos: usize,
    pub mean_events: f64,
    pub mean_t_c: f64,
    pub vocab_size: usize,
    pub overlapping_pairs: usize,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&SyntheticVideo> {
        self.videos.iter().filter(|v| Split::of(&v.id) == split).collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let n = self.videos.len().max(1) as f64;
        let events: usize = self.videos.iter().map(|v| v.events.len()).sum();
        let t: usize = self.videos.iter().map(|v| v.t_c()).sum();
        let overlapping_pairs = self
            .videos
            .iter()
            .map(|v| {
                v.events
                    .windows(2)
                    .filter(|w| w[0].interval.intersection(&w[1].interval) > 0)
                    .count()
            })
            .sum();
        CorpusStats {
            videos: self.videos.len(),
            mean_events: events as f64 / n,
            mean_t_c: t as f64 / n,
            vocab_size: self.vocab.len(),
            overlapping_pairs,
        }
    }

    /// Number of occurrences of each vocabulary id across all captions.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.len()];
        for v in &self.videos {
            for e in &v.events {
                for &i in e.caption.ids() {
                    counts[i] += 1;
                }
            }
        }
        counts
    }
}

struct Template {
    mean: Vec<f64>,
    duration: usize,
    action: usize,
}

fn random_direction<R: Rng>(rng: &mut R, d: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * norm / len).collect()
}

fn build_vocab(spec: &CorpusSpec) -> Vocabulary {
    let mut words: Vec<&str> = vec![grammar::THEN, grammar::STOP];
    for s in grammar::SUBJECTS {
        words.extend(s.indefinite);
        words.extend(s.definite);
        words.push(s.pronoun);
    }
    for a in &grammar::ACTIONS[..spec.num_templates] {
        words.extend([a.verb, a.det, a.object]);
        words.extend(grammar::LOCATIONS[a.location]);
    }
    Vocabulary::from_words(words)
}

fn realize<R: Rng>(
    rng: &mut R,
    spec: &CorpusSpec,
    vocab: &Vocabulary,
    subject: usize,
    action: usize,
    first: bool,
) -> CaptionTokens {
    let s = &grammar::SUBJECTS[subject];
    let a = &grammar::ACTIONS[action];
    let mut words: Vec<&str> = Vec::with_capacity(10);
    if first {
        words.extend(s.indefinite);
    } else {
        words.push(grammar::THEN);
        if rng.random_bool(spec.pronoun_prob) {
            words.push(s.pronoun);
        } else {
            words.extend(s.definite);
        }
    }
    words.extend([a.verb, a.det, a.object]);
    if rng.random_bool(spec.location_prob) {
        words.extend(grammar::LOCATIONS[a.location]);
    }
    words.push(grammar::STOP);
    let mut ids: Vec<usize> = words
        .iter()
        .map(|w| vocab.id(w).expect("grammar words are in the vocabulary"))
        .collect();
    ids.push(EOS);
    CaptionTokens::new(ids).expect("grammar output is a valid caption")
}

fn generate_video(
    spec: &CorpusSpec,
    vocab: &Vocabulary,
    templates: &[Template],
    subjects: &[Vec<f64>],
    index: usize,
) -> SyntheticVideo {
    let mut rng = rng::stream(spec.seed, "video", index as u64);
    let n = rng.random_range(spec.events_min..=spec.events_max);
    let chosen = sample(&mut rng, templates.len(), n).into_vec();
    let subject = rng.random_range(0..grammar::SUBJECTS.len());

    let mut layout: Vec<(Interval, usize)> = Vec::with_capacity(n);
    let mut frontier = rng.random_range(1..=spec.gap_max);
    for (k, &tau) in chosen.iter().enumerate() {
        let len = templates[tau].duration + rng.random_range(0..=spec.duration_jitter);
        let start = match layout.last() {
            Some(&(prev, _)) if rng.random_bool(spec.overlap_prob) && prev.len() >= 2 => {
                // start inside the second half of the previous event
                let back = rng.random_range(0..=(prev.len() - 1) / 2);
                prev.end - back
            }
            _ if k == 0 => frontier,
            _ => frontier + rng.random_range(1..=spec.gap_max),
        };
        let iv = Interval::new(start, start + len - 1).expect("positive length");
        frontier = frontier.max(iv.end + 1);
        layout.push((iv, tau));
    }
    let t_c = (frontier + rng.random_range(1..=spec.gap_max)).max(spec.t_c_min);
    debug_assert!(t_c <= spec.t_c_max);

    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let sig = &subjects[subject];
    let mut data = Vec::with_capacity(t_c * spec.d_feat);
    for t in 0..t_c {
        for d in 0..spec.d_feat {
            let mut x = spec.subject_signal * sig[d];
            for &(iv, tau) in &layout {
                if iv.start <= t && t <= iv.end {
                    x += templates[tau].mean[d];
                }
            }
            if spec.noise > 0.0 {
                x += noise.sample(&mut rng);
            }
            data.push(x);
        }
    }
    let events = layout
        .iter()
        .enumerate()
        .map(|(k, &(interval, tau))| GroundTruthEvent {
            interval,
            caption: realize(&mut rng, spec, vocab, subject, templates[tau].action, k == 0),
        })
        .collect();
    SyntheticVideo {
        id: format!("vid_{index:04}"),
        features: Tensor::matrix(t_c, spec.d_feat, data).expect("consistent dims"),
        events,
    }
}

/// Builds the full corpus. Deterministic in `spec.seed`; videos are generated in parallel
/// from independent per-video streams.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = build_vocab(spec);
    let mut trng = rng::stream(spec.seed, "templates", 0);
    let templates: Vec<Template> = (0..spec.num_templates)
        .map(|action| Template {
            mean: random_direction(&mut trng, spec.d_feat, spec.template_scale),
            duration: trng.random_range(spec.event_len_min..=spec.event_len_max),
            action,
        })
        .collect();
    let mut srng = rng::stream(spec.seed, "subjects", 0);
    let subjects: Vec<Vec<f64>> = (0..grammar::SUBJECTS.len())
        .map(|_| random_direction(&mut srng, spec.d_feat, 1.0))
        .collect();
    let videos = (0..spec.num_videos)
        .into_par_iter()
        .map(|i| generate_video(spec, &vocab, &templates, &subjects, i))
        .collect();
    Ok(Corpus {
        spec: spec.clone(),
        vocab,
        videos,
    })
}
