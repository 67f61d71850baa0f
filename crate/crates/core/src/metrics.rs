//! Detection and captioning metrics.
//!
//! Captions are token-id slices without EOS. Scores are averaged over videos
//! first, then over the tIoU thresholds.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{tiou, Interval};
use crate::synthdata::EOS;

pub const THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

/// Word ids of a caption: everything before the first EOS, reserved ids dropped.
pub fn words(ids: &[usize]) -> Vec<usize> {
    ids.iter().take_while(|&&i| i != EOS).filter(|&&i| i > EOS).copied().collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub recall: [f64; 4],
    pub precision: [f64; 4],
    pub avg_recall: f64,
    pub avg_precision: f64,
}

/// Recall and precision at each threshold. A video without predictions scores 0 on both.
pub fn detection_scores(pred: &[Vec<Interval>], gt: &[Vec<Interval>]) -> DetectionScore {
    assert_eq!(pred.len(), gt.len(), "one prediction list per video");
    let mut recall = [0.0; 4];
    let mut precision = [0.0; 4];
    for (i, &theta) in THRESHOLDS.iter().enumerate() {
        let hit = |a: &Interval, set: &[Interval]| set.iter().any(|b| tiou(a, b) >= theta);
        recall[i] = mean(pred.iter().zip(gt).map(|(p, g)| {
            if g.is_empty() {
                0.0
            } else {
                g.iter().filter(|e| hit(e, p)).count() as f64 / g.len() as f64
            }
        }));
        precision[i] = mean(pred.iter().zip(gt).map(|(p, g)| {
            if p.is_empty() {
                0.0
            } else {
                p.iter().filter(|e| hit(e, g)).count() as f64 / p.len() as f64
            }
        }));
    }
    DetectionScore {
        avg_recall: mean(recall),
        avg_precision: mean(precision),
        recall,
        precision,
    }
}

// ordered, so floating-point sums over n-grams are reproducible across processes
fn ngram_counts(tokens: &[usize], n: usize) -> BTreeMap<&[usize], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU@N without smoothing: any zero n-gram precision gives 0.
pub fn bleu(candidate: &[usize], references: &[&[usize]], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, k)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|m| m.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    // closest reference length, shorter on ties
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(c), l))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / n as f64).exp()
}

/// CIDEr with document frequencies from a fixed reference corpus.
///
/// `idf(g) = ln((N + 1) / max(df(g), 1))` for `N` documents, so n-grams that
/// occur in every document keep a small positive weight.
#[derive(Clone, Debug)]
pub struct Cider {
    n_docs: usize,
    df: HashMap<Vec<usize>, usize>,
}

impl Cider {
    pub const N_MAX: usize = 4;

    pub fn new<'a>(documents: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let mut df: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in documents {
            n_docs += 1;
            for n in 1..=Self::N_MAX {
                for g in ngram_counts(doc, n).into_keys() {
                    *df.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        if n_docs == 0 {
            return Err(Error::Numeric("CIDEr needs a non-empty reference corpus".into()));
        }
        Ok(Cider { n_docs, df })
    }

    pub fn idf(&self, gram: &[usize]) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0).max(1);
        ((self.n_docs + 1) as f64 / df as f64).ln()
    }

    fn vector<'t>(&self, tokens: &'t [usize], n: usize) -> BTreeMap<&'t [usize], f64> {
        ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| (g, c as f64 * self.idf(g)))
            .collect()
    }

    /// Score in `[0, 10]`.
    pub fn score(&self, candidate: &[usize], references: &[&[usize]]) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=Self::N_MAX {
            let vc = self.vector(candidate, n);
            let nc = vc.values().map(|x| x * x).sum::<f64>().sqrt();
            let mut per_ref = 0.0;
            for r in references {
                let vr = self.vector(r, n);
                let nr = vr.values().map(|x| x * x).sum::<f64>().sqrt();
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let dot: f64 = vc.iter().filter_map(|(g, x)| vr.get(g).map(|y| x * y)).sum();
                per_ref += dot / (nc * nr);
            }
            total += per_ref / references.len() as f64;
        }
        10.0 * total / Self::N_MAX as f64
    }
}

/// Caption metrics at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub tiou: f64,
    pub bleu: [f64; 4],
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionScore {
    /// Threshold-averaged BLEU@1..4.
    pub bleu: [f64; 4],
    /// Threshold-averaged CIDEr.
    pub cider: f64,
    pub per_threshold: Vec<ThresholdScore>,
}

/// A localized caption, predicted or ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseCaption {
    pub interval: Interval,
    pub words: Vec<usize>,
}

/// Scores every prediction against the GT captions whose events reach tIoU ≥ θ with it
/// (0 when none do), averages per video, over videos, then over thresholds.
pub fn dense_caption_scores_at(preds: &[Vec<DenseCaption>], gt: &[Vec<DenseCaption>], cider: &Cider, thresholds: &[f64]) -> CaptionScore {
    assert_eq!(preds.len(), gt.len(), "one prediction list per video");
    let per_threshold: Vec<ThresholdScore> = thresholds
        .iter()
        .map(|&theta| {
            let mut bleu_acc = [0.0; 4];
            let mut cider_acc = 0.0;
            for (p, g) in preds.iter().zip(gt) {
                let mut vb = [0.0; 4];
                let mut vc = 0.0;
                for pred in p {
                    let refs: Vec<&[usize]> = g
                        .iter()
                        .filter(|e| tiou(&e.interval, &pred.interval) >= theta)
                        .map(|e| e.words.as_slice())
                        .collect();
                    if refs.is_empty() {
                        continue;
                    }
                    for (n, b) in vb.iter_mut().enumerate() {
                        *b += bleu(&pred.words, &refs, n + 1);
                    }
                    vc += cider.score(&pred.words, &refs);
                }
                if !p.is_empty() {
                    let k = p.len() as f64;
                    for (acc, b) in bleu_acc.iter_mut().zip(vb) {
                        *acc += b / k;
                    }
                    cider_acc += vc / k;
                }
            }
            let n = preds.len().max(1) as f64;
            ThresholdScore {
                tiou: theta,
                bleu: bleu_acc.map(|b| b / n),
                cider: cider_acc / n,
            }
        })
        .collect();
    let mut bleu_avg = [0.0; 4];
    for (n, b) in bleu_avg.iter_mut().enumerate() {
        *b = mean(per_threshold.iter().map(|t| t.bleu[n]));
    }
    CaptionScore {
        bleu: bleu_avg,
        cider: mean(per_threshold.iter().map(|t| t.cider)),
        per_threshold,
    }
}

/// [`dense_caption_scores_at`] over the standard thresholds.
pub fn dense_caption_scores(preds: &[Vec<DenseCaption>], gt: &[Vec<DenseCaption>], cider: &Cider) -> CaptionScore {
    dense_caption_scores_at(preds, gt, cider, &THRESHOLDS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_hand_example() {
        let b = bleu(&[1, 2, 3, 4], &[&[1, 2, 3, 5]], 2);
        assert!((b - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(bleu(&[7, 8], &[&[1, 2]], 1), 0.0);
        assert_eq!(bleu(&[1, 2, 3, 4], &[&[1, 2, 3, 4]], 4), 1.0);
    }

    #[test]
    fn words_strip_reserved() {
        assert_eq!(words(&[3, 4, EOS, 5]), vec![3, 4]);
    }
}
