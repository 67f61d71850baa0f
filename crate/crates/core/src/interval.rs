//! Inclusive segment intervals and temporal IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[start, end]` in segment indices, both inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::Interval {
                start: start as i64,
                end: end as i64,
            });
        }
        Ok(Interval { start, end })
    }

    /// Number of segments covered.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intersection(&self, other: &Interval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

/// Temporal IoU with the segment-count measure.
pub fn tiou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection(b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// [`tiou`] for raw endpoints, validating them first.
pub fn tiou_checked(a: (i64, i64), b: (i64, i64)) -> Result<f64> {
    let conv = |(s, e): (i64, i64)| {
        if s < 0 || s > e {
            Err(Error::Interval { start: s, end: e })
        } else {
            Ok(Interval {
                start: s as usize,
                end: e as usize,
            })
        }
    };
    Ok(tiou(&conv(a)?, &conv(b)?))
}
