//! Proposal and caption dumps: JSON lines, one line per video.
//!
//! ```text
//! proposals: {"video":"vid_0003","proposals":[{"start":2,"end":6,"score":0.91}, ...]}
//! captions:  {"video":"vid_0003","events":[{"start":2,"end":6,"score":0.91,"order":0,
//!             "tokens":[5,9,2],"text":"a man ..."}, ...]}
//! ```
//!
//! A video with no selected events still gets a line with an empty list.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epn::Proposal;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::pipeline::{CaptionedEvent, VideoOutput};
use crate::synthdata::Vocabulary;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    start: usize,
    end: usize,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRow {
    video: String,
    proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRecord {
    start: usize,
    end: usize,
    score: f64,
    order: usize,
    tokens: Vec<usize>,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRow {
    video: String,
    events: Vec<CaptionRecord>,
}

fn interval(video: &str, start: usize, end: usize) -> Result<Interval> {
    Interval::new(start, end).map_err(|_| Error::Dump(format!("video `{video}`: bad interval [{start}, {end})")))
}

fn write_lines<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(w);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| Error::Dump(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Dump(format!("line {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPrerequisite(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn write_proposals_to<W: Write>(outputs: &[VideoOutput], w: W) -> Result<()> {
    write_lines(
        w,
        outputs.iter().map(|o| ProposalRow {
            video: o.id.clone(),
            proposals: o
                .candidates
                .iter()
                .map(|p| ProposalRecord {
                    start: p.interval.start,
                    end: p.interval.end,
                    score: p.score,
                })
                .collect(),
        }),
    )
}

pub fn write_captions_to<W: Write>(outputs: &[VideoOutput], vocab: &Vocabulary, w: W) -> Result<()> {
    write_lines(
        w,
        outputs.iter().map(|o| CaptionRow {
            video: o.id.clone(),
            events: o
                .events
                .iter()
                .map(|e| CaptionRecord {
                    start: e.interval.start,
                    end: e.interval.end,
                    score: e.score,
                    order: e.order,
                    tokens: e.tokens.clone(),
                    text: vocab.detokenize(&e.tokens),
                })
                .collect(),
        }),
    )
}

/// Writes `proposals.jsonl` and `captions.jsonl` into `dir`.
pub fn write_dumps(dir: &Path, outputs: &[VideoOutput], vocab: &Vocabulary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_proposals_to(outputs, File::create(dir.join(PROPOSALS))?)?;
    write_captions_to(outputs, vocab, File::create(dir.join(CAPTIONS))?)
}

pub const PROPOSALS: &str = "proposals.jsonl";
pub const CAPTIONS: &str = "captions.jsonl";

/// Joins the two dumps by video id. Every captioned video needs a proposal line and vice versa.
pub fn read_dumps_from<P: Read, C: Read>(proposals: P, captions: C) -> Result<Vec<VideoOutput>> {
    let mut cands: BTreeMap<String, Vec<Proposal>> = BTreeMap::new();
    for row in read_lines::<_, ProposalRow>(proposals)? {
        let props = row
            .proposals
            .iter()
            .map(|p| {
                Ok(Proposal {
                    interval: interval(&row.video, p.start, p.end)?,
                    score: p.score,
                    vis: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if cands.insert(row.video.clone(), props).is_some() {
            return Err(Error::Dump(format!("duplicate proposal line for `{}`", row.video)));
        }
    }
    let mut outputs = Vec::new();
    for row in read_lines::<_, CaptionRow>(captions)? {
        let candidates = cands
            .remove(&row.video)
            .ok_or_else(|| Error::Dump(format!("video `{}` has captions but no proposal line", row.video)))?;
        let mut events = row
            .events
            .iter()
            .map(|e| {
                Ok(CaptionedEvent {
                    interval: interval(&row.video, e.start, e.end)?,
                    score: e.score,
                    order: e.order,
                    tokens: e.tokens.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        events.sort_by_key(|e| e.order);
        outputs.push(VideoOutput {
            id: row.video,
            candidates,
            events,
        });
    }
    if let Some(id) = cands.keys().next() {
        return Err(Error::Dump(format!("video `{id}` has proposals but no caption line")));
    }
    Ok(outputs)
}

pub fn read_dumps(dir: &Path) -> Result<Vec<VideoOutput>> {
    read_dumps_from(open(&dir.join(PROPOSALS))?, open(&dir.join(CAPTIONS))?)
}
