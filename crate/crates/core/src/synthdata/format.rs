//! Corpus file format, version 1.
//!
//! JSON lines. The first line is a header
//! `{"format":"densecap-corpus","version":1,"spec":{..},"vocab":[..],"num_videos":N}`.
//! Each following line is one video:
//! `{"id":..,"t_c":..,"d_feat":..,"features":BASE64,"events":[{"start":..,"end":..,"caption":[ids]}]}`
//! where `features` is the row-major `T_c x D_feat` matrix as little-endian f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use densecap_nn::Tensor;

use super::{Corpus, CorpusSpec, GroundTruthEvent, SyntheticVideo, Vocabulary};
use crate::error::{Error, Result};
use crate::interval::Interval;

pub const FORMAT_NAME: &str = "densecap-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: CorpusSpec,
    vocab: Vocabulary,
    num_videos: usize,
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    start: usize,
    end: usize,
    caption: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct VideoRecord {
    id: String,
    t_c: usize,
    d_feat: usize,
    features: String,
    events: Vec<EventRecord>,
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        spec: corpus.spec.clone(),
        vocab: corpus.vocab.clone(),
        num_videos: corpus.videos.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Corpus(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut blob = Vec::new();
    for v in &corpus.videos {
        blob.clear();
        for x in v.features.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        let rec = VideoRecord {
            id: v.id.clone(),
            t_c: v.t_c(),
            d_feat: v.d_feat(),
            features: STANDARD.encode(&blob),
            events: v
                .events
                .iter()
                .map(|e| EventRecord {
                    start: e.interval.start,
                    end: e.interval.end,
                    caption: e.caption.ids().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Corpus(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_corpus_to(corpus, File::create(path)?)
}

fn parse_video(line: &str, vocab_len: usize, d_feat: usize) -> Result<SyntheticVideo> {
    let rec: VideoRecord =
        serde_json::from_str(line).map_err(|e| Error::Corpus(format!("malformed video record: {e}")))?;
    let bad = |reason: String| Error::CorpusVideo {
        id: rec.id.clone(),
        reason,
    };
    if rec.d_feat != d_feat {
        return Err(bad(format!("d_feat {} differs from header {d_feat}", rec.d_feat)));
    }
    if rec.t_c == 0 {
        return Err(bad("T_c must be positive".into()));
    }
    let bytes = STANDARD
        .decode(rec.features.as_bytes())
        .map_err(|e| bad(format!("feature block: {e}")))?;
    let row_bytes = 8 * rec.d_feat;
    if bytes.len() % row_bytes != 0 {
        return Err(bad(format!("feature block of {} bytes is not whole rows", bytes.len())));
    }
    let rows = bytes.len() / row_bytes;
    if rows != rec.t_c {
        return Err(bad(format!("declared T_c={} but found {rows} feature rows", rec.t_c)));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let features = Tensor::matrix(rec.t_c, rec.d_feat, data)?;
    let mut events = Vec::with_capacity(rec.events.len());
    for e in &rec.events {
        let interval = Interval::new(e.start, e.end).map_err(|err| bad(err.to_string()))?;
        let caption = super::CaptionTokens::new(e.caption.clone()).map_err(|err| bad(err.to_string()))?;
        events.push(GroundTruthEvent { interval, caption });
    }
    let video = SyntheticVideo {
        id: rec.id.clone(),
        features,
        events,
    };
    video.validate(vocab_len)?;
    Ok(video)
}

pub fn read_corpus_from<R: Read>(r: R) -> Result<Corpus> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Corpus("empty file".into()))??;
    let probe: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::Corpus(format!("malformed header: {e}")))?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
        return Err(Error::Corpus("not a corpus file".into()));
    }
    let version = probe.get("version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Corpus(format!(
            "unsupported version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let header: Header =
        serde_json::from_value(probe).map_err(|e| Error::Corpus(format!("malformed header: {e}")))?;
    let mut videos = Vec::with_capacity(header.num_videos);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        videos.push(parse_video(&line, header.vocab.len(), header.spec.d_feat)?);
    }
    if videos.len() != header.num_videos {
        return Err(Error::Corpus(format!(
            "truncated file: header declares {} videos, found {}",
            header.num_videos,
            videos.len()
        )));
    }
    Ok(Corpus {
        spec: header.spec,
        vocab: header.vocab,
        videos,
    })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPrerequisite(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_corpus_from(f)
}
