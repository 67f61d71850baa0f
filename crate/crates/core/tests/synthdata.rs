use std::time::Instant;

use densecap::synthdata::{
    generate_corpus, read_corpus, read_corpus_from, write_corpus, write_corpus_to, CorpusSpec, Split, EOS,
};
use densecap::Error;

fn bytes(spec: &CorpusSpec) -> Vec<u8> {
    let mut out = Vec::new();
    write_corpus_to(&generate_corpus(spec).unwrap(), &mut out).unwrap();
    out
}

#[test]
fn zero_noise_single_template_segments_equal_template_mean() {
    let spec = CorpusSpec {
        num_videos: 3,
        num_templates: 1,
        events_min: 1,
        events_max: 1,
        noise: 0.0,
        subject_signal: 0.0,
        ..CorpusSpec::default()
    };
    let c = generate_corpus(&spec).unwrap();
    let first = c.videos[0].segment(c.videos[0].events[0].interval.start).to_vec();
    assert!(first.iter().any(|&x| x != 0.0));
    for v in &c.videos {
        assert_eq!(v.events.len(), 1);
        let iv = v.events[0].interval;
        for t in 0..v.t_c() {
            if iv.start <= t && t <= iv.end {
                assert_eq!(v.segment(t), &first[..]);
            } else {
                assert!(v.segment(t).iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let spec = CorpusSpec {
        seed: 7,
        num_videos: 10,
        ..CorpusSpec::default()
    };
    assert_eq!(bytes(&spec), bytes(&spec));
    let other = CorpusSpec { seed: 8, ..spec.clone() };
    assert_ne!(bytes(&spec), bytes(&other));
}

#[test]
fn default_corpus_statistics() {
    let c = generate_corpus(&CorpusSpec::default()).unwrap();
    let stats = c.stats();
    assert_eq!(stats.videos, 500);
    assert!((2.8..=3.2).contains(&stats.mean_events), "{}", stats.mean_events);
    assert!(stats.overlapping_pairs > 0, "no overlapping events generated");
    let counts = c.token_counts();
    for (id, &n) in counts.iter().enumerate().skip(EOS) {
        assert!(n >= 10, "token {:?} appears {n} times", c.vocab.token(id));
    }
    for v in &c.videos {
        v.validate(c.vocab.len()).unwrap();
        assert!(v.t_c() <= 64);
        let len = v.events[0].caption.words().len();
        assert!((5..=10).contains(&len));
    }
    let val = c.split(Split::Val).len();
    assert!((70..=130).contains(&val), "val split has {val} videos");
}

#[test]
fn later_captions_continue_the_subject() {
    let c = generate_corpus(&CorpusSpec::default()).unwrap();
    let then = c.vocab.id("then").unwrap();
    for v in c.videos.iter().take(50) {
        assert_ne!(v.events[0].caption.ids()[0], then);
        for e in &v.events[1..] {
            assert_eq!(e.caption.ids()[0], then);
        }
    }
}

#[test]
fn too_few_templates_is_rejected() {
    let spec = CorpusSpec {
        num_templates: 3,
        ..CorpusSpec::default()
    };
    match generate_corpus(&spec) {
        Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "num_templates"),
        other => panic!("unexpected {other:?}"),
    }
    let spec = CorpusSpec {
        d_feat: 0,
        ..CorpusSpec::default()
    };
    assert!(matches!(generate_corpus(&spec), Err(Error::InvalidSpec { field, .. }) if field == "d_feat"));
}

#[test]
fn round_trip_is_lossless_and_fast() {
    let c = generate_corpus(&CorpusSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let t0 = Instant::now();
    write_corpus(&path, &c).unwrap();
    let back = read_corpus(&path).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(back, c);
    for (a, b) in back.videos.iter().zip(&c.videos) {
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    println!("500-video round trip: {elapsed:?}");
    assert!(elapsed.as_secs_f64() < 2.0, "round trip took {elapsed:?}");
}

fn small_file() -> String {
    let spec = CorpusSpec {
        num_videos: 2,
        ..CorpusSpec::default()
    };
    String::from_utf8(bytes(&spec)).unwrap()
}

#[test]
fn missing_feature_row_names_the_video() {
    let text = small_file();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    rec["t_c"] = serde_json::json!(rec["t_c"].as_u64().unwrap() + 1);
    lines[1] = rec.to_string();
    let err = read_corpus_from(lines.join("\n").as_bytes()).unwrap_err();
    match &err {
        Error::CorpusVideo { id, reason } => {
            assert_eq!(id, "vid_0000");
            assert!(reason.contains("feature rows"), "{reason}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("vid_0000"));
}

#[test]
fn version_truncation_and_unknown_tokens_are_errors() {
    let text = small_file();
    let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(read_corpus_from(bumped.as_bytes()).unwrap_err().to_string().contains("version"));

    let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
    assert!(read_corpus_from(truncated.as_bytes()).unwrap_err().to_string().contains("truncated"));

    let cut = &text[..text.len() - 20];
    assert!(read_corpus_from(cut.as_bytes()).is_err());

    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    rec["events"][0]["caption"][0] = serde_json::json!(999);
    lines[2] = rec.to_string();
    let err = read_corpus_from(lines.join("\n").as_bytes()).unwrap_err();
    assert!(err.to_string().contains("unknown token index 999"), "{err}");
}
