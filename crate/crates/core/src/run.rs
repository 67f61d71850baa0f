//! Stage orchestration over an output directory: checkpoints, logs, generation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use densecap_nn::ParamStore;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::Cider;
use crate::pipeline::{
    checkpoint_meta, checkpoint_path, cider_for, detect, generate, load_checkpoint, save_checkpoint, EvalReport, Models,
    Variant, VideoOutput, IND_CHECKPOINT,
};
use crate::synthdata::{Corpus, Split, SyntheticVideo};
use crate::training::{
    prepare, train_epn, train_esgn, train_rl, train_scn, EpochRecord, RlVideo, Scorer, Stage, VideoData,
};

/// A corpus, its configuration and the models sized for it.
pub struct Session {
    pub cfg: RunConfig,
    pub corpus: Corpus,
    pub models: Models,
    /// Overwrite existing checkpoints.
    pub force: bool,
}

pub fn log_path(out_dir: &Path, stage: Stage) -> PathBuf {
    out_dir.join(format!("{}.log.jsonl", stage.name()))
}

pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Config(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

impl Session {
    /// Sizes the models for `corpus`; the model block of `cfg` is resolved in place.
    pub fn new(mut cfg: RunConfig, corpus: Corpus) -> Result<Self> {
        cfg.model.resolve(corpus.spec.d_feat, corpus.vocab.len());
        cfg.model.validate()?;
        let models = Models::new(&cfg.model);
        Ok(Session {
            cfg,
            corpus,
            models,
            force: false,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.paths.out_dir
    }

    pub fn videos(&self, split: Split) -> Vec<&SyntheticVideo> {
        self.corpus.split(split)
    }

    pub fn load(&self, name: &str) -> Result<ParamStore> {
        load_checkpoint(&checkpoint_path(self.out_dir(), name), &self.corpus.vocab)
    }

    fn save(&self, name: &str, store: &ParamStore) -> Result<()> {
        let path = checkpoint_path(self.out_dir(), name);
        save_checkpoint(&path, store, &checkpoint_meta(name, &self.corpus.vocab, &self.cfg.model))
    }

    fn claim(&self, name: &str) -> Result<()> {
        let path = checkpoint_path(self.out_dir(), name);
        if path.exists() && !self.force {
            return Err(Error::Exists { what: "checkpoint", path });
        }
        Ok(())
    }

    /// EPN outputs for a split under the saved proposal checkpoint.
    pub fn prepared(&self, split: Split) -> Result<Vec<VideoData>> {
        let epn = self.load(Stage::Epn.name())?;
        prepare(&self.models.epn, &epn, &self.videos(split))
    }

    /// Trains one stage and writes its checkpoint(s) and log.
    pub fn train(&self, stage: Stage) -> Result<Vec<EpochRecord>> {
        for pre in stage.prerequisites() {
            let path = checkpoint_path(self.out_dir(), pre.name());
            if !path.exists() {
                return Err(Error::MissingPrerequisite(path));
            }
        }
        let outputs: &[&str] = match stage {
            Stage::Scn => &["scn", IND_CHECKPOINT],
            _ => &[stage.name()],
        };
        for name in outputs {
            self.claim(name)?;
        }
        std::fs::create_dir_all(self.out_dir())?;
        let t = &self.cfg.train;
        let m = &self.models;
        let mut log = Vec::new();
        match stage {
            Stage::Epn => {
                let mut store = m.init_epn(t.seed, t.init_scale)?;
                train_epn(&m.epn, &mut store, &self.videos(Split::Train), &self.videos(Split::Val), t, &mut log)?;
                self.save("epn", &store)?;
            }
            Stage::Esgn => {
                let (train, val) = (self.prepared(Split::Train)?, self.prepared(Split::Val)?);
                let mut store = m.init_esgn(t.seed, t.init_scale)?;
                train_esgn(&m.esgn, &mut store, &train, &val, t, &mut log)?;
                self.save("esgn", &store)?;
            }
            Stage::Scn => {
                let (train, val) = (self.prepared(Split::Train)?, self.prepared(Split::Val)?);
                let mut store = m.init_scn(t.seed, t.init_scale, true)?;
                train_scn(&m.scn, &mut store, &train, &val, t, &mut log)?;
                self.save("scn", &store)?;
                let mut ind = m.init_scn(t.seed, t.init_scale, false)?;
                train_scn(&m.scn_ind, &mut ind, &train, &val, t, &mut log)?;
                self.save(IND_CHECKPOINT, &ind)?;
            }
            Stage::Rl => {
                let train_videos = self.videos(Split::Train);
                let val_videos = self.videos(Split::Val);
                let (train, val) = (self.prepared(Split::Train)?, self.prepared(Split::Val)?);
                let esgn = self.load("esgn")?;
                let mut store = self.load("scn")?;
                let rl_videos = train
                    .iter()
                    .zip(&train_videos)
                    .map(|(d, v)| {
                        Ok(RlVideo {
                            data: d,
                            video: v,
                            detected: detect(m, &esgn, d)?.events.iter().map(|p| p.interval).collect(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cider = cider_for(&train_videos)?;
                let scorer = Scorer {
                    metric: t.reward,
                    cider: &cider,
                };
                let val_cider = cider_for(&val_videos)?;
                train_rl(
                    &m.scn,
                    &mut store,
                    &rl_videos,
                    Some((&m.esgn, &esgn)),
                    &scorer,
                    t,
                    |s, _| {
                        let out = generate(m, &esgn, s, Variant::EsgnScn, &val, &val_videos)?;
                        let report = crate::pipeline::evaluate(&out, &val_videos, &val_cider, false)?;
                        Ok([("val_cider".to_string(), report.captions.cider)].into())
                    },
                    &mut log,
                )?;
                self.save("rl", &store)?;
            }
        }
        write_log(&log_path(self.out_dir(), stage), &log)?;
        Ok(log)
    }

    /// Captions a split with one variant, using the saved checkpoints.
    pub fn generate(&self, variant: Variant, split: Split) -> Result<Vec<VideoOutput>> {
        let data = self.prepared(split)?;
        let esgn = match variant {
            Variant::EpnInd => ParamStore::new(),
            _ => self.load("esgn")?,
        };
        let scn = self.load(variant.captioner_checkpoint())?;
        generate(&self.models, &esgn, &scn, variant, &data, &self.videos(split))
    }

    /// CIDEr statistics of a split's ground truth.
    pub fn cider(&self, split: Split) -> Result<Cider> {
        cider_for(&self.videos(split))
    }

    pub fn evaluate(&self, outputs: &[VideoOutput], split: Split, per_video: bool) -> Result<EvalReport> {
        crate::pipeline::evaluate(outputs, &self.videos(split), &self.cider(split)?, per_video)
    }
}
