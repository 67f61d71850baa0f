//! Run configuration: one TOML file plus dotted `--key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::epn::EpnConfig;
use crate::error::{Error, Result};
use crate::esgn::EsgnConfig;
use crate::scn::ScnConfig;
use crate::synthdata::CorpusSpec;
use crate::training::TrainConfig;

/// Network dimensions. Input sizes that follow from the corpus or from another
/// network (`d_feat`, `vis_dim`, `vocab`) are overwritten by [`ModelConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub epn: EpnConfig,
    pub esgn: EsgnConfig,
    pub scn: ScnConfig,
}

impl ModelConfig {
    pub fn resolve(&mut self, d_feat: usize, vocab: usize) {
        self.epn.d_feat = d_feat;
        self.esgn.vis_dim = self.epn.vis_dim();
        self.scn.d_feat = d_feat;
        self.scn.vis_dim = self.epn.vis_dim();
        self.scn.vocab = vocab;
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.epn.hidden", self.epn.hidden),
            ("model.epn.k", self.epn.k),
            ("model.epn.top_n", self.epn.top_n),
            ("model.epn.m_max", self.epn.m_max),
            ("model.esgn.hidden", self.esgn.hidden),
            ("model.esgn.att", self.esgn.att),
            ("model.esgn.l_loc", self.esgn.l_loc),
            ("model.esgn.n_max", self.esgn.n_max),
            ("model.scn.hidden", self.scn.hidden),
            ("model.scn.embed", self.scn.embed),
            ("model.scn.att", self.scn.att),
            ("model.scn.gate", self.scn.gate),
            ("model.scn.max_len", self.scn.max_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::InvalidSpec {
                    field: field.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.epn.nms_threshold) {
            return Err(Error::InvalidSpec {
                field: "model.epn.nms_threshold".into(),
                reason: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: PathBuf::from("run/corpus.jsonl"),
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

fn parse_scalar(raw: &str) -> toml::Value {
    // reuse the TOML grammar for numbers, booleans and quoted strings
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut table = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides and rejects unknown keys.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            set_dotted(&mut table, k, parse_scalar(v))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingPrerequisite(p.to_path_buf()),
                _ => Error::Io(e),
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
