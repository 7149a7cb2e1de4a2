//! Run configuration and the writers that stamp it into every output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pdlab::weights::FamilySpec;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    pub seed: u64,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub out: String,
    pub options: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn new(command: &'static str, family: Option<FamilySpec>, seed: u64, out: &Path) -> Self {
        Self {
            command,
            family,
            seed,
            l: None,
            n: None,
            rho: None,
            sizes: None,
            theta: None,
            eps: None,
            samples: None,
            t_max: None,
            out: out.display().to_string(),
            options: BTreeMap::new(),
        }
    }

    pub fn option<V: Serialize>(&mut self, key: &str, value: V) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.options.insert(key.to_string(), v);
        self
    }

    fn header(&self) -> String {
        let cfg = serde_json::to_string(self).expect("config serializes");
        format!("# pdlab {} {cfg}\n", pdlab::VERSION)
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    version: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: &'a T,
}

/// Output directory plus the config every file is stamped with.
pub struct Sink {
    dir: PathBuf,
    config: RunConfig,
}

impl Sink {
    pub fn new(dir: &Path, config: RunConfig) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV body behind a one-line `#` header carrying the config.
    pub fn csv(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        fs::write(&path, format!("{}{body}", self.config.header()))
            .map_err(|e| Failure::Numeric(e.into()))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        let doc = Stamped {
            version: pdlab::VERSION,
            config: &self.config,
            body,
        };
        let mut text =
            serde_json::to_string_pretty(&doc).map_err(|e| Failure::Numeric(e.into()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Failure::Numeric(e.into()))?;
        Ok(path)
    }
}
