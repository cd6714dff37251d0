//! Config-file merging, dataset loading and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use resonant_gnn::graphcore::{gen_sbm, load_graph, Graph, SbmConfig};

use crate::args::DataArgs;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

static STARTED: OnceLock<Instant> = OnceLock::new();

/// Marks the start of the run for the manifest's wall time.
pub fn start_clock() {
    STARTED.get_or_init(Instant::now);
}

/// Overlays the keys of `file` onto the parsed flags, skipping any flag
/// given explicitly on the command line. A run manifest is accepted in
/// place of a config file.
pub fn resolve<T: Serialize + DeserializeOwned>(
    parsed: &T,
    matches: &ArgMatches,
    command: &str,
    file: Option<&Path>,
) -> Result<T> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(parsed)?)?);
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut doc: Value =
        serde_json::from_str(&text).with_context(|| format!("parse error in config {}", path.display()))?;
    if doc.get("manifest_version").is_some() {
        let recorded = doc.get("command").and_then(Value::as_str).unwrap_or_default();
        if recorded != command {
            bail!("{} is a manifest for `{recorded}`, not `{command}`", path.display());
        }
        doc = doc["config"].take();
    }
    let Value::Object(overrides) = doc else {
        bail!("config {} must be a JSON object", path.display());
    };
    let mut merged = serde_json::to_value(parsed)?;
    let fields = merged.as_object_mut().expect("arguments serialize to an object");
    for (key, value) in overrides {
        if !fields.contains_key(&key) {
            bail!("unknown key `{key}` in config {}", path.display());
        }
        if matches.value_source(&key) != Some(ValueSource::CommandLine) {
            fields.insert(key, value);
        }
    }
    serde_json::from_value(merged).with_context(|| format!("invalid value in config {}", path.display()))
}

/// `sbm:50,50` into block sizes.
pub fn parse_synthetic(spec: &str) -> Result<Vec<usize>> {
    let Some(blocks) = spec.strip_prefix("sbm:") else {
        bail!("unknown synthetic dataset `{spec}`; expected `sbm:<size>,<size>,...`");
    };
    blocks
        .split(',')
        .map(|b| b.trim().parse::<usize>().with_context(|| format!("bad block size `{b}` in `{spec}`")))
        .collect()
}

pub fn load_dataset(d: &DataArgs) -> Result<Graph> {
    match (&d.synthetic, &d.edges) {
        (Some(_), Some(_)) => bail!("pass either --synthetic or --edges, not both"),
        (None, None) => bail!("no dataset: pass --edges or --synthetic"),
        (Some(spec), None) => {
            let mut cfg = SbmConfig::new(parse_synthetic(spec)?, d.p_in, d.p_out, d.graph_seed);
            cfg.feature_noise = d.feature_noise;
            Ok(gen_sbm(&cfg)?)
        }
        (None, Some(edges)) => Ok(load_graph(edges, d.features.as_deref(), d.labels.as_deref())?),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub version: String,
    /// Every resolved flag; passing this file to `--config` repeats the run.
    pub config: Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

/// Collects output files of one run and writes the manifest last.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    config: Value,
    seeds: Vec<u64>,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(dir: &Path, command: &str, config: &impl Serialize) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            seeds: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        for s in seeds {
            if !self.seeds.contains(&s) {
                self.seeds.push(s);
            }
        }
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.into());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.write(name, &body)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command: self.command,
            version: env!("RESONANT_GNN_VERSION").into(),
            config: self.config,
            seeds: self.seeds,
            outputs: self.outputs,
            wall_time_secs: STARTED.get_or_init(Instant::now).elapsed().as_secs_f64(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec() {
        assert_eq!(parse_synthetic("sbm:50,50").unwrap(), vec![50, 50]);
        assert_eq!(parse_synthetic("sbm:3").unwrap(), vec![3]);
        assert!(parse_synthetic("er:10").is_err());
        assert!(parse_synthetic("sbm:1,x").is_err());
    }
}
