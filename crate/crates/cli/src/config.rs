//! Run configuration files, objective strings and mapping discovery.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vmr_core::datasets::{load_mapping, GeneratorConfig};
use vmr_core::{ClusterState, ObjectiveSpec};
use vmr_policy::TrainConfig;

use crate::BenchError;

/// Settings shared by every subcommand. Command-line flags override the
/// file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mnl: usize,
    pub objective: ObjectiveSpec,
    pub budget_secs: f64,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mnl: 4,
            objective: ObjectiveSpec::default(),
            budget_secs: 5.0,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }
}

/// `xcore:X`, `mem:B`, inline JSON, or a path to a JSON file holding an
/// objective.
pub fn parse_objective(s: &str) -> Result<ObjectiveSpec, BenchError> {
    let s = s.trim();
    let spec = if let Some(x) = s.strip_prefix("xcore:") {
        ObjectiveSpec::x_core(x.parse().map_err(|_| BenchError::Config(format!("bad block size in `{s}`")))?)
    } else if let Some(b) = s.strip_prefix("mem:") {
        ObjectiveSpec::memory(b.parse().map_err(|_| BenchError::Config(format!("bad block size in `{s}`")))?)
    } else if s.starts_with('{') {
        serde_json::from_str(s).map_err(|e| BenchError::Config(format!("objective: {e}")))?
    } else if Path::new(s).is_file() {
        let text = fs::read_to_string(s).map_err(|e| BenchError::io(s, e))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{s}: {e}")))?
    } else {
        return Err(BenchError::Config(format!("unknown objective `{s}`")));
    };
    spec.validate()?;
    Ok(spec)
}

/// Expands directories to their `*.json` files (sorted) and loads each
/// mapping, named by file stem.
pub fn load_mappings(paths: &[PathBuf]) -> Result<Vec<(String, ClusterState)>, BenchError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| BenchError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_mapping(&f)?))
        })
        .collect()
}
