use std::path::{Path, PathBuf};

use charweave_core::guidance::DatasetProfile;
use charweave_core::GuidanceConfig64;
use serde::Deserialize;

use crate::CliError;

/// Project file: defaults for every command, overridden by flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub graph_path: Option<PathBuf>,
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub compounds_path: Option<PathBuf>,
    #[serde(default)]
    pub guidance: Option<GuidanceConfig64>,
    #[serde(default)]
    pub dataset_profile: Option<DatasetProfile>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ProjectConfig {
    /// Reads the file; relative paths inside it resolve against its
    /// directory, and every referenced input must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut config: Self = read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut config.graph_path, &mut config.lexicon_path, &mut config.compounds_path, &mut config.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for (key, p) in [
            ("graph_path", &config.graph_path),
            ("lexicon_path", &config.lexicon_path),
            ("compounds_path", &config.compounds_path),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::input(format!("{}: {key} `{}` does not exist", path.display(), p.display())));
                }
            }
        }
        if let Some(g) = &config.guidance {
            g.validate().map_err(|e| CliError::input(format!("{}: guidance: {e}", path.display())))?;
        }
        Ok(config)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Deserializes a JSON file, naming the failing field path, line and column.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    parse_json(&text).map_err(|e| CliError::input(format!("{}:{e}", path.display())))
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        let location = format!("{}:{}", inner.line(), inner.column());
        if path == "." {
            format!("{location}: {inner}")
        } else {
            format!("{location}: at `{path}`: {inner}")
        }
    })
}
