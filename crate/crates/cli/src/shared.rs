//! Error classification, config loading and path handling shared by the
//! subcommands.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bitextkit::ingest::{Format, IngestError, WriteError};
use bitextkit::pipeline::{apply_override, ConfigError, PipelineConfig, PipelineError};
use bitextkit::scorer::{BackendHandle, BackendSpec, GatewayError};

use crate::{ConfigArgs, InputArgs};

/// A failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Adapter(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Adapter(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Adapter(m) => f.write_str(m),
        }
    }
}

pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn adapter(e: impl fmt::Display) -> CliError {
    CliError::Adapter(e.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        data(e)
    }
}

impl From<WriteError> for CliError {
    fn from(e: WriteError) -> Self {
        data(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        data(e)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        adapter(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Attach { .. } | PipelineError::Scorer { .. } => adapter(e),
            other => data(other),
        }
    }
}

/// A parsed config file with overrides applied.
pub struct RawConfig {
    pub root: toml::Table,
    pub base_dir: Option<PathBuf>,
}

/// Sections read by subcommands other than `filter`.
const SIDE_SECTIONS: &[&str] = &["synth", "ensemble"];

impl RawConfig {
    pub fn load(args: &ConfigArgs) -> Result<Self, CliError> {
        let (mut root, base_dir) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                let root: toml::Table =
                    text.parse().map_err(|e: toml::de::Error| data(format!("{}: {e}", path.display())))?;
                (root, path.parent().map(Path::to_path_buf))
            }
            None => (toml::Table::new(), None),
        };
        for item in &args.overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
            apply_override(&mut root, k.trim(), v.trim())?;
        }
        Ok(RawConfig { root, base_dir })
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let mut root = self.root.clone();
        for s in SIDE_SECTIONS {
            root.remove(*s);
        }
        Ok(PipelineConfig::from_table(root, self.base_dir.as_deref())?)
    }

    pub fn section(&self, name: &str) -> Option<toml::Table> {
        match self.root.get(name) {
            Some(toml::Value::Table(t)) => Some(t.clone()),
            _ => None,
        }
    }

    pub fn backend_specs(&self) -> Result<BTreeMap<String, BackendSpec>, CliError> {
        match self.root.get("backends") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| data(format!("backends: {}", e.message()))),
            None => Ok(BTreeMap::new()),
        }
    }

    pub fn attach(&self, name: &str) -> Result<BackendHandle, CliError> {
        let specs = self.backend_specs()?;
        let spec = specs.get(name).ok_or_else(|| data(format!("no backend `{name}` in [backends]")))?;
        Ok(spec.attach(name)?)
    }
}

/// Explicit format, or two paths for moses-pair, or the file extension.
pub fn resolve_format(format: Option<&str>, paths: &[PathBuf], flag: &str) -> Result<Format, CliError> {
    let format = match format {
        Some(f) => f.parse().map_err(CliError::Usage)?,
        None if paths.len() == 2 => Format::MosesPair,
        None => paths
            .first()
            .and_then(|p| Format::from_extension(p))
            .ok_or_else(|| CliError::Usage(format!("cannot infer the format of {flag}; pass the format explicitly")))?,
    };
    if paths.len() != format.path_count() {
        return Err(CliError::Usage(format!("{flag} takes {} path(s) for {format}", format.path_count())));
    }
    Ok(format)
}

impl InputArgs {
    pub fn resolve(&self) -> Result<Format, CliError> {
        if self.input.is_empty() {
            return Err(CliError::Usage("--in is required".into()));
        }
        resolve_format(self.format.as_deref(), &self.input, "--in")
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn open_read(path: &Path) -> Result<std::io::BufReader<fs::File>, CliError> {
    fs::File::open(path).map(std::io::BufReader::new).map_err(|e| data(format!("{}: {e}", path.display())))
}
