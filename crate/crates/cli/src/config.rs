//! Run configuration: one layered key-value (TOML) file plus `--set`
//! overrides. Every training hyperparameter is a named key with its standard
//! default, so a single file reproduces one experiment case.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sketchflow::backends::BackendSpec;
use sketchflow::error::{Error, Result};
use sketchflow::evalkit::EvalProtocol;
use sketchflow::flow::FlowConfig;
use sketchflow::hash::{hex64, Fnv1a};
use sketchflow::stylemix::StyleMixSpec;
use sketchflow::trainer::TrainConfig;

pub const CACHE_ENV: &str = "SKETCHFLOW_CACHE";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n_samples: usize,
    pub resolution: usize,
    pub style_truncation: f64,
    pub pr_k: usize,
    /// Reference-statistics cache file (FID).
    pub stats: Option<PathBuf>,
    /// Directory of reference images (builds stats; required for P&R).
    pub ref_images: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = EvalProtocol::default();
        EvalSection {
            n_samples: p.n_samples,
            resolution: p.resolution,
            style_truncation: p.style_truncation,
            pr_k: p.pr_k,
            stats: None,
            ref_images: None,
        }
    }
}

impl EvalSection {
    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            n_samples: self.n_samples,
            resolution: self.resolution,
            style_truncation: self.style_truncation,
            pr_k: self.pr_k,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Category-level text anchor (e.g. "cat").
    pub category: String,
    /// Reference sketch raster.
    pub sketch: PathBuf,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub backend: BackendSpec,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub stylemix: StyleMixSpec,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            category: String::new(),
            sketch: PathBuf::new(),
            out_dir: PathBuf::from("runs"),
            run_id: "run".into(),
            backend: BackendSpec::default(),
            flow: FlowConfig::default(),
            train: TrainConfig::default(),
            stylemix: StyleMixSpec::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    /// Parse the TOML file and apply dotted-path `--set key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        let mut value = toml::Value::Table(table);
        for assignment in overrides {
            apply_override(&mut value, assignment)?;
        }
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::config(format!("config field error: {e}")))?;
        // The top-level seed is the run seed.
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn validate_common(&self) -> Result<()> {
        self.train.validate()?;
        if self.category.is_empty() {
            return Err(Error::config(
                "field 'category' must be set (category-level text anchor)",
            ));
        }
        Ok(())
    }

    pub fn require_sketch(&self) -> Result<()> {
        if self.sketch.as_os_str().is_empty() {
            return Err(Error::config("field 'sketch' must be set"));
        }
        if !self.sketch.exists() {
            return Err(Error::config(format!(
                "field 'sketch': path {} does not exist",
                self.sketch.display()
            )));
        }
        Ok(())
    }

    /// Identity fingerprint stamped into artifacts: the model-defining
    /// sections plus the sketch content digest. Seed and output paths are
    /// excluded so re-sampling a trained model with a new seed still
    /// verifies.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            backend: &'a BackendSpec,
            flow: &'a FlowConfig,
            train: TrainConfig,
            stylemix: &'a StyleMixSpec,
            category: &'a str,
            sketch_digest: u64,
        }
        let mut train = self.train.clone();
        train.seed = 0;
        let sketch_digest = std::fs::read(&self.sketch)
            .map(|bytes| sketchflow::hash::hash_bytes(&bytes))
            .unwrap_or(0);
        let identity = Identity {
            backend: &self.backend,
            flow: &self.flow,
            train,
            stylemix: &self.stylemix,
            category: &self.category,
            sketch_digest,
        };
        let json = serde_json::to_string(&identity).expect("identity serializes");
        let mut h = Fnv1a::new();
        h.write(json.as_bytes());
        hex64(h.finish())
    }
}

/// Apply one `dotted.path=value` assignment onto the raw TOML tree. Values
/// parse as TOML scalars; anything unparseable is taken as a string.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::config(format!("override '{assignment}' is not of the form key=value"))
    })?;
    // Values parse as TOML scalars; bare words fall back to strings.
    let parsed: toml::Value = raw
        .parse::<toml::Value>()
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::config(format!("override path '{path}' crosses a non-table value"))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!("loop returns on last segment")
}

/// Cache directory for derived artifacts (reference statistics built from
/// image directories). Controlled by `SKETCHFLOW_CACHE`; defaults to
/// `.sketchflow-cache` under the current directory.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".sketchflow-cache"))
}
