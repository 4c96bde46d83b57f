//! Experiment configuration and the inputs it resolves to.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ness::model::{ModelError, ModelSpec, PerturbationFamily};
use ness::opalg::{DenseOperator, SiteId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_HORIZONS: [f64; 4] = [1.0, 5.0, 20.0, 100.0];

/// Series settings of the convergence sweep; `lambda` comes from the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DysonSettings {
    pub max_order: usize,
    #[serde(default)]
    pub mu: f64,
}

impl Default for DysonSettings {
    fn default() -> Self {
        DysonSettings { max_order: 40, mu: 0.0 }
    }
}

/// One experiment, read from JSON. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_path: Option<PathBuf>,
    /// Nested volumes, smallest first; empty means the whole model.
    #[serde(default)]
    pub exhaustion: Vec<Vec<SiteId>>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    /// Named observables, each a list of terms in the model-file schema.
    #[serde(default)]
    pub observables: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Evaluation times of the convergence sweep.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_derivation_orders")]
    pub derivation_orders: usize,
    #[serde(default)]
    pub dyson: Option<DysonSettings>,
    /// Enlarged small system for the boundary redraw.
    #[serde(default)]
    pub new_small: Vec<SiteId>,
}

fn default_horizons() -> Vec<f64> {
    DEFAULT_HORIZONS.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_derivation_orders() -> usize {
    3
}

impl ExperimentConfig {
    /// Configuration with every default, for runs driven by `--model` alone.
    pub fn for_model(model_path: PathBuf) -> Self {
        ExperimentConfig {
            model_path,
            perturbation_path: None,
            exhaustion: Vec::new(),
            horizons: default_horizons(),
            observables: BTreeMap::new(),
            seed: 0,
            output_dir: default_output_dir(),
            times: Vec::new(),
            derivation_orders: default_derivation_orders(),
            dyson: None,
            new_small: Vec::new(),
        }
    }

    /// Reads a config file and makes its paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            anyhow::anyhow!(
                "{}: parse error at line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            )
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.model_path = base.join(&cfg.model_path);
        cfg.perturbation_path = cfg.perturbation_path.map(|p| base.join(p));
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    /// Checks the invariants that do not need the model.
    pub fn check(&self) -> Result<()> {
        for (i, w) in self.horizons.windows(2).enumerate() {
            ensure!(w[0] < w[1], "horizons must be ascending (entry {})", i + 1);
        }
        for &t in &self.horizons {
            ensure!(t > 0.0 && t.is_finite(), "horizon {t} is not a positive number");
        }
        for &t in &self.times {
            ensure!(t.is_finite(), "time {t} is not finite");
        }
        for (i, w) in self.exhaustion.windows(2).enumerate() {
            if !w[0].iter().all(|s| w[1].contains(s)) {
                bail!("exhaustion is not nested: volume {} is not contained in volume {}", i, i + 1);
            }
        }
        Ok(())
    }
}

/// Reads a model file, reporting JSON errors with their position.
pub fn load_model(path: &Path) -> Result<(ModelSpec, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = String::from_utf8_lossy(&bytes);
    let spec = ModelSpec::from_json_str(&text).map_err(|e| describe(path, e))?;
    Ok((spec, bytes))
}

fn describe(path: &Path, e: ModelError) -> anyhow::Error {
    anyhow::anyhow!("{}: {e}", path.display())
}

/// Everything a command needs, loaded once.
pub struct Inputs {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub perturbation: Option<PerturbationFamily>,
    pub observables: Vec<(String, DenseOperator)>,
    /// Volumes of the exhaustion, or the whole model when none is given.
    pub volumes: Vec<Vec<SiteId>>,
    pub hash: String,
}

impl Inputs {
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.check()?;
        let (spec, model_bytes) = load_model(&config.model_path)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical(&config)?);
        hasher.update(&model_bytes);
        let perturbation = match &config.perturbation_path {
            Some(path) => {
                let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
                hasher.update(&bytes);
                let family = PerturbationFamily::from_json_str(&String::from_utf8_lossy(&bytes), &spec)
                    .map_err(|e| describe(path, e))?;
                Some(family)
            }
            None => None,
        };
        let observables = config
            .observables
            .iter()
            .map(|(name, terms)| Ok((name.clone(), observable(&spec, name, terms)?)))
            .collect::<Result<Vec<_>>>()?;
        let volumes = if config.exhaustion.is_empty() {
            vec![spec.site_ids()]
        } else {
            config.exhaustion.iter().map(|v| sorted(v)).collect()
        };
        let hash = hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Inputs {
            config,
            spec,
            perturbation,
            observables,
            volumes,
            hash,
        })
    }

    /// Refuses volumes whose Hilbert space exceeds `cap`.
    pub fn check_dims(&self, cap: usize) -> Result<Vec<usize>> {
        self.volumes
            .iter()
            .enumerate()
            .map(|(i, sites)| {
                let dim = self.spec.volume(sites)?.dim();
                ensure!(
                    dim <= cap,
                    "volume {i} has dimension {dim}, above the cap of {cap}; raise --dim-cap to allow it"
                );
                Ok(dim)
            })
            .collect()
    }
}

/// The config as hashed: file locations do not change results, so the model
/// and output paths are left out and the model contents hashed instead.
fn canonical(config: &ExperimentConfig) -> Result<Vec<u8>> {
    let mut c = config.clone();
    c.model_path = PathBuf::new();
    c.perturbation_path = None;
    c.output_dir = PathBuf::new();
    Ok(serde_json::to_vec(&c)?)
}

/// Short hex digest of arbitrary run parameters.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn sorted(sites: &[SiteId]) -> Vec<SiteId> {
    let mut v = sites.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Sum of the listed terms on the union of their supports.
fn observable(spec: &ModelSpec, name: &str, terms: &serde_json::Value) -> Result<DenseOperator> {
    let terms = spec
        .parse_terms(terms.clone())
        .with_context(|| format!("observable {name:?}"))?;
    ensure!(!terms.is_empty(), "observable {name:?} has no terms");
    let support = sorted(&terms.iter().flat_map(|t| t.support().iter().copied()).collect::<Vec<_>>());
    let volume = spec.volume(&support)?;
    let mut sum = DenseOperator::zero(volume.clone());
    for t in &terms {
        sum.add_assign(&t.operator().embed(&volume)?)?;
    }
    Ok(sum)
}
