//! JSON experiment configuration and its translation into model objects.

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use recombkin::audit::{random_distribution, VerifyConfig};
use recombkin::population::RateBookkeeping;
use recombkin::recombination::PhiTable;
use recombkin::{
    AlphabetSpec, Distribution, FamilySpec, IntegratorConfig, MutationModel, RecombinationMode,
    RecombinationModel, SimConfig, SimilaritySpec, SiteRateMatrix, SubsetMask,
};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alphabet: AlphabetConfig,
    pub mutation: MutationConfig,
    #[serde(default)]
    pub recombination: RecombinationConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_output() -> String {
    "out".into()
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphabetConfig {
    pub k: usize,
    pub n: usize,
    /// Letter labels; defaults to `A`, `B`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<Vec<String>>,
}

/// Off-diagonal rate matrices; diagonals are ignored and recomputed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MutationConfig {
    /// One matrix used at every site.
    Replicated(Vec<Vec<f64>>),
    PerSite(Vec<Vec<Vec<f64>>>),
    /// Seeded random rates drawn uniformly from `[low, high]`.
    Random { low: f64, high: f64, seed: u64 },
    /// No mutation.
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecombinationConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_family")]
    pub family: FamilyConfig,
    /// Weights in the order the family lists its subsets; all 1 if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub allow_asymmetric: bool,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_family() -> FamilyConfig {
    FamilyConfig::Descriptor("intervals:1..1".into())
}

impl Default for RecombinationConfig {
    fn default() -> Self {
        RecombinationConfig {
            kappa: default_kappa(),
            family: default_family(),
            weights: None,
            similarity: SimilarityConfig::default(),
            allow_asymmetric: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyConfig {
    /// `"intervals:MIN..MAX"` or `"all-subsets"`.
    Descriptor(String),
    /// Explicit subsets as position lists.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimilarityConfig {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Table { entries: Vec<TableEntry> },
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig::Exponential { rate: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub x: String,
    pub y: String,
    pub phi: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Uniform,
    /// The product stationary law of the mutation model.
    Stationary,
    /// All mass on one genome, e.g. `"AAB"`.
    Point(String),
    Probs(Vec<f64>),
    /// Seeded random law with weights uniform on `[0.01, 1.01]`.
    Random(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
    pub fixed_point_eps: f64,
    pub renorm_tol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        IntegratorSection {
            dt: d.dt,
            t_max: d.t_max,
            record_every: d.record_every,
            fixed_point_eps: d.fixed_point_eps,
            renorm_tol: d.renorm_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub population: usize,
    pub t_max: f64,
    pub mode: RecombinationMode,
    pub burn_in: f64,
    pub sample_every: f64,
    pub replicates: usize,
    pub bookkeeping: RateBookkeeping,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            population: 1000,
            t_max: 50.0,
            mode: RecombinationMode::Donor,
            burn_in: 25.0,
            sample_every: 0.5,
            replicates: 4,
            bookkeeping: RateBookkeeping::Cached,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub lemma1_instances: usize,
    pub chain_instances: usize,
    pub rate_instances: usize,
    pub max_chain_size: usize,
    pub chain_dt: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let d = VerifyConfig::default();
        VerifySection {
            lemma1_instances: d.lemma1_instances,
            chain_instances: d.chain_instances,
            rate_instances: d.rate_instances,
            max_chain_size: d.max_chain_size,
            chain_dt: d.chain_dt,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DiagnoseSource {
    /// Sampled finite populations.
    #[default]
    Simulate,
    /// Final state of the integrated kinetic equation.
    Integrate,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    #[serde(default)]
    pub source: DiagnoseSource,
}

/// Reads the config, applies `key=value` overrides on dotted paths and
/// deserializes with field-precise errors.
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| Failure::Validation(format!("config: {e}")))?;
    for ov in overrides {
        apply_override(&mut doc, ov).map_err(|e| Failure::Validation(format!("{e:#}")))?;
    }
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Failure::Validation(format!("config field `{path}`: {}", e.into_inner()))
    })
}

fn apply_override(doc: &mut Value, ov: &str) -> anyhow::Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| anyhow!("override {ov:?} is not of the form key=value"))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("override {key:?}: `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty override key")
}

/// Model objects built from a config.
pub struct Models {
    pub spec: AlphabetSpec,
    pub mutation: MutationModel,
    pub recombination: RecombinationModel,
}

impl ExperimentConfig {
    pub fn spec(&self) -> recombkin::Result<AlphabetSpec> {
        match &self.alphabet.symbols {
            Some(s) => {
                if s.len() != self.alphabet.k {
                    return Err(recombkin::Error::Validation(format!(
                        "alphabet.symbols has {} labels for k = {}",
                        s.len(),
                        self.alphabet.k
                    )));
                }
                AlphabetSpec::with_symbols(s.clone(), self.alphabet.n)
            }
            None => AlphabetSpec::new(self.alphabet.k, self.alphabet.n),
        }
    }

    /// Per-site rate matrices, unvalidated.
    pub fn site_matrices(&self, spec: &AlphabetSpec) -> recombkin::Result<Vec<SiteRateMatrix>> {
        match &self.mutation {
            MutationConfig::Replicated(rows) => {
                let m = SiteRateMatrix::from_off_diagonal(rows.clone())?;
                Ok(vec![m; spec.n()])
            }
            MutationConfig::PerSite(sites) => sites
                .iter()
                .map(|rows| SiteRateMatrix::from_off_diagonal(rows.clone()))
                .collect(),
            MutationConfig::Random { low, high, seed } => {
                if !(*low >= 0.0 && low <= high && high.is_finite()) {
                    return Err(recombkin::Error::Validation(format!(
                        "mutation.random: need 0 <= low <= high, got [{low}, {high}]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..spec.n())
                    .map(|_| SiteRateMatrix::random(spec.k(), *low, *high, &mut rng))
                    .collect()
            }
            MutationConfig::Off => Ok(vec![SiteRateMatrix::symmetric(spec.k(), 0.0)?; spec.n()]),
        }
    }

    pub fn mutation_model(&self, spec: &AlphabetSpec) -> recombkin::Result<MutationModel> {
        match self.mutation {
            MutationConfig::Off => MutationModel::off(spec.clone()),
            _ => MutationModel::new(spec.clone(), self.site_matrices(spec)?),
        }
    }

    pub fn recombination_model(&self, spec: &AlphabetSpec) -> recombkin::Result<RecombinationModel> {
        let rc = &self.recombination;
        let masks = match &rc.family {
            FamilyConfig::Descriptor(d) => FamilySpec::parse(d)?.masks(spec.n())?,
            FamilyConfig::Explicit(lists) => lists
                .iter()
                .map(|p| SubsetMask::from_positions(p, spec.n()))
                .collect::<recombkin::Result<_>>()?,
        };
        let weights = match &rc.weights {
            Some(w) if w.len() != masks.len() => {
                return Err(recombkin::Error::Validation(format!(
                    "recombination.weights has {} entries for {} family subsets",
                    w.len(),
                    masks.len()
                )))
            }
            Some(w) => w.clone(),
            None => vec![1.0; masks.len()],
        };
        let similarity = match &rc.similarity {
            SimilarityConfig::Constant { value } => SimilaritySpec::Constant(*value),
            SimilarityConfig::Exponential { rate } => SimilaritySpec::ExponentialDecay { rate: *rate },
            SimilarityConfig::Table { entries } => {
                let parsed = entries
                    .iter()
                    .map(|e| Ok((parse_substring(spec, &e.x)?, parse_substring(spec, &e.y)?, e.phi)))
                    .collect::<recombkin::Result<Vec<_>>>()?;
                SimilaritySpec::Table(PhiTable::new(parsed, rc.allow_asymmetric)?)
            }
        };
        RecombinationModel::new(spec.clone(), rc.kappa, masks.into_iter().zip(weights).collect(), similarity)
    }

    pub fn models(&self) -> recombkin::Result<Models> {
        let spec = self.spec()?;
        let mutation = self.mutation_model(&spec)?;
        let recombination = self.recombination_model(&spec)?;
        Ok(Models {
            spec,
            mutation,
            recombination,
        })
    }

    pub fn initial(&self, models: &Models) -> recombkin::Result<Distribution> {
        let (k, n) = (models.spec.k(), models.spec.n());
        match &self.initial {
            InitialConfig::Uniform => Distribution::uniform(k, n),
            InitialConfig::Stationary => Ok(models.mutation.q_lambda().clone()),
            InitialConfig::Point(g) => Distribution::point_mass(k, n, models.spec.parse(g)?),
            InitialConfig::Probs(p) => Distribution::new(k, n, p.clone()),
            InitialConfig::Random(seed) => random_distribution(k, n, &mut ChaCha8Rng::seed_from_u64(*seed)),
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let s = &self.integrator;
        IntegratorConfig {
            dt: s.dt,
            t_max: s.t_max,
            record_every: s.record_every,
            fixed_point_eps: s.fixed_point_eps,
            renorm_tol: s.renorm_tol,
            keep_snapshots: false,
        }
    }

    pub fn simulation(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            seed: self.seed,
            t_max: s.t_max,
            mode: s.mode,
            burn_in: s.burn_in,
            sample_every: s.sample_every,
            replicates: s.replicates,
            bookkeeping: s.bookkeeping,
        }
    }

    pub fn verify(&self) -> VerifyConfig {
        let s = &self.verify;
        VerifyConfig {
            seed: self.seed,
            lemma1_instances: s.lemma1_instances,
            chain_instances: s.chain_instances,
            rate_instances: s.rate_instances,
            max_chain_size: s.max_chain_size,
            chain_dt: s.chain_dt,
        }
    }
}

/// Substring over the configured alphabet: one character per letter, or
/// whitespace-separated labels for multi-character symbols.
fn parse_substring(spec: &AlphabetSpec, text: &str) -> recombkin::Result<Vec<usize>> {
    let find = |label: &str| {
        spec.symbols()
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| recombkin::Error::Validation(format!("unknown letter {label:?} in {text:?}")))
    };
    if text.contains(char::is_whitespace) {
        text.split_whitespace().map(find).collect()
    } else {
        text.chars().map(|c| find(&c.to_string())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"alphabet": {"k": 2, "n": 3}, "mutation": {"replicated": [[0, 1], [1, 0]]}}"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = load(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.integrator.dt, 1e-3);
        let models = cfg.models().unwrap();
        assert_eq!(models.recombination.members().len(), 3);
    }

    #[test]
    fn overrides_set_nested_fields() {
        let cfg = load(
            MINIMAL,
            &[
                "recombination.kappa=0.25".into(),
                "recombination.family=all-subsets".into(),
                "simulation.mode=\"I/I\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.recombination.kappa, 0.25);
        assert_eq!(cfg.simulation.mode, RecombinationMode::PairExchange);
        assert_eq!(cfg.models().unwrap().recombination.members().len(), 7);
        assert!(load(MINIMAL, &["novalue".into()]).is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = r#"{"alphabet": {"k": 2, "n": 3}, "mutation": {"replicated": [[0, 1], [1, 0]]}, "integrator": {"dt": "x"}}"#;
        match load(bad, &[]) {
            Err(Failure::Validation(msg)) => assert!(msg.contains("integrator.dt"), "{msg}"),
            _ => panic!("expected a validation failure"),
        }
    }

    #[test]
    fn table_similarity_and_substrings() {
        let spec = AlphabetSpec::new(2, 2).unwrap();
        assert_eq!(parse_substring(&spec, "AB").unwrap(), vec![0, 1]);
        assert!(parse_substring(&spec, "AC").is_err());
        let text = r#"{"alphabet": {"k": 2, "n": 1}, "mutation": {"replicated": [[0, 1], [1, 0]]},
            "recombination": {"similarity": {"kind": "table", "entries": [
                {"x": "A", "y": "A", "phi": 1}, {"x": "A", "y": "B", "phi": 0.5},
                {"x": "B", "y": "A", "phi": 0.2}, {"x": "B", "y": "B", "phi": 1}]}}}"#;
        let cfg = load(text, &[]).unwrap();
        assert!(cfg.models().is_err());
        let cfg = load(text, &["recombination.allow_asymmetric=true".into()]).unwrap();
        assert!(!cfg.models().unwrap().recombination.is_symmetric());
    }
}
