//! Scenario files: JSON with every block checked independently so that a
//! single load reports all problems at once.

use std::path::Path;

use openloop::equilibrium::{AdmissibilityConfig, Direction, EquivalenceConfig, SpikeConfig};
use openloop::fbsde::{LsmcConfig, SolverConfig};
use openloop::market::{Bounds, Coefficient, MarketModel};
use openloop::preferences::{DiscountFunction, DiscountKind, Kappa, TableConfig, UtilityFunction};
use openloop::market::Preferences;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    /// Every violation found, each prefixed with its field path.
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "config is not valid JSON: {e}"),
            ConfigError::Invalid(v) => {
                write!(f, "config has {} problem(s):", v.len())?;
                for e in v {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub d: usize,
    #[serde(default = "one_usize")]
    pub d1: usize,
    pub r: Coefficient,
    /// One entry per Brownian coordinate.
    pub theta: Vec<Coefficient>,
    pub income: Coefficient,
    pub terminal: Coefficient,
    /// Declared sup-norm bounds; derived from the coefficients when absent.
    #[serde(default)]
    pub bounds: Option<Bounds>,
    pub initial_wealth: f64,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    /// A built-in by name; only `softplus_shift` exists.
    Named(String),
    Coefficients(Kappa),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    Exponential {
        gamma: f64,
    },
    FrommImkeller {
        kappa: KappaSpec,
        #[serde(default)]
        table: TableConfig,
    },
}

impl UtilitySpec {
    pub fn build(&self) -> Result<UtilityFunction, String> {
        match self {
            UtilitySpec::Exponential { gamma } => UtilityFunction::exponential(*gamma).map_err(|e| e.to_string()),
            UtilitySpec::FrommImkeller { kappa, table } => {
                let k = match kappa {
                    KappaSpec::Named(n) if n == "softplus_shift" => Kappa::softplus_shift(),
                    KappaSpec::Named(n) => return Err(format!("unknown built-in kappa '{n}'")),
                    KappaSpec::Coefficients(k) => *k,
                };
                UtilityFunction::fromm_imkeller(k, *table).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencesSpec {
    pub u1: UtilitySpec,
    pub u2: UtilitySpec,
    pub lambda1: DiscountKind,
    pub lambda2: DiscountKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: Option<u64>,
    pub basis_degree: usize,
    pub z_max: f64,
    pub ode_step: Option<f64>,
    pub inner_paths: usize,
    pub stored_paths: usize,
    pub force_lsmc: bool,
}

impl Default for NumericsSpec {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 160,
            seed: None,
            basis_degree: 3,
            z_max: 10.0,
            ode_step: None,
            inner_paths: 64,
            stored_paths: 2000,
            force_lsmc: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// Spike times; empty means `{0, T/4, T/2, 3T/4}`.
    pub times: Vec<f64>,
    pub eps: Vec<f64>,
    /// Empty means `(±1, 0)` and `(0, ±e_i)` for every traded coordinate.
    pub bank: Vec<Direction>,
    pub p: f64,
    pub n_candidates: usize,
    pub candidate_amplitude: f64,
    /// Prefix sizes for the error-bar scaling of the duality check.
    pub duality_scaling: Vec<usize>,
    pub exp_rate: f64,
    pub moment_gammas: Vec<f64>,
    pub moment_window_steps: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            eps: vec![0.2, 0.1, 0.05, 0.025],
            bank: Vec::new(),
            p: 2.0,
            n_candidates: 100,
            candidate_amplitude: 0.2,
            duality_scaling: vec![1000, 10_000, 100_000],
            exp_rate: 5.0,
            moment_gammas: vec![1.0, 2.0],
            moment_window_steps: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

/// A validated scenario with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub market: MarketSpec,
    pub preferences: PreferencesSpec,
    pub numerics: NumericsSpec,
    pub verify: VerifySpec,
    pub output: OutputSpec,
}

const BLOCKS: [&str; 5] = ["market", "preferences", "numerics", "verify", "output"];

fn block<T: DeserializeOwned>(
    root: &serde_json::Map<String, serde_json::Value>,
    name: &str,
    required: bool,
    errors: &mut Vec<String>,
) -> Option<T> {
    match root.get(name) {
        None if required => {
            errors.push(format!("{name}: missing block"));
            None
        }
        None => serde_json::from_value(serde_json::Value::Object(Default::default()))
            .map_err(|e| errors.push(format!("{name}: {e}")))
            .ok(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| errors.push(format!("{name}: {e}")))
            .ok(),
    }
}

fn positive_finite(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let root = value
            .as_object()
            .ok_or_else(|| ConfigError::Invalid(vec!["<root>: expected a JSON object".into()]))?;
        let mut errors: Vec<String> = root
            .keys()
            .filter(|k| !BLOCKS.contains(&k.as_str()))
            .map(|k| format!("{k}: unknown block (expected one of {})", BLOCKS.join(", ")))
            .collect();
        let market = block::<MarketSpec>(root, "market", true, &mut errors);
        let preferences = block::<PreferencesSpec>(root, "preferences", true, &mut errors);
        let numerics = block::<NumericsSpec>(root, "numerics", false, &mut errors);
        let verify = block::<VerifySpec>(root, "verify", false, &mut errors);
        let output = block::<OutputSpec>(root, "output", false, &mut errors);
        match (market, preferences, numerics, verify, output) {
            (Some(market), Some(preferences), Some(mut numerics), Some(verify), Some(output)) if errors.is_empty() => {
                numerics.seed.get_or_insert(DEFAULT_SEED);
                let cfg = Self {
                    market,
                    preferences,
                    numerics,
                    verify,
                    output,
                };
                let issues = cfg.issues();
                if issues.is_empty() {
                    Ok(cfg)
                } else {
                    Err(ConfigError::Invalid(issues))
                }
            }
            _ => Err(ConfigError::Invalid(errors)),
        }
    }

    /// Every semantic violation, each naming its field.
    pub fn issues(&self) -> Vec<String> {
        let mut v = Vec::new();
        let m = &self.market;
        if !positive_finite(m.horizon) {
            v.push(format!("market.horizon: must be positive and finite, got {}", m.horizon));
        }
        if m.d == 0 {
            v.push("market.d: must be at least 1".into());
        }
        if m.d1 > m.d {
            v.push(format!("market.d1: {} exceeds market.d = {}", m.d1, m.d));
        }
        if m.theta.len() != m.d {
            v.push(format!("market.theta: {} entries for d = {}", m.theta.len(), m.d));
        }
        if !m.initial_wealth.is_finite() {
            v.push("market.initial_wealth: must be finite".into());
        }
        if let Some(b) = m.bounds {
            if !positive_finite(b.r) {
                v.push(format!("market.bounds.r: must be positive and finite, got {}", b.r));
            }
            if !positive_finite(b.theta) {
                v.push(format!("market.bounds.theta: must be positive and finite, got {}", b.theta));
            }
        }
        if v.is_empty() {
            if let Err(e) = self.market_model() {
                v.push(format!("market: {e}"));
            }
        }
        for (name, u) in [("u1", &self.preferences.u1), ("u2", &self.preferences.u2)] {
            if let Err(e) = u.build() {
                v.push(format!("preferences.{name}: {e}"));
            }
        }
        if positive_finite(m.horizon) {
            for (name, l) in [("lambda1", &self.preferences.lambda1), ("lambda2", &self.preferences.lambda2)] {
                if let Err(e) = DiscountFunction::new(l.clone(), m.horizon) {
                    v.push(format!("preferences.{name}: {e}"));
                }
            }
        }
        let n = &self.numerics;
        if n.n_paths < 2 {
            v.push("numerics.n_paths: must be at least 2".into());
        }
        if n.n_steps == 0 {
            v.push("numerics.n_steps: must be at least 1".into());
        }
        if n.basis_degree == 0 {
            v.push("numerics.basis_degree: must be at least 1".into());
        }
        if !positive_finite(n.z_max) {
            v.push("numerics.z_max: must be positive and finite".into());
        }
        if n.ode_step.is_some_and(|h| !positive_finite(h)) {
            v.push("numerics.ode_step: must be positive and finite".into());
        }
        if n.inner_paths == 0 {
            v.push("numerics.inner_paths: must be at least 1".into());
        }
        let s = &self.verify;
        if s.eps.len() < 2 {
            v.push("verify.eps: needs at least two window lengths".into());
        }
        if s.eps.iter().any(|e| !positive_finite(*e)) {
            v.push("verify.eps: entries must be positive".into());
        }
        if s.eps.windows(2).any(|w| w[1] >= w[0]) {
            v.push("verify.eps: ladder must be strictly descending".into());
        }
        if s.times.iter().any(|t| !(*t >= 0.0 && *t < m.horizon)) {
            v.push(format!("verify.times: every time must lie in [0, {})", m.horizon));
        }
        for (i, dir) in s.bank.iter().enumerate() {
            if dir.eta.len() != m.d1 {
                v.push(format!("verify.bank[{i}].eta: {} entries for d1 = {}", dir.eta.len(), m.d1));
            }
            if !dir.kappa.is_finite() || dir.eta.iter().any(|e| !e.is_finite()) {
                v.push(format!("verify.bank[{i}]: entries must be finite"));
            }
        }
        if s.p.is_nan() || s.p <= 1.0 {
            v.push(format!("verify.p: must exceed 1, got {}", s.p));
        }
        if !positive_finite(s.candidate_amplitude) {
            v.push("verify.candidate_amplitude: must be positive".into());
        }
        if !positive_finite(s.exp_rate) {
            v.push("verify.exp_rate: must be positive".into());
        }
        if s.moment_gammas.iter().any(|g| !positive_finite(*g)) {
            v.push("verify.moment_gammas: entries must be positive".into());
        }
        if s.moment_window_steps == 0 {
            v.push("verify.moment_window_steps: must be at least 1".into());
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                v.push(format!("output.formats: unknown format '{f}'"));
            }
        }
        v
    }

    pub fn seed(&self) -> u64 {
        self.numerics.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn market_model(&self) -> openloop::Result<MarketModel> {
        let m = &self.market;
        MarketModel::new(
            m.horizon,
            m.d,
            m.d1,
            m.r.clone(),
            m.theta.clone(),
            m.income.clone(),
            m.terminal.clone(),
            m.bounds,
        )
    }

    pub fn preferences(&self) -> Result<Preferences, String> {
        let p = &self.preferences;
        let h = self.market.horizon;
        Ok(Preferences {
            u1: p.u1.build()?,
            u2: p.u2.build()?,
            lambda1: DiscountFunction::new(p.lambda1.clone(), h).map_err(|e| e.to_string())?,
            lambda2: DiscountFunction::new(p.lambda2.clone(), h).map_err(|e| e.to_string())?,
        })
    }

    pub fn solver(&self, strict: bool) -> SolverConfig {
        let n = &self.numerics;
        SolverConfig {
            ode_step: n.ode_step,
            lsmc: LsmcConfig {
                degree: n.basis_degree,
                z_max: n.z_max,
                strict,
                ..LsmcConfig::default()
            },
            force_lsmc: n.force_lsmc,
            stored_paths: n.stored_paths,
        }
    }

    pub fn spike(&self) -> SpikeConfig {
        SpikeConfig {
            times: self.verify.times.clone(),
            bank: self.verify.bank.clone(),
            eps: self.verify.eps.clone(),
            n_inner: self.numerics.inner_paths,
            ..SpikeConfig::default()
        }
    }

    pub fn equivalence(&self) -> EquivalenceConfig {
        EquivalenceConfig {
            n_candidates: self.verify.n_candidates,
            amplitude: self.verify.candidate_amplitude,
        }
    }

    pub fn admissibility(&self) -> AdmissibilityConfig {
        AdmissibilityConfig {
            p: self.verify.p,
            eps: self.verify.eps.clone(),
            exp_rate: self.verify.exp_rate,
            ..AdmissibilityConfig::default()
        }
    }

    /// Canonical JSON of the resolved config (defaults included).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str = r#"{
        "market": {"horizon": 1.0, "r": 0.0, "theta": [0.3], "income": 0.05, "terminal": 0.1, "initial_wealth": 1.0},
        "preferences": {
            "u1": {"kind": "exponential", "gamma": 2.0},
            "u2": {"kind": "exponential", "gamma": 2.0},
            "lambda1": {"kind": "hyperbolic", "delta": 1.0},
            "lambda2": {"kind": "hyperbolic", "delta": 1.0}
        }
    }"#;

    #[test]
    fn defaults_are_injected() {
        let cfg = ScenarioConfig::parse(S1).unwrap();
        assert_eq!(cfg.numerics.seed, Some(42));
        assert_eq!(cfg.verify.eps, vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn every_violation_is_listed() {
        let text = S1
            .replace(r#""horizon": 1.0,"#, r#""horizon": 1.0, "d": 1, "d1": 2,"#)
            .replace(r#""gamma": 2.0},
            "u2""#, r#""gamma": -1.0},
            "u2""#)
            .replace(r#""market""#, r#""numerix": {}, "market""#);
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::parse(&text) else {
            panic!("expected a validation error");
        };
        assert!(v.iter().any(|e| e.starts_with("numerix")), "{v:?}");
        let text = S1.replace(r#""horizon": 1.0,"#, r#""horizon": 1.0, "d": 1, "d1": 2,"#);
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::parse(&text) else {
            panic!("expected a validation error");
        };
        assert!(v.iter().any(|e| e.starts_with("market.d1")), "{v:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = S1.replace(r#""r": 0.0"#, r#""rate": 0.0, "r": 0.0"#);
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::parse(&text) else {
            panic!("expected a validation error");
        };
        assert!(v[0].contains("rate"), "{v:?}");
    }

    #[test]
    fn semantic_issues_accumulate() {
        let text = S1
            .replace(r#""horizon": 1.0,"#, r#""horizon": 1.0, "d": 1, "d1": 2,"#)
            .replace(r#""preferences""#, r#""numerics": {"n_paths": 1, "z_max": -1.0}, "preferences""#);
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::parse(&text) else {
            panic!("expected a validation error");
        };
        assert!(v.len() >= 3, "{v:?}");
    }
}
