//! The five pipelines behind the CLI verbs. Each one writes its artifacts
//! and a top-level `report.json` into the output directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use openloop::equilibrium::{
    admissibility_probe, duality_martingale_check, equivalence_gap, extract_equilibrium, first_order_residuals,
    spike_variation_test, strategy_table, EquilibriumReport, EquilibriumStrategy,
};
use openloop::fbsde::{fmt17, solve, FbsdeSolution};
use openloop::market::{
    moment_bound_probe, ConstantStrategy, MarketModel, MomentProbeConfig, PathEnsemble, Preferences, Strategy,
    TimeGrid,
};
use openloop::preferences::{utility_class_check, UtilityFunction, UtilityKind, ValidationReport};
use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig};

/// Command-line overrides applied on top of the scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub strict: bool,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    /// Bad input that is not part of the scenario file.
    Input(String),
    Core(openloop::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Input(e) => write!(f, "{e}"),
            RunError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<openloop::Error> for RunError {
    fn from(e: openloop::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Core(e.into())
    }
}

impl RunError {
    /// 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core(openloop::Error::Numeric { .. }) => 3,
            _ => 2,
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Top-level summary written as `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub passed: bool,
    pub verdicts: BTreeMap<String, bool>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
    pub provenance: BTreeMap<String, String>,
    pub config: ScenarioConfig,
}

/// Scenario with overrides applied, plus everything built from it.
pub struct Context {
    pub cfg: ScenarioConfig,
    pub out: PathBuf,
    pub strict: bool,
    pub market: MarketModel,
    pub prefs: Preferences,
    pub warnings: Vec<String>,
}

impl Context {
    pub fn new(mut cfg: ScenarioConfig, ov: &Overrides) -> RunResult<Self> {
        if let Some(s) = ov.seed {
            cfg.numerics.seed = Some(s);
        }
        if let Some(n) = ov.paths {
            cfg.numerics.n_paths = n;
        }
        if let Some(n) = ov.steps {
            cfg.numerics.n_steps = n;
        }
        let issues = cfg.issues();
        if !issues.is_empty() {
            return Err(RunError::Config(ConfigError::Invalid(issues)));
        }
        let market = cfg.market_model()?;
        let prefs = cfg.preferences().map_err(RunError::Input)?;
        let out = ov.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
        std::fs::create_dir_all(&out)?;
        Ok(Self {
            cfg,
            out,
            strict: ov.strict,
            market,
            prefs,
            warnings: Vec::new(),
        })
    }

    pub fn load(path: &Path, ov: &Overrides) -> RunResult<Self> {
        Self::new(ScenarioConfig::load(path).map_err(RunError::Config)?, ov)
    }

    fn x0(&self) -> f64 {
        self.cfg.market.initial_wealth
    }

    fn grid(&self, steps: usize) -> RunResult<TimeGrid> {
        Ok(TimeGrid::uniform(self.cfg.market.horizon, steps)?)
    }

    fn ensemble(&self, steps: usize) -> RunResult<PathEnsemble> {
        Ok(PathEnsemble::new(
            self.grid(steps)?,
            self.market.d,
            self.cfg.seed(),
            self.cfg.numerics.n_paths,
        ))
    }

    fn solve(&self, ens: &PathEnsemble) -> RunResult<(FbsdeSolution, EquilibriumStrategy)> {
        let p = &self.prefs;
        let sol = solve(&self.market, &p.lambda2, &p.u1, &p.u2, self.x0(), ens, &self.cfg.solver(self.strict))?;
        let pair = extract_equilibrium(&sol, &p.u1, &p.u2, &p.lambda2)?;
        Ok((sol, pair))
    }

    fn wants(&self, format: &str) -> bool {
        self.cfg.output.formats.iter().any(|f| f == format)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T, artifacts: &mut Vec<String>) -> RunResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(openloop::Error::from)?;
        std::fs::write(self.out.join(name), text + "\n")?;
        artifacts.push(name.into());
        Ok(())
    }

    fn write_csv(
        &self,
        name: &str,
        artifacts: &mut Vec<String>,
        body: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> openloop::Result<()>,
    ) -> RunResult<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(self.out.join(name))?);
        body(&mut f)?;
        f.flush()?;
        artifacts.push(name.into());
        Ok(())
    }

    fn finish(
        &self,
        command: &str,
        verdicts: BTreeMap<String, bool>,
        notes: Vec<String>,
        mut artifacts: Vec<String>,
        provenance: BTreeMap<String, String>,
    ) -> RunResult<RunReport> {
        artifacts.push("report.json".into());
        let mut passed = verdicts.values().all(|v| *v);
        let mut failures: Vec<String> = verdicts.iter().filter(|(_, v)| !**v).map(|(k, _)| k.clone()).collect();
        if self.strict && !self.warnings.is_empty() {
            passed = false;
            failures.push("strict: warnings present".into());
        }
        let report = RunReport {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.cfg.seed(),
            config_hash: self.cfg.hash(),
            passed,
            verdicts,
            failures,
            warnings: self.warnings.clone(),
            notes,
            artifacts,
            provenance,
            config: self.cfg.clone(),
        };
        let text = serde_json::to_string_pretty(&report).map_err(openloop::Error::from)?;
        std::fs::write(self.out.join("report.json"), text + "\n")?;
        Ok(report)
    }
}

fn require_exponential(ctx: &Context, verb: &str) -> RunResult<()> {
    if ctx.prefs.u1.gamma().is_none() || ctx.prefs.u2.gamma().is_none() {
        return Err(RunError::Input(format!(
            "{verb} needs exponential utilities; general utilities can only be verified against a supplied strategy"
        )));
    }
    Ok(())
}

/// Solves the equilibrium FBSDE and writes `h.json`, `solution.csv`,
/// `solution.json` and `strategy.csv`.
pub fn run_solve(ctx: &Context) -> RunResult<RunReport> {
    require_exponential(ctx, "solve")?;
    let ens = ctx.ensemble(ctx.cfg.numerics.n_steps)?;
    let (sol, pair) = ctx.solve(&ens)?;
    let table = strategy_table(&pair, &ctx.market, ctx.x0(), &ens)?;
    let mut artifacts = Vec::new();
    if ctx.wants("json") {
        ctx.write_json("h.json", sol.h(), &mut artifacts)?;
        ctx.write_json("solution.json", &sol.meta(), &mut artifacts)?;
    }
    if ctx.wants("csv") {
        ctx.write_csv("solution.csv", &mut artifacts, |f| sol.write_csv(f))?;
        ctx.write_csv("strategy.csv", &mut artifacts, |f| table.write_csv(f))?;
    }
    let meta = sol.meta();
    let mut verdicts = BTreeMap::new();
    verdicts.insert("truncation_rate".to_string(), meta.diagnostics.truncation_rate <= 0.01);
    let mut provenance = BTreeMap::new();
    provenance.insert("solver".into(), provenance_name(&sol));
    provenance.insert("truncation_rate".into(), fmt17(meta.diagnostics.truncation_rate));
    ctx.finish("solve", verdicts, Vec::new(), artifacts, provenance)
}

fn provenance_name(sol: &FbsdeSolution) -> String {
    serde_json::to_value(sol.provenance)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// A strategy file: constant consumption and investment.
pub fn load_strategy(path: &Path) -> RunResult<ConstantStrategy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Core(openloop::Error::State(format!("strategy file {}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| RunError::Input(format!("strategy file {}: {e}", path.display())))
}

/// Runs every verifier on the equilibrium pair, or on a supplied strategy,
/// and writes `equilibrium.json`, `equilibrium_spike.csv` and `report.json`.
pub fn run_verify(ctx: &mut Context, strategy: Option<&ConstantStrategy>) -> RunResult<RunReport> {
    let spike_cfg = ctx.cfg.spike().resolved(&ctx.market);
    let horizon = ctx.cfg.market.horizon;
    let requested = ctx.cfg.numerics.n_steps;
    let steps = spike_cfg.required_steps(horizon, requested);
    if steps != requested {
        ctx.warnings.push(format!(
            "numerics.n_steps raised from {requested} to {steps} so every spike window spans at least {} steps",
            spike_cfg.min_window_steps
        ));
    }
    let ens = ctx.ensemble(steps)?;
    let mut notes = Vec::new();
    let mut provenance = BTreeMap::new();
    let solved = if strategy.is_none() {
        require_exponential(ctx, "verify")?;
        let (sol, pair) = ctx.solve(&ens)?;
        provenance.insert("solver".into(), provenance_name(&sol));
        Some((sol, pair))
    } else {
        None
    };
    if let Some(s) = strategy {
        if s.investment.len() != ctx.market.d {
            return Err(RunError::Input(format!(
                "strategy investment has {} entries for d = {}",
                s.investment.len(),
                ctx.market.d
            )));
        }
    }
    let pair: &dyn Strategy = match (&solved, strategy) {
        (Some((_, p)), _) => p,
        (None, Some(s)) => s,
        (None, None) => unreachable!(),
    };
    let (m, p, x0) = (&ctx.market, &ctx.prefs, ctx.x0());
    let mut report = EquilibriumReport::new(pair.label());
    match &solved {
        Some((sol, pair)) => {
            report.first_order = Some(first_order_residuals(pair, sol, &p.u1, &p.u2, &p.lambda2)?);
            let scaling: Vec<usize> = ctx
                .cfg
                .verify
                .duality_scaling
                .iter()
                .copied()
                .filter(|n| *n >= 2 && *n <= ens.n_paths())
                .collect();
            if scaling.len() < ctx.cfg.verify.duality_scaling.len() {
                notes.push(format!(
                    "duality scaling sizes above n_paths = {} were dropped",
                    ens.n_paths()
                ));
            }
            report.duality = Some(duality_martingale_check(pair, m, &p.u2, x0, &ens, &scaling)?);
        }
        None => notes.push(
            "supplied strategy carries no adjoint state: first-order and duality checks skipped".into(),
        ),
    }
    report.spike = Some(spike_variation_test(pair, m, p, x0, &spike_cfg, &ens)?);
    report.equivalence = Some(equivalence_gap(pair, m, p, x0, &ctx.cfg.equivalence(), &ens)?);
    report.admissibility = Some(admissibility_probe(pair, m, &p.u1, &p.u2, x0, &ctx.cfg.admissibility(), &ens)?);
    report.finish();
    if let Some(s) = &report.spike {
        notes.extend(s.violations.iter().map(|v| format!("spike violation: {v}")));
    }
    let mut artifacts = Vec::new();
    if ctx.wants("json") {
        ctx.write_json("equilibrium.json", &report, &mut artifacts)?;
    }
    if ctx.wants("csv") {
        if let Some(s) = &report.spike {
            ctx.write_csv("equilibrium_spike.csv", &mut artifacts, |f| s.write_csv(f))?;
        }
    }
    provenance.insert("strategy".into(), report.strategy.clone());
    provenance.insert("steps".into(), steps.to_string());
    ctx.finish("verify", report.verdicts.clone(), notes, artifacts, provenance)
}

/// Candidate comparison on the time-consistent reward only.
pub fn run_equivalence(ctx: &Context) -> RunResult<RunReport> {
    require_exponential(ctx, "equivalence")?;
    let ens = ctx.ensemble(ctx.cfg.numerics.n_steps)?;
    let (_, pair) = ctx.solve(&ens)?;
    let rep = equivalence_gap(&pair, &ctx.market, &ctx.prefs, ctx.x0(), &ctx.cfg.equivalence(), &ens)?;
    let mut artifacts = Vec::new();
    if ctx.wants("json") {
        ctx.write_json("equivalence.json", &rep, &mut artifacts)?;
    }
    if ctx.wants("csv") {
        ctx.write_csv("equivalence.csv", &mut artifacts, |f| {
            writeln!(f, "index,gap,se,gap_r,se_r,first_order,first_order_se,passed")?;
            for r in &rep.rows {
                let (fo, fo_se) = r.first_order.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.se));
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    r.index,
                    fmt17(r.gap.mean),
                    fmt17(r.gap.se),
                    fmt17(r.gap_r.mean),
                    fmt17(r.gap_r.se),
                    fmt17(fo),
                    fmt17(fo_se),
                    r.passed
                )?;
            }
            Ok(())
        })?;
    }
    let mut verdicts = BTreeMap::new();
    verdicts.insert("equivalence".to_string(), rep.passed);
    if let Some(f) = rep.first_order_passed {
        verdicts.insert("equivalence_first_order".to_string(), f);
    }
    if let Some(gap) = rep.exponential_identity {
        verdicts.insert("exponential_identity".to_string(), gap <= 1e-12);
        verdicts.insert("verdicts_agree".to_string(), rep.verdicts_agree);
    }
    let notes = if rep.skipped > 0 {
        vec![format!("{} candidate(s) skipped", rep.skipped)]
    } else {
        Vec::new()
    };
    ctx.finish("equivalence", verdicts, notes, artifacts, BTreeMap::new())
}

/// Moment scaling of the perturbation process at `t = 0`, driven by the
/// first direction of the configured bank or by a unit spike in every
/// control when the bank is empty.
pub fn run_moments(ctx: &Context) -> RunResult<RunReport> {
    let m = &ctx.market;
    let v = &ctx.cfg.verify;
    let mut eta = vec![0.0; m.d];
    let kappa = match v.bank.first() {
        Some(dir) => {
            eta[..m.d1].copy_from_slice(&dir.eta);
            dir.kappa
        }
        None => {
            if m.d1 > 0 {
                eta[0] = 1.0;
            }
            1.0
        }
    };
    let ens = ctx.ensemble(ctx.cfg.numerics.n_steps)?;
    let rep = moment_bound_probe(
        m,
        &MomentProbeConfig {
            t: 0.0,
            kappa,
            eta,
            eps: v.eps.clone(),
            gammas: v.moment_gammas.clone(),
            exp_rate: v.exp_rate,
            window_steps: v.moment_window_steps,
            base_steps: ctx.cfg.numerics.n_steps,
        },
        &ens,
    )?;
    let mut artifacts = Vec::new();
    if ctx.wants("json") {
        ctx.write_json("moments.json", &rep, &mut artifacts)?;
    }
    if ctx.wants("csv") {
        ctx.write_csv("moments.csv", &mut artifacts, |f| {
            writeln!(f, "gamma,eps,moment,se")?;
            for r in &rep.rows {
                writeln!(f, "{},{},{},{}", fmt17(r.gamma), fmt17(r.eps), fmt17(r.moment.mean), fmt17(r.moment.se))?;
            }
            Ok(())
        })?;
    }
    let mut verdicts = BTreeMap::new();
    for s in &rep.slopes {
        verdicts.insert(format!("slope_gamma_{}", s.gamma), s.passed);
    }
    verdicts.insert("exp_moment_finite".to_string(), rep.exp_finite);
    ctx.finish("moments", verdicts, rep.notes.clone(), artifacts, BTreeMap::new())
}

#[derive(Serialize)]
struct Validation {
    lambda1: ValidationReport,
    lambda2: ValidationReport,
    u1: ValidationReport,
    u2: ValidationReport,
}

fn class_range(u: &UtilityFunction) -> (f64, f64) {
    match u.kind() {
        UtilityKind::Exponential { .. } => (-10.0, 10.0),
        UtilityKind::FrommImkeller(t) => t.range(),
    }
}

/// Membership checks of both discount functions and both utilities.
pub fn run_validate(ctx: &Context) -> RunResult<RunReport> {
    let p = &ctx.prefs;
    let check = |u: &UtilityFunction, name: &str| {
        let (lo, hi) = class_range(u);
        utility_class_check(u, name, lo, hi, 401)
    };
    let v = Validation {
        lambda1: p.lambda1.validate(200),
        lambda2: p.lambda2.validate(200),
        u1: check(&p.u1, "u1"),
        u2: check(&p.u2, "u2"),
    };
    let mut artifacts = Vec::new();
    ctx.write_json("validation.json", &v, &mut artifacts)?;
    let mut verdicts = BTreeMap::new();
    for (k, r) in [("lambda1", &v.lambda1), ("lambda2", &v.lambda2), ("u1", &v.u1), ("u2", &v.u2)] {
        verdicts.insert(k.to_string(), r.passed);
    }
    ctx.finish("validate", verdicts, Vec::new(), artifacts, BTreeMap::new())
}
