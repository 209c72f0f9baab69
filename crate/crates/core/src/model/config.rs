//! Line-oriented configuration files.
//!
//! ```text
//! # comment
//! [model]
//! beta = 1
//! zp_1 = cos(0.5*cos(pi*x))
//! [numerics]
//! delta_a = 0.02
//! [run]
//! eps_list = 0.1, 0.05, 0.025
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use super::expr::{ExprError, RateExpr};
use super::validate::{validate_hypotheses, ValidationReport};
use super::{
    Bounds, ModelProblem, NumericsParams, DEFAULT_ARMIJO_C, DEFAULT_BACKTRACK,
    DEFAULT_LIMIT_DT_SAFETY, DEFAULT_MAX_INNER, DEFAULT_TOL_AGE, DEFAULT_TOL_GRAD,
};
use crate::density::InitMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { section: String, line: usize },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        section: String,
        key: String,
        line: usize,
    },
    #[error("line {line}: duplicate key `{key}` in [{section}]")]
    DuplicateKey {
        section: String,
        key: String,
        line: usize,
    },
    #[error("missing key `{key}` in [{section}]")]
    MissingKey { section: String, key: String },
    #[error("line {line}: delta_t is derived by CFL (delta_t = epsilon * delta_a) and cannot be set")]
    DerivedKey { line: usize },
    #[error("[{section}] {key}: {message}")]
    InvalidValue {
        section: String,
        key: String,
        message: String,
    },
    #[error("[{section}] {key}: {source}")]
    Expr {
        section: String,
        key: String,
        #[source]
        source: ExprError,
    },
    #[error("hypotheses not satisfied:\n{0}")]
    Hypotheses(ValidationReport),
}

/// How the age step follows epsilon in an epsilon sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaScaling {
    /// Every member uses the configured `delta_a`.
    Shared,
    /// `delta_a` scales with epsilon relative to the first list entry.
    Proportional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub eps_list: Vec<f64>,
    pub da_list: Vec<f64>,
    pub da_scaling: DaScaling,
    pub init: InitMode,
    pub psi: RateExpr,
    pub layer_horizon: f64,
    pub stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: None,
            eps_list: Vec::new(),
            da_list: Vec::new(),
            da_scaling: DaScaling::Shared,
            init: InitMode::CellAverage,
            psi: RateExpr::parse("exp(-a)").expect("static expression"),
            layer_horizon: 6.0,
            stride: 1,
        }
    }
}

/// Everything a config file describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub problem: ModelProblem,
    pub numerics: NumericsParams,
    pub run: RunConfig,
}

impl Setup {
    /// Renders a config that parses back into the same records.
    pub fn to_config_string(&self) -> String {
        let p = &self.problem;
        let n = &self.numerics;
        let r = &self.run;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "beta = {}", p.beta);
        let _ = writeln!(s, "zeta = {}", p.zeta);
        let _ = writeln!(s, "beta0 = {}", p.beta0);
        let _ = writeln!(s, "zeta0 = {}", p.zeta0);
        let _ = writeln!(s, "rho_I = {}", p.rho_i);
        for (i, z) in p.z_p.iter().enumerate() {
            let _ = writeln!(s, "zp_{} = {}", i + 1, z);
        }
        let _ = writeln!(s, "d = {}", p.d);
        let _ = writeln!(s, "epsilon = {:?}", p.epsilon);
        let _ = writeln!(s, "T = {:?}", p.horizon);
        let b = &p.bounds;
        let _ = writeln!(s, "beta_min = {:?}", b.beta_min);
        let _ = writeln!(s, "beta_max = {:?}", b.beta_max);
        let _ = writeln!(s, "zeta_min = {:?}", b.zeta_min);
        let _ = writeln!(s, "zeta_max = {:?}", b.zeta_max);
        let _ = writeln!(s, "M = {:?}", b.m);
        let _ = writeln!(s, "mu_I_min = {:?}", b.mu_i_min);
        let _ = writeln!(s, "mu0_min = {:?}", b.mu0_min);
        let _ = writeln!(s, "\n[numerics]");
        let _ = writeln!(s, "delta_a = {:?}", n.delta_a);
        let _ = writeln!(s, "Nx = {}", n.nx);
        let _ = writeln!(s, "A_max = {:?}", n.a_max);
        let _ = writeln!(s, "tol_age = {:?}", n.tol_age);
        let _ = writeln!(s, "tol_grad = {:?}", n.tol_grad);
        let _ = writeln!(s, "max_inner = {}", n.max_inner);
        let _ = writeln!(s, "limit_dt_safety = {:?}", n.limit_dt_safety);
        let _ = writeln!(s, "armijo_c = {:?}", n.armijo_c);
        let _ = writeln!(s, "backtrack = {:?}", n.backtrack);
        let _ = writeln!(s, "\n[run]");
        if let Some(out) = &r.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        if !r.eps_list.is_empty() {
            let _ = writeln!(s, "eps_list = {}", list(&r.eps_list));
        }
        if !r.da_list.is_empty() {
            let _ = writeln!(s, "da_list = {}", list(&r.da_list));
        }
        let scaling = match r.da_scaling {
            DaScaling::Shared => "shared",
            DaScaling::Proportional => "proportional",
        };
        let _ = writeln!(s, "da_scaling = {scaling}");
        let init = match r.init {
            InitMode::CellAverage => "cell_average",
            InitMode::DiscreteSteady => "discrete_steady",
        };
        let _ = writeln!(s, "init = {init}");
        let _ = writeln!(s, "psi = {}", r.psi);
        let _ = writeln!(s, "layer_horizon = {:?}", r.layer_horizon);
        let _ = writeln!(s, "stride = {}", r.stride);
        s
    }
}

const MODEL_KEYS: &[&str] = &[
    "beta", "zeta", "beta0", "zeta0", "rho_I", "d", "epsilon", "T", "beta_min", "beta_max",
    "zeta_min", "zeta_max", "M", "mu_I_min", "mu0_min",
];
const NUMERICS_KEYS: &[&str] = &[
    "delta_a",
    "Nx",
    "A_max",
    "tol_age",
    "tol_grad",
    "max_inner",
    "limit_dt_safety",
    "armijo_c",
    "backtrack",
];
const RUN_KEYS: &[&str] = &[
    "out",
    "eps_list",
    "da_list",
    "da_scaling",
    "init",
    "psi",
    "layer_horizon",
    "stride",
];

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    name: &'static str,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.to_string(),
            key: key.to_string(),
        })
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            section: self.name.to_string(),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn real(&self, key: &str) -> Result<f64, ConfigError> {
        let raw = self.required(key)?;
        self.parse_real(key, raw)
    }

    fn parse_real(&self, key: &str, raw: &str) -> Result<f64, ConfigError> {
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.invalid(key, format!("`{raw}` is not a finite real"))),
        }
    }

    fn opt_real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            Some(raw) => self.parse_real(key, raw),
            None => Ok(default),
        }
    }

    fn positive(&self, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.invalid(key, "must be positive"))
        }
    }

    fn integer(&self, key: &str, raw: &str) -> Result<usize, ConfigError> {
        raw.trim()
            .parse::<usize>()
            .map_err(|_| self.invalid(key, format!("`{raw}` is not a non-negative integer")))
    }

    fn opt_integer(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            Some(raw) => self.integer(key, raw),
            None => Ok(default),
        }
    }

    fn expr(&self, key: &str) -> Result<RateExpr, ConfigError> {
        let raw = self.required(key)?;
        RateExpr::parse(raw).map_err(|source| ConfigError::Expr {
            section: self.name.to_string(),
            key: key.to_string(),
            source,
        })
    }

    fn real_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(raw) => raw
                .split(',')
                .map(|item| self.parse_real(key, item))
                .collect(),
        }
    }
}

fn section_name(raw: &str) -> Option<&'static str> {
    match raw {
        "model" => Some("model"),
        "numerics" => Some("numerics"),
        "run" => Some("run"),
        _ => None,
    }
}

fn key_allowed(section: &str, key: &str) -> bool {
    let fixed = match section {
        "model" => MODEL_KEYS,
        "numerics" => NUMERICS_KEYS,
        _ => RUN_KEYS,
    };
    if fixed.contains(&key) {
        return true;
    }
    section == "model"
        && key
            .strip_prefix("zp_")
            .is_some_and(|i| i.parse::<usize>().is_ok_and(|i| i >= 1))
}

fn split_sections(text: &str) -> Result<BTreeMap<&'static str, Section>, ConfigError> {
    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: "unterminated section header".into(),
                });
            };
            let name = name.trim();
            let Some(name) = section_name(name) else {
                return Err(ConfigError::UnknownSection {
                    section: name.to_string(),
                    line,
                });
            };
            sections.entry(name).or_insert_with(|| Section {
                name,
                entries: BTreeMap::new(),
            });
            current = Some(name);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key == "delta_t" {
            return Err(ConfigError::DerivedKey { line });
        }
        let Some(section) = current else {
            return Err(ConfigError::Syntax {
                line,
                message: "key outside of a section".into(),
            });
        };
        if !key_allowed(section, key) {
            return Err(ConfigError::UnknownKey {
                section: section.to_string(),
                key: key.to_string(),
                line,
            });
        }
        let entries = &mut sections.get_mut(section).expect("section exists").entries;
        if entries.contains_key(key) {
            return Err(ConfigError::DuplicateKey {
                section: section.to_string(),
                key: key.to_string(),
                line,
            });
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

/// Parses a config without checking the hypotheses.
pub fn parse_config(text: &str) -> Result<Setup, ConfigError> {
    let mut sections = split_sections(text)?;
    let empty = |name: &'static str| Section {
        name,
        entries: BTreeMap::new(),
    };
    let model = sections.remove("model").unwrap_or_else(|| empty("model"));
    let numerics = sections
        .remove("numerics")
        .unwrap_or_else(|| empty("numerics"));
    let run = sections.remove("run").unwrap_or_else(|| empty("run"));

    let d = model.integer("d", model.required("d")?)?;
    if d < 2 {
        return Err(model.invalid("d", "target dimension must be at least 2"));
    }
    let mut z_p = Vec::with_capacity(d);
    for i in 1..=d {
        z_p.push(model.expr(&format!("zp_{i}"))?);
    }
    if let Some((key, entry)) = model
        .entries
        .iter()
        .filter_map(|(k, e)| Some((k, e, k.strip_prefix("zp_")?.parse::<usize>().ok()?)))
        .find(|(_, _, i)| *i > d)
        .map(|(k, e, _)| (k, e))
    {
        return Err(ConfigError::UnknownKey {
            section: "model".into(),
            key: key.clone(),
            line: entry.line,
        });
    }
    let epsilon = model.positive("epsilon", model.real("epsilon")?)?;
    let horizon = model.positive("T", model.real("T")?)?;
    let bounds = Bounds {
        beta_min: model.real("beta_min")?,
        beta_max: model.real("beta_max")?,
        zeta_min: model.real("zeta_min")?,
        zeta_max: model.real("zeta_max")?,
        m: model.real("M")?,
        mu_i_min: model.real("mu_I_min")?,
        mu0_min: model.real("mu0_min")?,
    };
    let problem = ModelProblem {
        beta: model.expr("beta")?,
        zeta: model.expr("zeta")?,
        beta0: model.expr("beta0")?,
        zeta0: model.expr("zeta0")?,
        rho_i: model.expr("rho_I")?,
        z_p,
        d,
        epsilon,
        horizon,
        bounds,
    };

    let delta_a = numerics.positive("delta_a", numerics.real("delta_a")?)?;
    let nx = numerics.integer("Nx", numerics.required("Nx")?)?;
    if nx < 2 {
        return Err(numerics.invalid("Nx", "at least two nodes are required"));
    }
    let a_max = match numerics.raw("A_max") {
        Some(raw) => Some(numerics.positive("A_max", numerics.parse_real("A_max", raw)?)?),
        None => None,
    };
    let tol_age = numerics.positive("tol_age", numerics.opt_real("tol_age", DEFAULT_TOL_AGE)?)?;
    let mut params = NumericsParams::new(epsilon, delta_a, nx, a_max, tol_age, &bounds);
    params.tol_grad = numerics.positive(
        "tol_grad",
        numerics.opt_real("tol_grad", DEFAULT_TOL_GRAD)?,
    )?;
    params.max_inner = numerics.opt_integer("max_inner", DEFAULT_MAX_INNER)?;
    params.limit_dt_safety = numerics.positive(
        "limit_dt_safety",
        numerics.opt_real("limit_dt_safety", DEFAULT_LIMIT_DT_SAFETY)?,
    )?;
    if params.limit_dt_safety > 1.0 {
        return Err(numerics.invalid("limit_dt_safety", "must not exceed 1"));
    }
    params.armijo_c = numerics.opt_real("armijo_c", DEFAULT_ARMIJO_C)?;
    if !(params.armijo_c > 0.0 && params.armijo_c < 0.5) {
        return Err(numerics.invalid("armijo_c", "must lie in (0, 0.5)"));
    }
    params.backtrack = numerics.opt_real("backtrack", DEFAULT_BACKTRACK)?;
    if !(params.backtrack > 0.0 && params.backtrack < 1.0) {
        return Err(numerics.invalid("backtrack", "must lie in (0, 1)"));
    }

    let mut run_cfg = RunConfig {
        out: run.raw("out").map(PathBuf::from),
        eps_list: run.real_list("eps_list")?,
        da_list: run.real_list("da_list")?,
        ..RunConfig::default()
    };
    if let Some(raw) = run.raw("da_scaling") {
        run_cfg.da_scaling = match raw {
            "shared" => DaScaling::Shared,
            "proportional" => DaScaling::Proportional,
            _ => return Err(run.invalid("da_scaling", "expected `shared` or `proportional`")),
        };
    }
    if let Some(raw) = run.raw("init") {
        run_cfg.init = match raw {
            "cell_average" => InitMode::CellAverage,
            "discrete_steady" => InitMode::DiscreteSteady,
            _ => {
                return Err(run.invalid("init", "expected `cell_average` or `discrete_steady`"))
            }
        };
    }
    if run.raw("psi").is_some() {
        run_cfg.psi = run.expr("psi")?;
    }
    run_cfg.layer_horizon = run.positive(
        "layer_horizon",
        run.opt_real("layer_horizon", run_cfg.layer_horizon)?,
    )?;
    run_cfg.stride = run.opt_integer("stride", 1)?.max(1);
    for (key, list) in [("eps_list", &run_cfg.eps_list), ("da_list", &run_cfg.da_list)] {
        if list.iter().any(|v| *v <= 0.0) {
            return Err(run.invalid(key, "entries must be positive"));
        }
        if list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(run.invalid(key, "entries must be strictly decreasing"));
        }
    }

    Ok(Setup {
        problem,
        numerics: params,
        run: run_cfg,
    })
}

/// Parses a config and checks the standing hypotheses; any failed check is
/// an error.
pub fn load_problem(text: &str) -> Result<Setup, ConfigError> {
    let setup = parse_config(text)?;
    let report = validate_hypotheses(&setup.problem, &setup.numerics);
    if !report.passed() {
        return Err(ConfigError::Hypotheses(report));
    }
    Ok(setup)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = "\
# constant rates
[model]
beta = 1
zeta = 1
beta0 = 1
zeta0 = 1
rho_I = 0.25*exp(-a)
zp_1 = cos(0.5*cos(pi*x))
zp_2 = sin(0.5*cos(pi*x))
d = 2
epsilon = 0.05
T = 1
beta_min = 1
beta_max = 1
zeta_min = 1
zeta_max = 1
M = 2
mu_I_min = 0.2
mu0_min = 0.1

[numerics]
delta_a = 0.02
Nx = 65
";

    #[test]
    fn minimal_config_round_trips() {
        let setup = load_problem(MINIMAL).unwrap();
        assert_eq!(setup.problem.d, 2);
        assert_eq!(setup.numerics.delta_t(), 0.001);
        assert_eq!(setup.numerics.nx, 65);
        let echoed = setup.to_config_string();
        let again = parse_config(&echoed).unwrap();
        assert_eq!(again, setup);
    }

    #[test]
    fn explicit_delta_t_is_rejected() {
        let text = format!("{MINIMAL}delta_t = 0.001\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::DerivedKey { .. }));
        assert!(err.to_string().contains("delta_t is derived by CFL"));
    }

    #[test]
    fn missing_and_duplicate_keys() {
        let text = MINIMAL.replace("zeta0 = 1\n", "");
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::MissingKey { key, .. } if key == "zeta0"
        ));
        let text = MINIMAL.replace("beta0 = 1\n", "beta0 = 1\nbeta0 = 2\n");
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::DuplicateKey { key, .. } if key == "beta0"
        ));
        let text = MINIMAL.replace("d = 2\n", "d = 2\nzp_3 = 0\n");
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::UnknownKey { key, .. } if key == "zp_3"
        ));
        let text = format!("{MINIMAL}[other]\n");
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::UnknownSection { .. }
        ));
    }

    #[test]
    fn bad_expression_reports_key() {
        let text = MINIMAL.replace("beta = 1\n", "beta = cos(pi*x\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Expr { ref key, .. } if key == "beta"), "{err}");
    }

    #[test]
    fn hypothesis_failure_aborts_loading() {
        let text = MINIMAL.replace("beta = 1\n", "beta = 0\n");
        assert!(matches!(
            load_problem(&text).unwrap_err(),
            ConfigError::Hypotheses(_)
        ));
    }

    #[test]
    fn run_section() {
        let text = format!(
            "{MINIMAL}[run]\neps_list = 0.1, 0.05,0.025\nda_scaling = proportional\ninit = discrete_steady\n"
        );
        let setup = parse_config(&text).unwrap();
        assert_eq!(setup.run.eps_list, vec![0.1, 0.05, 0.025]);
        assert_eq!(setup.run.da_scaling, DaScaling::Proportional);
        assert_eq!(setup.run.init, InitMode::DiscreteSteady);
        let text = format!("{MINIMAL}[run]\neps_list = 0.1, 0.2\n");
        assert!(parse_config(&text).is_err());
    }
}
