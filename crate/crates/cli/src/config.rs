//! Scenario configuration: JSON schema, validation with field-level
//! diagnostics, default filling, and construction of the runtime objects.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use securesim_core::attack::{
    run_scenario, AttackConfig, AttackStrategy, InfeasiblePolicy, ScenarioOptions, SimTrace,
};
use securesim_core::matjson::MatrixJson;
use securesim_core::model::{zoh_discretize, LtiSystem};
use securesim_core::safety::PolyhedralCbf;
use securesim_core::NumericConfig;

pub const DEFAULT_GAMMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    pub safe_set: SafeSetConfig,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub s: usize,
    pub attack: AttackSection,
    pub x_true0: Vec<f64>,
    pub horizon: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub nominal: NominalConfig,
    #[serde(default)]
    pub numeric: NumericOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousSystem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSystem>,
    pub c: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSystem {
    pub ac: MatrixJson,
    pub bc: MatrixJson,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSystem {
    pub a: MatrixJson,
    pub b: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetConfig {
    pub h: MatrixJson,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default)]
    pub attacked: Vec<usize>,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrategyConfig {
    #[default]
    None,
    FakeState(Vec<f64>),
    Script(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NominalConfig {
    #[default]
    Zero,
    Sinusoid {
        amp: f64,
        freq: f64,
    },
    Explicit(Vec<Vec<f64>>),
}

/// Per-field numeric overrides; unset fields take the library defaults,
/// except `dedup_tol` (ten times the residual tolerance) and `noise_std`
/// (the sensor noise level from the attack section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NumericOverrides {
    pub tol_rank: Option<f64>,
    pub residual_tol: Option<f64>,
    pub dedup_tol: Option<f64>,
    pub tol_margin_abs: Option<f64>,
    pub tol_margin_rel: Option<f64>,
    pub noise_std: Option<f64>,
    pub feasibility_samples: Option<usize>,
    pub qp_max_iter: Option<usize>,
    pub qp_tol: Option<f64>,
}

impl NumericOverrides {
    fn resolve(&self, sensor_noise: f64) -> NumericConfig {
        let d = NumericConfig::default();
        let residual_tol = self.residual_tol.unwrap_or(d.residual_tol);
        NumericConfig {
            tol_rank: self.tol_rank.unwrap_or(d.tol_rank),
            residual_tol,
            dedup_tol: self.dedup_tol.unwrap_or(10.0 * residual_tol),
            tol_margin_abs: self.tol_margin_abs.unwrap_or(d.tol_margin_abs),
            tol_margin_rel: self.tol_margin_rel.unwrap_or(d.tol_margin_rel),
            noise_std: self.noise_std.unwrap_or(sensor_noise),
            feasibility_samples: self.feasibility_samples.unwrap_or(d.feasibility_samples),
            qp_max_iter: self.qp_max_iter.unwrap_or(d.qp_max_iter),
            qp_tol: self.qp_tol.unwrap_or(d.qp_tol),
        }
    }

    fn from_resolved(cfg: &NumericConfig) -> Self {
        Self {
            tol_rank: Some(cfg.tol_rank),
            residual_tol: Some(cfg.residual_tol),
            dedup_tol: Some(cfg.dedup_tol),
            tol_margin_abs: Some(cfg.tol_margin_abs),
            tol_margin_rel: Some(cfg.tol_margin_rel),
            noise_std: Some(cfg.noise_std),
            feasibility_samples: Some(cfg.feasibility_samples),
            qp_max_iter: Some(cfg.qp_max_iter),
            qp_tol: Some(cfg.qp_tol),
        }
    }
}

/// Configuration error with the offending field spelled out.
#[derive(Debug, Clone)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = Result<T, ConfigError>;

fn field_err<T>(field: &str, msg: impl std::fmt::Display) -> CfgResult<T> {
    Err(ConfigError(format!("{field}: {msg}")))
}

/// Runtime objects built from a validated configuration.
#[derive(Debug)]
pub struct BuiltScenario {
    pub sys: LtiSystem,
    pub cbf: PolyhedralCbf,
    pub attack: AttackConfig,
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub window: usize,
    pub s: usize,
    pub cfg: NumericConfig,
    /// Physical seconds per step, used for trace timestamps.
    pub dt: f64,
    nominal: NominalConfig,
}

impl BuiltScenario {
    pub fn nominal_input(&self, step: usize) -> DVector<f64> {
        let m = self.sys.input_dim();
        match &self.nominal {
            NominalConfig::Zero => DVector::zeros(m),
            NominalConfig::Sinusoid { amp, freq } => DVector::from_fn(m, |j, _| {
                amp * (freq * step as f64 + j as f64 * std::f64::consts::FRAC_PI_2).sin()
            }),
            NominalConfig::Explicit(list) => DVector::from_column_slice(&list[step]),
        }
    }

    pub fn run(
        &self,
        policy: InfeasiblePolicy,
        enforce_premise: bool,
    ) -> securesim_core::Result<SimTrace> {
        let opts = ScenarioOptions {
            horizon: self.horizon,
            window: self.window,
            infeasible_policy: policy,
            enforce_premise,
            persistent_pruning: true,
        };
        run_scenario(
            &self.sys,
            &self.cbf,
            &self.x0,
            &self.attack,
            |step| self.nominal_input(step),
            &opts,
            &self.cfg,
        )
    }
}

pub fn parse_config(text: &str) -> CfgResult<ScenarioConfig> {
    serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))
}

pub fn load_config(path: &std::path::Path) -> CfgResult<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl ScenarioConfig {
    /// Validates the configuration and constructs the runtime objects.
    pub fn build(&self) -> CfgResult<BuiltScenario> {
        let c = self
            .system
            .c
            .to_matrix()
            .or_else(|e| field_err("system.c", e))?;
        let (a, b, dt) = match (&self.system.continuous, &self.system.discrete) {
            (Some(_), Some(_)) => {
                return field_err("system", "give either continuous or discrete, not both")
            }
            (None, None) => {
                return field_err("system", "one of continuous or discrete is required")
            }
            (Some(cont), None) => {
                let ac = cont
                    .ac
                    .to_matrix()
                    .or_else(|e| field_err("system.continuous.ac", e))?;
                let bc = cont
                    .bc
                    .to_matrix()
                    .or_else(|e| field_err("system.continuous.bc", e))?;
                let (a, b) = zoh_discretize(&ac, &bc, cont.dt)
                    .or_else(|e| field_err("system.continuous", e))?;
                (a, b, cont.dt)
            }
            (None, Some(disc)) => {
                let a = disc
                    .a
                    .to_matrix()
                    .or_else(|e| field_err("system.discrete.a", e))?;
                let b = disc
                    .b
                    .to_matrix()
                    .or_else(|e| field_err("system.discrete.b", e))?;
                (a, b, 1.0)
            }
        };
        let sys = LtiSystem::new(a, b, c).or_else(|e| field_err("system", e))?;
        let n = sys.state_dim();
        let p = sys.sensor_count();

        let h = self
            .safe_set
            .h
            .to_matrix()
            .or_else(|e| field_err("safe_set.H", e))?;
        if h.ncols() != n {
            return field_err(
                "safe_set.H",
                format!("needs {n} columns to match the state dimension, got {}", h.ncols()),
            );
        }
        if self.safe_set.q.len() != h.nrows() {
            return field_err(
                "safe_set.q",
                format!(
                    "needs {} entries to match H, got {}",
                    h.nrows(),
                    self.safe_set.q.len()
                ),
            );
        }
        let gamma = self.gamma.unwrap_or(DEFAULT_GAMMA);
        let cbf = PolyhedralCbf::new(h, DVector::from_column_slice(&self.safe_set.q), gamma)
            .or_else(|e| field_err("safe_set", e))?;

        if self.s >= p {
            return field_err("s", format!("must be below the sensor count p = {p}"));
        }
        let strategy = match &self.attack.strategy {
            StrategyConfig::None => AttackStrategy::None,
            StrategyConfig::FakeState(x) => {
                if x.len() != n {
                    return field_err(
                        "attack.strategy.fake_state",
                        format!("needs {n} entries, got {}", x.len()),
                    );
                }
                AttackStrategy::FakeState(DVector::from_column_slice(x))
            }
            StrategyConfig::Script(rows) => {
                if rows.len() < self.horizon {
                    return field_err(
                        "attack.strategy.script",
                        format!("needs {} steps, got {}", self.horizon, rows.len()),
                    );
                }
                if rows.iter().any(|r| r.len() != p) {
                    return field_err(
                        "attack.strategy.script",
                        format!("every step needs {p} entries"),
                    );
                }
                AttackStrategy::Script(
                    rows.iter().map(|r| DVector::from_column_slice(r)).collect(),
                )
            }
        };
        let attack = AttackConfig::new(
            self.attack.attacked.clone(),
            strategy,
            self.attack.noise_std,
            self.attack.seed,
            self.s,
            p,
        )
        .or_else(|e| field_err("attack", e))?;

        if self.x_true0.len() != n {
            return field_err(
                "x_true0",
                format!("needs {n} entries, got {}", self.x_true0.len()),
            );
        }
        let window = self.window.unwrap_or(n);
        if window < 1 {
            return field_err("window", "must be at least 1");
        }
        if self.horizon < window {
            return field_err(
                "horizon",
                format!("must be at least the window length {window}"),
            );
        }
        if let NominalConfig::Explicit(list) = &self.nominal {
            if list.len() < self.horizon {
                return field_err(
                    "nominal.explicit",
                    format!("needs {} inputs, got {}", self.horizon, list.len()),
                );
            }
            if list.iter().any(|u| u.len() != sys.input_dim()) {
                return field_err(
                    "nominal.explicit",
                    format!("every input needs {} entries", sys.input_dim()),
                );
            }
        }
        let cfg = self.numeric.resolve(self.attack.noise_std);

        Ok(BuiltScenario {
            sys,
            cbf,
            attack,
            x0: DVector::from_column_slice(&self.x_true0),
            horizon: self.horizon,
            window,
            s: self.s,
            cfg,
            dt,
            nominal: self.nominal.clone(),
        })
    }

    /// The same configuration with every default materialized. Reloading
    /// the echo of a resolved config parses back to an identical value.
    pub fn resolved(&self) -> CfgResult<ScenarioConfig> {
        let built = self.build()?;
        let mut out = self.clone();
        out.gamma = Some(self.gamma.unwrap_or(DEFAULT_GAMMA));
        out.window = Some(built.window);
        out.numeric = NumericOverrides::from_resolved(&built.cfg);
        Ok(out)
    }

    /// Canonical-form JSON echo of the resolved configuration.
    pub fn echo(&self) -> CfgResult<String> {
        let resolved = self.resolved()?;
        serde_json::to_string_pretty(&resolved).map_err(|e| ConfigError(e.to_string()))
    }
}
