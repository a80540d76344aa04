//! Closed-loop plant and attacker simulation.
//!
//! The adversary owns a fixed subset of sensors for the whole run and can
//! write arbitrary values to them; the built-in strategy reports the
//! measurements of a phantom trajectory that starts at a chosen fake state
//! and evolves under the same dynamics and applied inputs, which keeps the
//! spoofed readings dynamically consistent. Measurement noise is drawn from
//! a seeded generator so that runs are reproducible bit for bit.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::config::NumericConfig;
use crate::error::{Error, Result};
use crate::model::{sensor_combinations, LtiSystem, SensorSubset};
use crate::reconstruction::{
    build_regression, classify_solution, propagate_set, DataWindow, PlausibleSet,
    SubspaceSolution,
};
use crate::safety::{containment_check, safe_control, PolyhedralCbf};

#[derive(Debug, Clone, PartialEq)]
pub enum AttackStrategy {
    /// Attacked sensors report the truth (a null attack).
    None,
    /// Attacked sensors report a phantom trajectory from this initial state.
    FakeState(DVector<f64>),
    /// Attacked sensors add a scripted offset per step.
    Script(Vec<DVector<f64>>),
}

/// Adversary model for one run: the attacked set is fixed for the duration.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Attacked sensors (empty when nothing is compromised).
    pub attacked: Option<SensorSubset>,
    pub strategy: AttackStrategy,
    /// Standard deviation of the measurement noise on every sensor.
    pub noise_std: f64,
    pub seed: u64,
    /// Defender's bound on the number of attacked sensors.
    pub budget: usize,
}

impl AttackConfig {
    pub fn new(
        attacked: Vec<usize>,
        strategy: AttackStrategy,
        noise_std: f64,
        seed: u64,
        budget: usize,
        p: usize,
    ) -> Result<Self> {
        let attacked = if attacked.is_empty() {
            None
        } else {
            Some(SensorSubset::new(attacked, p)?)
        };
        let count = attacked.as_ref().map_or(0, |a| a.len());
        if count > budget {
            return Err(Error::InvalidInput(format!(
                "{count} attacked sensors exceed the assumed budget s = {budget}"
            )));
        }
        if budget >= p {
            return Err(Error::InvalidInput(format!(
                "attack budget s = {budget} must be below the sensor count p = {p}"
            )));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise standard deviation must be nonnegative, got {noise_std}"
            )));
        }
        Ok(Self {
            attacked,
            strategy,
            noise_std,
            seed,
            budget,
        })
    }

    pub fn fake_initial_state(&self) -> Option<&DVector<f64>> {
        match &self.strategy {
            AttackStrategy::FakeState(x) => Some(x),
            _ => None,
        }
    }
}

/// One plant step `x -> A x + B u`.
pub fn step_plant(sys: &LtiSystem, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    sys.a() * x + sys.b() * u
}

/// Produces the measurement at one step: intact sensors read the true
/// state, attacked sensors read the fake state (or add their scripted
/// offset), and seeded Gaussian noise lands on every sensor.
pub fn measure(
    sys: &LtiSystem,
    x_true: &DVector<f64>,
    x_fake_state: Option<&DVector<f64>>,
    atk: &AttackConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let mut y = sys.c() * x_true;
    if let Some(attacked) = &atk.attacked {
        match &atk.strategy {
            AttackStrategy::None => {}
            AttackStrategy::FakeState(_) => {
                let xf = x_fake_state.ok_or_else(|| {
                    Error::InvalidInput("fake-state attack needs the phantom state".into())
                })?;
                let y_fake = sys.c() * xf;
                for &i in attacked.indices() {
                    y[i - 1] = y_fake[i - 1];
                }
            }
            AttackStrategy::Script(offsets) => {
                let e = offsets.get(step).ok_or_else(|| {
                    Error::InvalidInput(format!("attack script exhausted at step {step}"))
                })?;
                if e.len() != sys.sensor_count() {
                    return Err(Error::DimensionMismatch(
                        "scripted attack vector does not match the sensor count".into(),
                    ));
                }
                for &i in attacked.indices() {
                    y[i - 1] += e[i - 1];
                }
            }
        }
    }
    if atk.noise_std > 0.0 {
        let normal = Normal::new(0.0, atk.noise_std)
            .map_err(|e| Error::InvalidInput(format!("bad noise parameters: {e}")))?;
        for i in 0..y.len() {
            y[i] += normal.sample(rng);
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    /// Nominal input applied while the first window fills up.
    Warmup,
    /// Nominal input already satisfied every constraint.
    Passthrough,
    /// Projection changed the input.
    Filtered,
    /// Infeasible step survived by holding zero input.
    InfeasibleHold,
    /// Run stopped at this step; see the trace outcome.
    Halted,
}

impl FilterStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterStatus::Warmup => "warmup",
            FilterStatus::Passthrough => "passthrough",
            FilterStatus::Filtered => "filtered",
            FilterStatus::InfeasibleHold => "infeasible_hold",
            FilterStatus::Halted => "halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// The safety program had no solution and the policy was to halt.
    InfeasibleHalt { step: usize },
    /// No sensor combination was consistent with the data.
    AttackModelViolated { step: usize },
    /// A subspace entry failed the online kernel condition.
    KernelConditionViolated { step: usize },
    /// The initial containment premise failed and enforcement was on.
    PremiseViolated { step: usize },
}

impl RunOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunOutcome::Completed => "completed",
            RunOutcome::InfeasibleHalt { .. } => "infeasible_halt",
            RunOutcome::AttackModelViolated { .. } => "attack_model_violated",
            RunOutcome::KernelConditionViolated { .. } => "kernel_condition_violated",
            RunOutcome::PremiseViolated { .. } => "premise_violated",
        }
    }
}

/// Everything logged at one step. Margins are recomputed from the states
/// they describe, never cached from elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub x_true: DVector<f64>,
    pub x_fake: Option<DVector<f64>>,
    pub u_nom: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub y: DVector<f64>,
    /// Deduplicated plausible states at this step (empty during warmup).
    pub plausible_points: Vec<DVector<f64>>,
    pub margin_true: DVector<f64>,
    pub margin_fake: Option<DVector<f64>>,
    pub status: FilterStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<StepRecord>,
    /// One-time check that the first `w` plausible sets sat inside the safe
    /// set; `None` when the run halted before the first reconstruction.
    pub premise_ok: Option<bool>,
    pub outcome: RunOutcome,
}

impl SimTrace {
    pub fn min_margin_true(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.margin_true.min())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_margin_fake(&self) -> f64 {
        self.records
            .iter()
            .filter_map(|r| r.margin_fake.as_ref().map(|m| m.min()))
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV export, one row per step. `dt` scales the step index into the
    /// `time_s` column. Floats carry 12 significant digits.
    pub fn to_csv(&self, dt: f64) -> String {
        let mut out = String::new();
        let (n, m, p) = match self.records.first() {
            Some(r) => (r.x_true.len(), r.u_nom.len(), r.y.len()),
            None => return out,
        };
        let mut header: Vec<String> = vec!["step".into(), "time_s".into()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("fake_x{i}")));
        header.extend((1..=m).map(|i| format!("u_nom_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        header.push("n_plausible".into());
        header.push("min_margin_true".into());
        header.push("min_margin_fake".into());
        header.push("filter_status".into());
        out.push_str(&header.join(","));
        out.push('\n');

        let fmt = |v: f64| format!("{v:.11e}");
        for r in &self.records {
            let mut fields: Vec<String> = vec![r.step.to_string(), fmt(r.step as f64 * dt)];
            fields.extend(r.x_true.iter().map(|&v| fmt(v)));
            match &r.x_fake {
                Some(xf) => fields.extend(xf.iter().map(|&v| fmt(v))),
                None => fields.extend(std::iter::repeat("NaN".to_string()).take(n)),
            }
            fields.extend(r.u_nom.iter().map(|&v| fmt(v)));
            fields.extend(r.u_applied.iter().map(|&v| fmt(v)));
            fields.extend(r.y.iter().map(|&v| fmt(v)));
            fields.push(r.plausible_points.len().to_string());
            fields.push(fmt(r.margin_true.min()));
            fields.push(match &r.margin_fake {
                Some(mf) => fmt(mf.min()),
                None => "NaN".into(),
            });
            fields.push(r.status.as_str().into());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let vecf = |v: &DVector<f64>| -> Vec<f64> { v.iter().copied().collect() };
        json!({
            "outcome": self.outcome.as_str(),
            "premise_ok": self.premise_ok,
            "records": self.records.iter().map(|r| json!({
                "step": r.step,
                "x_true": vecf(&r.x_true),
                "x_fake": r.x_fake.as_ref().map(&vecf),
                "u_nom": vecf(&r.u_nom),
                "u": vecf(&r.u_applied),
                "y": vecf(&r.y),
                "plausible_points": r.plausible_points.iter().map(&vecf).collect::<Vec<_>>(),
                "margin_true": vecf(&r.margin_true),
                "margin_fake": r.margin_fake.as_ref().map(&vecf),
                "filter_status": r.status.as_str(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasiblePolicy {
    Halt,
    HoldZero,
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub horizon: usize,
    /// Sliding-window length in samples; also the number of warmup steps
    /// plus one.
    pub window: usize,
    pub infeasible_policy: InfeasiblePolicy,
    /// Abort when the first-window containment premise fails instead of
    /// downgrading the safety claim.
    pub enforce_premise: bool,
    /// Discard a sensor combination permanently once a window rejects it.
    ///
    /// The attacked set is fixed for the whole run, so a combination that
    /// was ever inconsistent cannot be fully intact; pruning it never
    /// removes a state that is plausible under an actual fixed attack, but
    /// it does stop transiently-consistent hypotheses from re-entering
    /// later, when spoofed and true readings have drifted close together.
    pub persistent_pruning: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            horizon: 1,
            window: 1,
            infeasible_policy: InfeasiblePolicy::Halt,
            enforce_premise: false,
            persistent_pruning: true,
        }
    }
}

/// Runs the closed loop: warmup on the nominal input while the first window
/// fills, then per step a sliding-window reconstruction anchored at the
/// window start, forward propagation to the current time, and the safety
/// filter. The phantom trajectory receives the same applied inputs.
pub fn run_scenario<F>(
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    x_true0: &DVector<f64>,
    attack: &AttackConfig,
    u_nom_fn: F,
    opts: &ScenarioOptions,
    cfg: &NumericConfig,
) -> Result<SimTrace>
where
    F: Fn(usize) -> DVector<f64>,
{
    let w = opts.window;
    if w < 1 || opts.horizon < w {
        return Err(Error::InvalidInput(format!(
            "need horizon >= window >= 1, got horizon = {}, window = {w}",
            opts.horizon
        )));
    }
    if x_true0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch(
            "initial state does not match the state dimension".into(),
        ));
    }
    if let Some(xf) = attack.fake_initial_state() {
        if xf.len() != sys.state_dim() {
            return Err(Error::DimensionMismatch(
                "fake state does not match the state dimension".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(attack.seed);
    let mut x = x_true0.clone();
    let mut x_fake = attack.fake_initial_state().cloned();
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(opts.horizon);
    let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(opts.horizon);
    let mut records: Vec<StepRecord> = Vec::with_capacity(opts.horizon);
    let mut premise_ok: Option<bool> = None;
    let mut outcome = RunOutcome::Completed;

    let p = sys.sensor_count();
    let combos: Vec<SensorSubset> = sensor_combinations(p, p - attack.budget).collect();
    let mut alive = vec![true; combos.len()];

    for step in 0..opts.horizon {
        let y = measure(sys, &x, x_fake.as_ref(), attack, step, &mut rng)?;
        outputs.push(y.clone());
        let u_nom = u_nom_fn(step);
        if u_nom.len() != sys.input_dim() {
            return Err(Error::DimensionMismatch(
                "nominal input does not match the input dimension".into(),
            ));
        }

        let mut plausible_points: Vec<DVector<f64>> = Vec::new();
        let mut status = FilterStatus::Warmup;
        let mut u = u_nom.clone();

        if step + 1 >= w {
            let start = step + 1 - w;
            let window = DataWindow::new(
                inputs[start..step].to_vec(),
                outputs[start..=step].to_vec(),
                start,
            )?;
            let mut entries = Vec::with_capacity(combos.len());
            for (i, subset) in combos.iter().enumerate() {
                let sol = if alive[i] {
                    let (o, y) = build_regression(&window, sys, subset)?;
                    let sol = classify_solution(&o, &y, cfg);
                    if opts.persistent_pruning && sol.is_empty() {
                        alive[i] = false;
                    }
                    sol
                } else {
                    SubspaceSolution::Empty
                };
                entries.push((subset.clone(), sol));
            }
            let ps0 = PlausibleSet {
                time_index: start,
                origin_time: start,
                s: attack.budget,
                entries,
            };
            let ps_now = propagate_set(&ps0, sys, &inputs[start..step])?;
            plausible_points = ps_now.deduplicated_points(cfg.dedup_tol);

            if premise_ok.is_none() {
                let mut ok = true;
                for j in 0..w {
                    let ps_j = propagate_set(&ps0, sys, &inputs[0..j])?;
                    if !containment_check(&ps_j, cbf, sys, cfg)? {
                        ok = false;
                        break;
                    }
                }
                premise_ok = Some(ok);
                if !ok && opts.enforce_premise {
                    outcome = RunOutcome::PremiseViolated { step };
                    status = FilterStatus::Halted;
                }
            }

            if status != FilterStatus::Halted {
                match safe_control(&u_nom, &ps_now, sys, cbf, cfg) {
                    Ok(filtered) => {
                        let unchanged = filtered
                            .iter()
                            .zip(u_nom.iter())
                            .all(|(a, b)| a.to_bits() == b.to_bits());
                        status = if unchanged {
                            FilterStatus::Passthrough
                        } else {
                            FilterStatus::Filtered
                        };
                        u = filtered;
                    }
                    Err(Error::Infeasible) => match opts.infeasible_policy {
                        InfeasiblePolicy::Halt => {
                            outcome = RunOutcome::InfeasibleHalt { step };
                            status = FilterStatus::Halted;
                        }
                        InfeasiblePolicy::HoldZero => {
                            u = DVector::zeros(sys.input_dim());
                            status = FilterStatus::InfeasibleHold;
                        }
                    },
                    Err(Error::AttackModelViolated) => {
                        outcome = RunOutcome::AttackModelViolated { step };
                        status = FilterStatus::Halted;
                    }
                    Err(Error::KernelConditionViolated) => {
                        outcome = RunOutcome::KernelConditionViolated { step };
                        status = FilterStatus::Halted;
                    }
                    Err(other) => return Err(other),
                }
            }
        }

        let halted = status == FilterStatus::Halted;
        if halted {
            u = DVector::zeros(sys.input_dim());
        }
        records.push(StepRecord {
            step,
            x_true: x.clone(),
            x_fake: x_fake.clone(),
            u_nom,
            u_applied: u.clone(),
            y,
            plausible_points,
            margin_true: cbf.margin(&x),
            margin_fake: x_fake.as_ref().map(|xf| cbf.margin(xf)),
            status,
        });
        if halted {
            break;
        }

        inputs.push(u.clone());
        x = step_plant(sys, &x, &u);
        if let Some(xf) = &x_fake {
            x_fake = Some(step_plant(sys, xf, &u));
        }
    }

    Ok(SimTrace {
        records,
        premise_ok,
        outcome,
    })
}
