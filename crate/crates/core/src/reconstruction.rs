//! Secure state reconstruction from an input-output window.
//!
//! For an attack budget of `s` sensors, every combination of `p - s` sensors
//! is hypothesized intact and its stacked regression `O_Γ x = Y_Γ` is solved
//! and classified as empty, a single point, or an affine subspace. The union
//! of the non-empty solution sets is exactly the set of states consistent
//! with the data under some admissible attack; it is propagated forward
//! through the dynamics when the window starts in the past.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::NumericConfig;
use crate::error::{Error, Result};
use crate::model::{
    kernel_basis, numerical_rank, orthonormal_span, sensor_combinations, KernelBasis, LtiSystem,
    SensorSubset,
};

/// Input-output record: `inputs` are `u(0..t-1)`, `outputs` are `y(0..t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    /// Absolute time index of the first output.
    pub start_time: usize,
}

impl DataWindow {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        start_time: usize,
    ) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::InvalidInput("data window has no outputs".into()));
        }
        if outputs.len() != inputs.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "a window with {} outputs needs {} inputs, got {}",
                outputs.len(),
                outputs.len() - 1,
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            start_time,
        })
    }

    /// Number of sampled steps beyond the first output.
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    fn check_dims(&self, sys: &LtiSystem) -> Result<()> {
        if self.outputs.iter().any(|y| y.len() != sys.sensor_count()) {
            return Err(Error::DimensionMismatch(
                "window outputs do not match the sensor count".into(),
            ));
        }
        if self.inputs.iter().any(|u| u.len() != sys.input_dim()) {
            return Err(Error::DimensionMismatch(
                "window inputs do not match the input dimension".into(),
            ));
        }
        Ok(())
    }
}

/// Solution set of one stacked regression.
#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceSolution {
    Empty,
    Point(DVector<f64>),
    Affine {
        base: DVector<f64>,
        kernel: KernelBasis,
    },
}

impl SubspaceSolution {
    pub fn is_empty(&self) -> bool {
        matches!(self, SubspaceSolution::Empty)
    }

    /// Representative state, when one exists.
    pub fn base(&self) -> Option<&DVector<f64>> {
        match self {
            SubspaceSolution::Empty => None,
            SubspaceSolution::Point(x) => Some(x),
            SubspaceSolution::Affine { base, .. } => Some(base),
        }
    }

    pub fn kernel(&self) -> Option<&KernelBasis> {
        match self {
            SubspaceSolution::Affine { kernel, .. } => Some(kernel),
            _ => None,
        }
    }

    /// Euclidean distance from `x` to the represented set.
    pub fn distance_to(&self, x: &DVector<f64>) -> f64 {
        match self {
            SubspaceSolution::Empty => f64::INFINITY,
            SubspaceSolution::Point(p) => (x - p).norm(),
            SubspaceSolution::Affine { base, kernel } => {
                kernel.orthogonal_component(&(x - base)).norm()
            }
        }
    }
}

/// Map from sensor combination to its solution set at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibleSet {
    /// Time the represented states refer to.
    pub time_index: usize,
    /// Time the regressions were anchored at (window start).
    pub origin_time: usize,
    /// Attack budget used for the enumeration.
    pub s: usize,
    /// One entry per combination, in lexicographic order.
    pub entries: Vec<(SensorSubset, SubspaceSolution)>,
}

impl PlausibleSet {
    /// Steps the set has been propagated since reconstruction.
    pub fn elapsed(&self) -> usize {
        self.time_index - self.origin_time
    }

    pub fn non_empty_count(&self) -> usize {
        self.entries.iter().filter(|(_, s)| !s.is_empty()).count()
    }

    pub fn has_affine_entries(&self) -> bool {
        self.entries
            .iter()
            .any(|(_, s)| matches!(s, SubspaceSolution::Affine { .. }))
    }

    /// Point representatives of the non-empty entries, merged whenever two
    /// lie within `dedup_tol` of each other. Entry order is lexicographic in
    /// the combination, so the output is deterministic.
    pub fn deduplicated_points(&self, dedup_tol: f64) -> Vec<DVector<f64>> {
        let mut points: Vec<DVector<f64>> = Vec::new();
        for (_, sol) in &self.entries {
            if let Some(base) = sol.base() {
                if points.iter().all(|q| (q - base).norm() > dedup_tol) {
                    points.push(base.clone());
                }
            }
        }
        points
    }

    /// Distance from `x` to the union of the non-empty entries.
    pub fn distance_to(&self, x: &DVector<f64>) -> f64 {
        self.entries
            .iter()
            .map(|(_, s)| s.distance_to(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> PlausibleSetJson {
        PlausibleSetJson {
            time: self.time_index,
            s: self.s,
            entries: self
                .entries
                .iter()
                .map(|(subset, sol)| {
                    let (kind, base, kernel) = match sol {
                        SubspaceSolution::Empty => ("empty", None, None),
                        SubspaceSolution::Point(x) => {
                            ("point", Some(x.iter().copied().collect()), None)
                        }
                        SubspaceSolution::Affine { base, kernel } => (
                            "affine",
                            Some(base.iter().copied().collect()),
                            Some(
                                (0..kernel.dim())
                                    .map(|k| kernel.vectors().column(k).iter().copied().collect())
                                    .collect(),
                            ),
                        ),
                    };
                    PlausibleEntryJson {
                        gamma: subset.indices().to_vec(),
                        kind: kind.to_string(),
                        base,
                        kernel,
                    }
                })
                .collect(),
        }
    }
}

/// Wire form of a [`PlausibleSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibleSetJson {
    pub time: usize,
    pub s: usize,
    pub entries: Vec<PlausibleEntryJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibleEntryJson {
    pub gamma: Vec<usize>,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<f64>>>,
}

/// Stacked regression `(O_Γ, Y_Γ)` for one sensor combination.
///
/// `O_Γ` stacks each sensor's rows `C_i, C_i A, ..., C_i A^t` in subset
/// order; `Y_Γ` is the matching output stack with the forced response
/// (the input convolution) subtracted, so that a noiseless unattacked
/// sensor satisfies `Y_i = O_i x(start)` exactly.
pub fn build_regression(
    window: &DataWindow,
    sys: &LtiSystem,
    subset: &SensorSubset,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    window.check_dims(sys)?;
    let depth = window.outputs.len();
    let obs = sys.observability_matrix(subset, depth);

    // Zero-state response at each sample: z(0) = 0, z(k+1) = A z(k) + B u(k).
    let n = sys.state_dim();
    let mut forced = Vec::with_capacity(depth);
    let mut z = DVector::zeros(n);
    for k in 0..depth {
        forced.push(z.clone());
        if k + 1 < depth {
            z = sys.a() * &z + sys.b() * &window.inputs[k];
        }
    }

    let mut y = DVector::zeros(subset.len() * depth);
    for (si, &sensor) in subset.indices().iter().enumerate() {
        let c_i = sys.c().row(sensor - 1);
        for k in 0..depth {
            y[si * depth + k] = window.outputs[k][sensor - 1] - (c_i * &forced[k])[0];
        }
    }
    Ok((obs, y))
}

/// Classifies the solution set of `O x = Y`.
///
/// The minimum-norm least-squares solution is accepted when its residual
/// stays below `residual_tol * max(1, ||Y||)` plus a noise allowance of
/// `2 * noise_std * sqrt(rows)`; otherwise the combination is inconsistent
/// with the data and the set is empty.
pub fn classify_solution(
    o: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &NumericConfig,
) -> SubspaceSolution {
    debug_assert_eq!(o.nrows(), y.len());
    let n = o.ncols();
    let svd = o.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = cfg.tol_rank * sigma_max.max(1.0);
    let xhat: DVector<f64> = svd
        .solve(y, eps)
        .expect("SVD solve with both factors requested");
    let residual = (o * &xhat - y).norm();
    let threshold =
        cfg.residual_tol * y.norm().max(1.0) + 2.0 * cfg.noise_std * (o.nrows() as f64).sqrt();
    if residual > threshold {
        return SubspaceSolution::Empty;
    }
    if numerical_rank(o, cfg.tol_rank) == n {
        SubspaceSolution::Point(xhat)
    } else {
        let kernel = kernel_basis(o, cfg.tol_rank);
        SubspaceSolution::Affine { base: xhat, kernel }
    }
}

/// Solution sets for all combinations of `p - s` sensors.
///
/// The union of the non-empty entries is the full set of initial states at
/// `window.start_time` consistent with the data under at most `s` attacked
/// sensors: intersecting the per-sensor solution sets over a combination is
/// the same as solving its stacked regression.
pub fn plausible_initial_states(
    window: &DataWindow,
    sys: &LtiSystem,
    s: usize,
    cfg: &NumericConfig,
) -> Result<PlausibleSet> {
    let p = sys.sensor_count();
    if s >= p {
        return Err(Error::InvalidInput(format!(
            "attack budget s = {s} must be below the sensor count p = {p}"
        )));
    }
    window.check_dims(sys)?;
    let mut entries = Vec::new();
    for subset in sensor_combinations(p, p - s) {
        let (o, y) = build_regression(window, sys, &subset)?;
        let sol = classify_solution(&o, &y, cfg);
        entries.push((subset, sol));
    }
    Ok(PlausibleSet {
        time_index: window.start_time,
        origin_time: window.start_time,
        s,
        entries,
    })
}

/// Pushes every entry forward through `x -> A x + B u` for each input.
///
/// Affine kernels are mapped through the same state-transition power and
/// re-orthonormalized; the dimension can drop when `A` is singular, in which
/// case the entry degrades to a point.
pub fn propagate_set(
    ps: &PlausibleSet,
    sys: &LtiSystem,
    inputs: &[DVector<f64>],
) -> Result<PlausibleSet> {
    if inputs.iter().any(|u| u.len() != sys.input_dim()) {
        return Err(Error::DimensionMismatch(
            "propagation inputs do not match the input dimension".into(),
        ));
    }
    let k = inputs.len();
    let a_k = sys.a_power(k);
    // Forced response shared by every entry.
    let mut forced = DVector::zeros(sys.state_dim());
    for u in inputs {
        forced = sys.a() * &forced + sys.b() * u;
    }
    let entries = ps
        .entries
        .iter()
        .map(|(subset, sol)| {
            let mapped = match sol {
                SubspaceSolution::Empty => SubspaceSolution::Empty,
                SubspaceSolution::Point(x) => SubspaceSolution::Point(&a_k * x + &forced),
                SubspaceSolution::Affine { base, kernel } => {
                    let new_base = &a_k * base + &forced;
                    let mapped_kernel = &a_k * kernel.vectors();
                    let reorth = orthonormal_span(&mapped_kernel, cfg_tol_rank_default());
                    if reorth.dim() == 0 {
                        SubspaceSolution::Point(new_base)
                    } else {
                        SubspaceSolution::Affine {
                            base: new_base,
                            kernel: reorth,
                        }
                    }
                }
            };
            (subset.clone(), mapped)
        })
        .collect();
    Ok(PlausibleSet {
        time_index: ps.time_index + k,
        origin_time: ps.origin_time,
        s: ps.s,
        entries,
    })
}

fn cfg_tol_rank_default() -> f64 {
    NumericConfig::default().tol_rank
}

/// Worst-case reconstruction ambiguity, independent of any data.
///
/// For every combination of `p - 2s` sensors the kernel of its depth-n
/// observability stack is an ambiguity direction the attacker can induce;
/// the union of these kernels, offset by the true state, bounds the set of
/// plausible initial states whenever the system is s-sparse observable.
#[derive(Debug, Clone)]
pub struct WorstCaseEnvelope {
    /// Premise check: whether the system is s-sparse observable. When false
    /// the finiteness guarantee does not apply and callers should warn.
    pub s_sparse_observable: bool,
    pub kernels: Vec<(SensorSubset, KernelBasis)>,
}

impl WorstCaseEnvelope {
    pub fn nontrivial(&self) -> impl Iterator<Item = &(SensorSubset, KernelBasis)> {
        self.kernels.iter().filter(|(_, k)| k.dim() > 0)
    }
}

pub fn worst_case_envelope(
    sys: &LtiSystem,
    s: usize,
    cfg: &NumericConfig,
) -> Result<WorstCaseEnvelope> {
    let p = sys.sensor_count();
    let n = sys.state_dim();
    if p <= 2 * s {
        return Err(Error::InvalidInput(format!(
            "the worst-case envelope needs p > 2s, got p = {p}, s = {s}"
        )));
    }
    let s_sparse_observable = s == 0 || sys.is_r_sparse_observable(s, cfg)?;
    let kernels = sensor_combinations(p, p - 2 * s)
        .map(|lambda| {
            let obs = sys.observability_matrix(&lambda, n);
            let kernel = kernel_basis(&obs, cfg.tol_rank);
            (lambda, kernel)
        })
        .collect();
    Ok(WorstCaseEnvelope {
        s_sparse_observable,
        kernels,
    })
}
