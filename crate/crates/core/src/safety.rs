//! Barrier-function safety machinery.
//!
//! The safe set is the polytope `C = {x : H x + q >= 0}` and the one-step
//! decrease condition
//!
//! ```text
//! H (A x + B u) + q >= (1 - gamma) (H x + q)
//! ```
//!
//! certifies forward invariance of `C`. Because the reconstructed state is a
//! finite union of points and affine subspaces rather than a single
//! estimate, the online filter enforces the decrease condition at every
//! plausible representative simultaneously, and a kernel condition makes the
//! constraint value invariant along subspace entries. Offline checks decide
//! whether a candidate `(H, q, gamma)` can ever be defended under a given
//! attack budget, before any data is seen.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::NumericConfig;
use crate::error::{Error, Result};
use crate::model::{
    kernel_included, numerical_rank, sensor_combinations, stack_rows, LtiSystem, SensorSubset,
};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::reconstruction::PlausibleSet;

/// Polytopic safe set with its barrier decay rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralCbf {
    h: DMatrix<f64>,
    q: DVector<f64>,
    gamma: f64,
}

impl PolyhedralCbf {
    pub fn new(h: DMatrix<f64>, q: DVector<f64>, gamma: f64) -> Result<Self> {
        if h.nrows() == 0 || h.nrows() != q.len() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} rows but q has {} entries",
                h.nrows(),
                q.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie strictly inside (0, 1), got {gamma}"
            )));
        }
        if h.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "safe-set data must have finite entries".into(),
            ));
        }
        Ok(Self { h, q, gamma })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// Margin vector `h(x) = H x + q`; nonnegative inside the safe set.
    pub fn margin(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.q
    }

    /// Stack `[H; HA; ...; HA^{n-1}]` used by the offline kernel condition.
    pub fn observability_style_stack(&self, sys: &LtiSystem) -> DMatrix<f64> {
        let n = sys.state_dim();
        let mut blocks = Vec::with_capacity(n);
        blocks.push(self.h.clone());
        for k in 1..n {
            let next = &blocks[k - 1] * sys.a();
            blocks.push(next);
        }
        stack_rows(&blocks)
    }
}

/// Margin evaluation as a free function, mirroring the rest of the API.
pub fn cbf_margin(cbf: &PolyhedralCbf, x: &DVector<f64>) -> DVector<f64> {
    cbf.margin(x)
}

/// Outcome of the barrier-feasibility search.
///
/// Deciding feasibility for every state is semi-infinite; this is the honest
/// three-valued answer: a full-row-rank `HB` proves it, a sampled
/// counterexample disproves it, and otherwise the result stays open.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityStatus {
    ProvedSufficient,
    FalsifiedAt(DVector<f64>),
    Unknown,
}

impl FeasibilityStatus {
    pub fn is_falsified(&self) -> bool {
        matches!(self, FeasibilityStatus::FalsifiedAt(_))
    }
}

/// Right-hand side of the decrease condition at state `x`:
/// `H B u >= (1-gamma)(H x + q) - H A x - q`.
fn decrease_rhs(sys: &LtiSystem, cbf: &PolyhedralCbf, x: &DVector<f64>) -> DVector<f64> {
    let margin = cbf.margin(x);
    let next_drift = cbf.h() * (sys.a() * x) + cbf.q();
    margin * (1.0 - cbf.gamma()) - next_drift
}

/// Checks whether an admissible input exists for every state.
///
/// `ProvedSufficient` when `HB` has full row rank (then any right-hand side
/// is reachable). Otherwise samples a grid of box corners plus random
/// states within a scale derived from `q`, and solves the per-state
/// feasibility program; any unsatisfiable sample falsifies.
pub fn check_cbf_feasibility(
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    cfg: &NumericConfig,
) -> FeasibilityStatus {
    use rand::Rng;
    use rand::SeedableRng;

    let hb = cbf.h() * sys.b();
    if numerical_rank(&hb, cfg.tol_rank) == cbf.rows() {
        return FeasibilityStatus::ProvedSufficient;
    }

    let n = sys.state_dim();
    let radius = cbf.q().amax().max(1.0);
    let mut samples: Vec<DVector<f64>> = Vec::new();
    samples.push(DVector::zeros(n));
    if n <= 6 {
        for mask in 0..(1usize << n) {
            let x = DVector::from_fn(n, |i, _| {
                if mask >> i & 1 == 1 {
                    radius
                } else {
                    -radius
                }
            });
            samples.push(x);
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_cbf);
    while samples.len() < cfg.feasibility_samples + 1 {
        samples.push(DVector::from_fn(n, |_, _| {
            rng.gen_range(-2.0 * radius..2.0 * radius)
        }));
    }

    for x in samples {
        let rhs = decrease_rhs(sys, cbf, &x);
        let problem = QpProblem::new(DVector::zeros(sys.input_dim()), hb.clone(), rhs)
            .expect("feasibility subproblem shapes");
        match solve_qp(&problem, cfg) {
            Ok(sol) if sol.status == QpStatus::Infeasible => {
                return FeasibilityStatus::FalsifiedAt(x);
            }
            Ok(_) => {}
            Err(_) => {} // inconclusive sample
        }
    }
    FeasibilityStatus::Unknown
}

/// Offline admissibility of a candidate safe set under `s` attacked sensors.
#[derive(Debug, Clone)]
pub struct OfflineReport {
    /// Whether the system is s-sparse observable.
    pub sparse_obs_ok: bool,
    /// Whether `p > 2s` holds.
    pub p_gt_2s: bool,
    /// Kernel inclusion `ker(O_Λ) ⊆ ker([H; HA; ...; HA^{n-1}])` per
    /// combination `Λ` of `p - 2s` sensors.
    pub cond_i: Vec<(SensorSubset, bool)>,
    pub cond_ii: FeasibilityStatus,
    pub verdict: bool,
}

impl OfflineReport {
    pub fn cond_i_all(&self) -> bool {
        self.cond_i.iter().all(|(_, ok)| *ok)
    }

    pub fn to_json(&self) -> OfflineReportJson {
        OfflineReportJson {
            sparse_obs_ok: self.sparse_obs_ok,
            p_gt_2s: self.p_gt_2s,
            cond_i: self
                .cond_i
                .iter()
                .map(|(lambda, ok)| CondEntryJson {
                    lambda: lambda.indices().to_vec(),
                    ok: *ok,
                })
                .collect(),
            cond_ii: match &self.cond_ii {
                FeasibilityStatus::ProvedSufficient => FeasibilityJson {
                    status: "proved_sufficient".into(),
                    falsified_at: None,
                },
                FeasibilityStatus::FalsifiedAt(x) => FeasibilityJson {
                    status: "falsified".into(),
                    falsified_at: Some(x.iter().copied().collect()),
                },
                FeasibilityStatus::Unknown => FeasibilityJson {
                    status: "unknown".into(),
                    falsified_at: None,
                },
            },
            verdict: self.verdict,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineReportJson {
    pub sparse_obs_ok: bool,
    pub p_gt_2s: bool,
    pub cond_i: Vec<CondEntryJson>,
    pub cond_ii: FeasibilityJson,
    pub verdict: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondEntryJson {
    pub lambda: Vec<usize>,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityJson {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falsified_at: Option<Vec<f64>>,
}

/// Evaluates the offline design conditions; premises are reported rather
/// than assumed.
pub fn check_offline_conditions(
    sys: &LtiSystem,
    s: usize,
    cbf: &PolyhedralCbf,
    cfg: &NumericConfig,
) -> Result<OfflineReport> {
    let p = sys.sensor_count();
    let n = sys.state_dim();
    if s >= p {
        return Err(Error::InvalidInput(format!(
            "attack budget s = {s} must be below the sensor count p = {p}"
        )));
    }
    let sparse_obs_ok = s == 0 || sys.is_r_sparse_observable(s, cfg)?;
    let p_gt_2s = p > 2 * s;
    let mut cond_i = Vec::new();
    if p_gt_2s {
        let h_stack = cbf.observability_style_stack(sys);
        for lambda in sensor_combinations(p, p - 2 * s) {
            let obs = sys.observability_matrix(&lambda, n);
            let ok = kernel_included(&obs, &h_stack, cfg.tol_rank)?;
            cond_i.push((lambda, ok));
        }
    }
    let cond_ii = check_cbf_feasibility(sys, cbf, cfg);
    let verdict =
        sparse_obs_ok && p_gt_2s && cond_i.iter().all(|(_, ok)| *ok) && !cond_ii.is_falsified();
    Ok(OfflineReport {
        sparse_obs_ok,
        p_gt_2s,
        cond_i,
        cond_ii,
        verdict,
    })
}

/// True iff the represented set lies inside the safe set: every affine
/// entry's ambiguity must be invisible to `H A^t` (with `t` the steps since
/// reconstruction), and every representative must have nonnegative margins.
pub fn containment_check(
    ps: &PlausibleSet,
    cbf: &PolyhedralCbf,
    sys: &LtiSystem,
    cfg: &NumericConfig,
) -> Result<bool> {
    let n = sys.state_dim();
    let h_at = cbf.h() * sys.a_power(ps.elapsed());
    for (subset, sol) in &ps.entries {
        let Some(base) = sol.base() else { continue };
        if sol.kernel().is_some() {
            let obs = sys.observability_matrix(subset, n);
            if !kernel_included(&obs, &h_at, cfg.tol_rank)? {
                return Ok(false);
            }
        }
        let margin = cbf.margin(base);
        for &m in margin.iter() {
            if m < -cfg.margin_slack(margin.amax()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Kernel condition making the decrease constraint well-posed on subspace
/// entries: `ker(O_Γ) ⊆ ker(H A^{t+1} - (1-gamma) H A^t)` for every affine
/// combination. Vacuously true without affine entries. When the first `n`
/// plausible sets were contained in the safe set this condition is implied,
/// so callers that ran the containment premise may skip re-checking.
pub fn online_kernel_condition(
    ps: &PlausibleSet,
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    cfg: &NumericConfig,
) -> Result<bool> {
    if !ps.has_affine_entries() {
        return Ok(true);
    }
    let n = sys.state_dim();
    let t = ps.elapsed();
    let a_t = sys.a_power(t);
    let m = cbf.h() * (sys.a() * &a_t) - (cbf.h() * &a_t) * (1.0 - cbf.gamma());
    for (subset, sol) in &ps.entries {
        if sol.kernel().is_some() {
            let obs = sys.observability_matrix(subset, n);
            if !kernel_included(&obs, &m, cfg.tol_rank)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Stacked decrease constraints `G u >= w`, one block of `l` rows per
/// distinct plausible representative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub representatives: Vec<DVector<f64>>,
}

impl ConstraintSet {
    pub fn blocks(&self) -> usize {
        self.representatives.len()
    }

    /// Row-wise maxima of the bounds across blocks: an input with
    /// `H B u = z` satisfies every block simultaneously.
    pub fn aggregate_bounds(&self, l: usize) -> DVector<f64> {
        let mut z = DVector::from_element(l, f64::NEG_INFINITY);
        for block in 0..self.blocks() {
            for i in 0..l {
                z[i] = z[i].max(self.w[block * l + i]);
            }
        }
        z
    }
}

/// Builds the constraint set from the non-empty entries, deduplicating
/// representatives that coincide to tolerance.
pub fn build_cbf_constraints(
    ps: &PlausibleSet,
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    cfg: &NumericConfig,
) -> Result<ConstraintSet> {
    let representatives = ps.deduplicated_points(cfg.dedup_tol);
    if representatives.is_empty() {
        return Err(Error::AttackModelViolated);
    }
    let l = cbf.rows();
    let hb = cbf.h() * sys.b();
    let mut g = DMatrix::zeros(l * representatives.len(), sys.input_dim());
    let mut w = DVector::zeros(l * representatives.len());
    for (k, x) in representatives.iter().enumerate() {
        g.view_mut((k * l, 0), (l, sys.input_dim())).copy_from(&hb);
        w.rows_mut(k * l, l).copy_from(&decrease_rhs(sys, cbf, x));
    }
    Ok(ConstraintSet {
        g,
        w,
        representatives,
    })
}

/// Factorization checks that imply the online conditions without any data:
/// `H = M_Γ C_Γ` for every candidate subspace combination, and full row
/// rank of `H B`. Returns the per-combination factors alongside the rank
/// flag.
pub fn sufficient_conditions_check(
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    subsets: &[SensorSubset],
    cfg: &NumericConfig,
) -> (Vec<(SensorSubset, bool, DMatrix<f64>)>, bool) {
    let mut cond14 = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let c_sub = sys.output_rows(subset);
        // Least squares for M in M C_Γ = H, solved as C_Γ^T M^T = H^T.
        let svd = c_sub.transpose().svd(true, true);
        let m_t = svd
            .solve(&cbf.h().transpose(), 1e-14)
            .expect("SVD solve with both factors requested");
        let m = m_t.transpose();
        let residual = (&m * &c_sub - cbf.h()).norm();
        let ok = residual <= cfg.tol_rank * cbf.h().norm().max(1.0);
        cond14.push((subset.clone(), ok, m));
    }
    let hb = cbf.h() * sys.b();
    let cond15 = numerical_rank(&hb, cfg.tol_rank) == cbf.rows();
    (cond14, cond15)
}

/// Minimum-norm input achieving `H B u = z` exactly; requires `H B` to have
/// full row rank.
pub fn closed_form_feasible_input(
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z.len() != cbf.rows() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} entries but the safe set has {} rows",
            z.len(),
            cbf.rows()
        )));
    }
    let hb = cbf.h() * sys.b();
    let gram = &hb * hb.transpose();
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::InvalidInput("closed-form input needs H B with full row rank".into())
    })?;
    Ok(hb.transpose() * chol.solve(z))
}

/// Minimally invasive safety filter: projects the nominal input onto the
/// inputs satisfying the decrease condition at every plausible state.
///
/// A feasible nominal input is returned unchanged (bit for bit).
pub fn safe_control(
    u_nom: &DVector<f64>,
    ps: &PlausibleSet,
    sys: &LtiSystem,
    cbf: &PolyhedralCbf,
    cfg: &NumericConfig,
) -> Result<DVector<f64>> {
    if !online_kernel_condition(ps, sys, cbf, cfg)? {
        return Err(Error::KernelConditionViolated);
    }
    let constraints = build_cbf_constraints(ps, sys, cbf, cfg)?;
    let problem = QpProblem::new(u_nom.clone(), constraints.g, constraints.w)?;
    let sol = solve_qp(&problem, cfg)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.u),
        QpStatus::Infeasible => Err(Error::Infeasible),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use crate::model::KernelBasis;
    use crate::reconstruction::SubspaceSolution;
    use approx::assert_relative_eq;

    fn cfg() -> NumericConfig {
        NumericConfig::default()
    }

    fn point_set(points: &[DVector<f64>], p: usize) -> PlausibleSet {
        let entries = points
            .iter()
            .enumerate()
            .map(|(k, x)| {
                (
                    SensorSubset::new(vec![k + 1], p).unwrap(),
                    SubspaceSolution::Point(x.clone()),
                )
            })
            .collect();
        PlausibleSet {
            time_index: 0,
            origin_time: 0,
            s: 0,
            entries,
        }
    }

    #[test]
    fn margin_examples() {
        let id = PolyhedralCbf::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.5).unwrap();
        assert_eq!(id.margin(&DVector::zeros(2)), DVector::zeros(2));

        let cbf = demo::box_cbf(0.05);
        let m = cbf.margin(&DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]));
        assert_eq!(
            m,
            DVector::from_vec(vec![5.0, 5.0, 5.0, 5.0, 3.0, 3.0, 3.0, 3.0])
        );

        let m = cbf.margin(&DVector::from_vec(vec![5.0, 0.0, 0.0, 0.0]));
        assert_eq!(m[0], 9.0);
        assert_eq!(m[4], -1.0);
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        let h = DMatrix::identity(2, 2);
        assert!(PolyhedralCbf::new(h.clone(), DVector::zeros(2), 0.0).is_err());
        assert!(PolyhedralCbf::new(h.clone(), DVector::zeros(2), 1.0).is_err());
        assert!(PolyhedralCbf::new(h, DVector::zeros(2), 0.3).is_ok());
    }

    #[test]
    fn full_row_rank_hb_proves_feasibility() {
        let sys = crate::model::LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cbf = PolyhedralCbf::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.1).unwrap();
        assert_eq!(
            check_cbf_feasibility(&sys, &cbf, &cfg()),
            FeasibilityStatus::ProvedSufficient
        );
    }

    #[test]
    fn unstable_drift_without_input_is_falsified() {
        // A = 2I, B = 0: the margin doubles outward, no input can help.
        let sys = crate::model::LtiSystem::new(
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cbf = PolyhedralCbf::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.1).unwrap();
        match check_cbf_feasibility(&sys, &cbf, &cfg()) {
            FeasibilityStatus::FalsifiedAt(x) => {
                let rhs = decrease_rhs(&sys, &cbf, &x);
                assert!(rhs.iter().any(|&r| r > 0.0), "witness must need an input");
            }
            other => panic!("expected falsification, got {other:?}"),
        }
    }

    #[test]
    fn vehicle_box_corners_are_falsified() {
        // At a corner like (-4, -4, ., .) the position row needs more
        // correction than the bounded-velocity rows allow in one step.
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        match check_cbf_feasibility(&sys, &cbf, &cfg()) {
            FeasibilityStatus::FalsifiedAt(x) => {
                assert!(x.amax() >= 3.9, "witness should sit near the box surface");
            }
            other => panic!("expected falsification at a corner, got {other:?}"),
        }
    }

    #[test]
    fn offline_conditions_velocity_box_passes_condition_i() {
        let sys = demo::vehicle_system();
        let report =
            check_offline_conditions(&sys, 1, &demo::velocity_box_cbf(0.05), &cfg()).unwrap();
        assert!(report.sparse_obs_ok);
        assert!(report.p_gt_2s);
        assert_eq!(report.cond_i.len(), 28);
        assert!(report.cond_i_all());
        assert!(!report.cond_ii.is_falsified());
        assert!(report.verdict);
    }

    #[test]
    fn offline_conditions_full_box_fails_condition_i() {
        let sys = demo::vehicle_system();
        let report = check_offline_conditions(&sys, 1, &demo::box_cbf(0.05), &cfg()).unwrap();
        assert!(!report.cond_i_all());
        assert!(!report.verdict);
        // The failing combinations are exactly the ones whose kernels are
        // nontrivial (both sensors of a position coordinate removed).
        for (lambda, ok) in &report.cond_i {
            let drops_x1 = !lambda.contains(1) && !lambda.contains(2);
            let drops_x3 = !lambda.contains(5) && !lambda.contains(6);
            assert_eq!(*ok, !(drops_x1 || drops_x3), "lambda {lambda}");
        }
    }

    #[test]
    fn offline_conditions_trivial_kernels_pass_vacuously() {
        // 2s-sparse observable: rotation dynamics observable from any
        // single sensor, s = 1, p = 3 gives p - 2s = 1.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let sys = crate::model::LtiSystem::new(a, b, c).unwrap();
        let cbf = PolyhedralCbf::new(
            DMatrix::identity(2, 2),
            DVector::from_element(2, 1.0),
            0.2,
        )
        .unwrap();
        let report = check_offline_conditions(&sys, 1, &cbf, &cfg()).unwrap();
        assert!(report.cond_i_all());
        assert_eq!(report.cond_ii, FeasibilityStatus::ProvedSufficient);
        assert!(report.verdict);
    }

    #[test]
    fn containment_point_cases() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let inside = point_set(&[DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0])], 8);
        assert!(containment_check(&inside, &cbf, &sys, &cfg()).unwrap());

        let outside = point_set(&[DVector::from_vec(vec![5.0, 0.0, 0.0, 0.0])], 8);
        assert!(!containment_check(&outside, &cbf, &sys, &cfg()).unwrap());
    }

    #[test]
    fn containment_rejects_visible_kernel_directions() {
        // Affine ambiguity along e1 with a safe set that reads x1: the set
        // cannot be contained regardless of the base point.
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let kernel = KernelBasis::from_orthonormal(DMatrix::from_column_slice(
            4,
            1,
            &[1.0, 0.0, 0.0, 0.0],
        ));
        let subset = SensorSubset::new((3..=8).collect(), 8).unwrap();
        let ps = PlausibleSet {
            time_index: 0,
            origin_time: 0,
            s: 1,
            entries: vec![(
                subset,
                SubspaceSolution::Affine {
                    base: DVector::zeros(4),
                    kernel,
                },
            )],
        };
        assert!(!containment_check(&ps, &cbf, &sys, &cfg()).unwrap());
        // The velocity-only box never reads x1, so the same set is fine.
        assert!(containment_check(&ps, &demo::velocity_box_cbf(0.05), &sys, &cfg()).unwrap());
    }

    #[test]
    fn online_kernel_condition_cases() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let points_only = point_set(&[DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0])], 8);
        assert!(online_kernel_condition(&points_only, &sys, &cbf, &cfg()).unwrap());

        // Unobserved x1 with the velocity box: H and HA annihilate e1.
        let subset = SensorSubset::new((3..=8).collect(), 8).unwrap();
        let kernel = KernelBasis::from_orthonormal(DMatrix::from_column_slice(
            4,
            1,
            &[1.0, 0.0, 0.0, 0.0],
        ));
        let ps = PlausibleSet {
            time_index: 2,
            origin_time: 0,
            s: 1,
            entries: vec![(
                subset,
                SubspaceSolution::Affine {
                    base: DVector::zeros(4),
                    kernel,
                },
            )],
        };
        assert!(online_kernel_condition(&ps, &sys, &demo::velocity_box_cbf(0.05), &cfg()).unwrap());
        assert!(!online_kernel_condition(&ps, &sys, &cbf, &cfg()).unwrap());
    }

    #[test]
    fn constraint_blocks_one_per_distinct_representative() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let x = DVector::from_vec(vec![1.0, 0.5, -1.0, 0.2]);
        let duplicated = point_set(&[x.clone(), x.clone()], 8);
        let cs = build_cbf_constraints(&duplicated, &sys, &cbf, &cfg()).unwrap();
        assert_eq!(cs.blocks(), 1);
        assert_eq!(cs.g.nrows(), 8);

        // Algebraic form for A = I, q = 0: H B u >= -gamma H x.
        let simple_sys = crate::model::LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let simple_cbf =
            PolyhedralCbf::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.25).unwrap();
        let x2 = DVector::from_vec(vec![2.0, -3.0]);
        let cs2 = build_cbf_constraints(
            &point_set(&[x2.clone()], 2),
            &simple_sys,
            &simple_cbf,
            &cfg(),
        )
        .unwrap();
        assert_relative_eq!(cs2.w, -x2 * 0.25, epsilon = 1e-14);
    }

    #[test]
    fn all_empty_entries_violate_the_attack_model() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let ps = PlausibleSet {
            time_index: 0,
            origin_time: 0,
            s: 1,
            entries: vec![(
                SensorSubset::new(vec![1], 8).unwrap(),
                SubspaceSolution::Empty,
            )],
        };
        assert!(matches!(
            build_cbf_constraints(&ps, &sys, &cbf, &cfg()),
            Err(Error::AttackModelViolated)
        ));
    }

    #[test]
    fn factorization_conditions_on_the_vehicle() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let all = SensorSubset::new((1..=8).collect(), 8).unwrap();
        let (cond14, cond15) = sufficient_conditions_check(&sys, &cbf, &[all], &cfg());
        assert!(cond14[0].1, "every state is measured twice");
        assert_relative_eq!(
            &cond14[0].2 * &sys.output_rows(&cond14[0].0),
            cbf.h().clone(),
            epsilon = 1e-9
        );
        assert!(!cond15, "8 rows cannot be spanned by 2 inputs");

        // A row orthogonal to the measured subspace is unreachable.
        let partial = SensorSubset::new(vec![1, 2], 8).unwrap();
        let (cond14b, _) = sufficient_conditions_check(&sys, &cbf, &[partial], &cfg());
        assert!(!cond14b[0].1);
    }

    #[test]
    fn closed_form_input_reaches_the_target_exactly() {
        let sys = crate::model::LtiSystem::new(
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let cbf =
            PolyhedralCbf::new(DMatrix::identity(3, 3), DVector::zeros(3), 0.5).unwrap();
        let z = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let u = closed_form_feasible_input(&sys, &cbf, &z).unwrap();
        assert_relative_eq!(u, z, epsilon = 1e-12);

        // Wide case: minimum-norm preimage.
        let sys2 = crate::model::LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cbf2 = PolyhedralCbf::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(1),
            0.5,
        )
        .unwrap();
        let u2 =
            closed_form_feasible_input(&sys2, &cbf2, &DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(u2, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-12);

        // Rank-deficient H B is a precondition error.
        let cbf3 = PolyhedralCbf::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            DVector::zeros(2),
            0.5,
        )
        .unwrap();
        assert!(closed_form_feasible_input(&sys2, &cbf3, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn safe_control_passthrough_and_projection() {
        let sys = crate::model::LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cbf = PolyhedralCbf::new(
            DMatrix::identity(2, 2),
            DVector::from_element(2, 1.0),
            0.5,
        )
        .unwrap();
        let ps = point_set(&[DVector::from_vec(vec![0.0, 0.0])], 2);
        let cfg = cfg();

        // Interior state, zero nominal: already feasible.
        let u_nom = DVector::from_vec(vec![0.01, -0.02]);
        let u = safe_control(&u_nom, &ps, &sys, &cbf, &cfg).unwrap();
        assert_eq!(u[0].to_bits(), u_nom[0].to_bits());
        assert_eq!(u[1].to_bits(), u_nom[1].to_bits());

        // One violated row: the active-set solution matches the one-row
        // closed form u = u_nom + g (w - g.u_nom) / (g.g).
        let u_bad = DVector::from_vec(vec![-2.0, 0.0]);
        let u_fixed = safe_control(&u_bad, &ps, &sys, &cbf, &cfg).unwrap();
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let w = -0.5;
        let lambda = (w - g.dot(&u_bad)) / g.dot(&g);
        let expected = &u_bad + &g * lambda;
        assert_relative_eq!(u_fixed, expected, epsilon = 1e-10);
    }

    #[test]
    fn safe_control_reports_kernel_violations() {
        let sys = demo::vehicle_system();
        let cbf = demo::box_cbf(0.05);
        let kernel = KernelBasis::from_orthonormal(DMatrix::from_column_slice(
            4,
            1,
            &[1.0, 0.0, 0.0, 0.0],
        ));
        let ps = PlausibleSet {
            time_index: 0,
            origin_time: 0,
            s: 1,
            entries: vec![(
                SensorSubset::new((3..=8).collect(), 8).unwrap(),
                SubspaceSolution::Affine {
                    base: DVector::zeros(4),
                    kernel,
                },
            )],
        };
        assert!(matches!(
            safe_control(&DVector::zeros(2), &ps, &sys, &cbf, &cfg()),
            Err(Error::KernelConditionViolated)
        ));
    }
}
