//! Dense strictly convex quadratic programming for the safety filter:
//!
//! ```text
//! minimize    || u - u_nom ||^2
//! subject to  G u >= w
//! ```
//!
//! A dual active-set method starts at the unconstrained optimum `u_nom` and
//! adds the most violated constraint until primal feasibility, updating the
//! multipliers so every intermediate iterate stays dual feasible. With an
//! identity Hessian the linear algebra reduces to projections onto the span
//! of the active constraint normals. Problems here are tiny (a handful of
//! variables, at most a few hundred rows), so the working-set systems are
//! refactorized each iteration instead of updated.

use nalgebra::{DMatrix, DVector};

use crate::config::NumericConfig;
use crate::error::{Error, Result};

/// Projection problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_nom: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl QpProblem {
    pub fn new(u_nom: DVector<f64>, g: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        if g.ncols() != u_nom.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix has {} columns but the variable dimension is {}",
                g.ncols(),
                u_nom.len()
            )));
        }
        if g.nrows() != w.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix has {} rows but the bound vector has {}",
                g.nrows(),
                w.len()
            )));
        }
        if u_nom.iter().chain(g.iter()).chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "quadratic program data must be finite".into(),
            ));
        }
        Ok(Self { u_nom, g, w })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Solver output with the KKT data needed to certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Indices (into the original rows) of the active constraints.
    pub active_rows: Vec<usize>,
    /// Nonnegative multipliers, aligned with `active_rows`.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    /// Nonnegative combination of rows proving emptiness, as
    /// `(row, coefficient)` pairs, when infeasibility was certified.
    pub infeasibility_certificate: Option<Vec<(usize, f64)>>,
}

/// First-seen representatives of rows identical up to `tol`; duplicates are
/// folded into their representative by taking the larger bound later.
fn merge_duplicate_rows(g: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for r in 0..g.nrows() {
        let duplicate = kept
            .iter()
            .any(|&k| (g.row(r) - g.row(k)).norm() <= tol * g.row(k).norm().max(1.0));
        if !duplicate {
            kept.push(r);
        }
    }
    kept
}

/// Solves the projection problem, certifying the result through its KKT
/// conditions, or reporting infeasibility.
pub fn solve_qp(p: &QpProblem, cfg: &NumericConfig) -> Result<QpSolution> {
    let m = p.u_nom.len();
    let tol = cfg.qp_tol;

    // Merge duplicate rows, keeping the tightest bound per direction.
    let kept = merge_duplicate_rows(&p.g, 1e-12);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(kept.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(kept.len());
    let mut origin: Vec<usize> = Vec::with_capacity(kept.len());
    for &k in &kept {
        let gk: DVector<f64> = p.g.row(k).transpose();
        let mut wk = p.w[k];
        for r in 0..p.g.nrows() {
            if r != k {
                let diff = (p.g.row(r) - p.g.row(k)).norm();
                if diff <= 1e-12 * p.g.row(k).norm().max(1.0) {
                    wk = wk.max(p.w[r]);
                }
            }
        }
        rows.push(gk);
        bounds.push(wk);
        origin.push(k);
    }

    let scales: Vec<f64> = rows.iter().map(|g| g.norm().max(1e-30)).collect();

    // Early exit: a feasible nominal input is returned untouched.
    let violation =
        |u: &DVector<f64>, j: usize| -> f64 { (bounds[j] - rows[j].dot(u)) / scales[j] };
    let most_violated = |u: &DVector<f64>| -> Option<usize> {
        let mut worst = None;
        let mut worst_v = tol;
        for j in 0..rows.len() {
            let v = violation(u, j);
            if v > worst_v {
                worst_v = v;
                worst = Some(j);
            }
        }
        worst
    };
    if most_violated(&p.u_nom).is_none() {
        return Ok(QpSolution {
            u: p.u_nom.clone(),
            active_rows: Vec::new(),
            multipliers: Vec::new(),
            status: QpStatus::Optimal,
            infeasibility_certificate: None,
        });
    }

    let mut u = p.u_nom.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();

    let mut iterations = 0usize;
    while let Some(j_add) = most_violated(&u) {
        iterations += 1;
        if iterations > cfg.qp_max_iter {
            return Err(Error::SolverFailure(format!(
                "active-set iteration budget {} exceeded",
                cfg.qp_max_iter
            )));
        }

        let n_plus = rows[j_add].clone();
        let mut t_total_lambda = 0.0;

        // Inner loop: move toward the new constraint, dropping active
        // constraints whose multipliers would turn negative.
        loop {
            let q = active.len();
            // r solves (N^T N) r = N^T n+, z = n+ - N r is the projection
            // of the new normal onto the complement of the active span.
            let (z, r) = if q == 0 {
                (n_plus.clone(), DVector::zeros(0))
            } else {
                let mut nmat = DMatrix::zeros(m, q);
                for (c, &idx) in active.iter().enumerate() {
                    nmat.column_mut(c).copy_from(&rows[idx]);
                }
                let gram = nmat.transpose() * &nmat;
                let rhs = nmat.transpose() * &n_plus;
                let r = gram
                    .clone()
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .map_err(|e| Error::SolverFailure(e.to_string()))?;
                let z = &n_plus - &nmat * &r;
                (z, r)
            };

            let z_norm2 = z.norm_squared();
            let s_add = rows[j_add].dot(&u) - bounds[j_add]; // negative slack

            // Dual blocking step.
            let mut t1 = f64::INFINITY;
            let mut blocking = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > tol {
                    let t = lambda[k] / rk;
                    if t < t1 {
                        t1 = t;
                        blocking = Some(k);
                    }
                }
            }
            // Primal step to make the new constraint active.
            let t2 = if z_norm2 > tol * tol {
                -s_add / z_norm2
            } else {
                f64::INFINITY
            };

            if !t1.is_finite() && !t2.is_finite() {
                // No direction increases the slack: nonnegative combination
                // of active rows reproduces the violated normal, proving the
                // constraint system empty.
                let mut certificate = vec![(origin[j_add], 1.0)];
                for (k, &idx) in active.iter().enumerate() {
                    if r[k].abs() > tol {
                        certificate.push((origin[idx], -r[k]));
                    }
                }
                return Ok(QpSolution {
                    u,
                    active_rows: active.iter().map(|&k| origin[k]).collect(),
                    multipliers: lambda.clone(),
                    status: QpStatus::Infeasible,
                    infeasibility_certificate: Some(certificate),
                });
            }

            let t = t1.min(t2);
            if z_norm2 > tol * tol {
                u += &z * t;
            }
            for (k, &rk) in r.iter().enumerate() {
                lambda[k] -= t * rk;
            }
            t_total_lambda += t;

            if t2 <= t1 {
                active.push(j_add);
                lambda.push(t_total_lambda);
                break;
            }
            let k_drop = blocking.expect("finite t1 implies a blocking index");
            active.remove(k_drop);
            lambda.remove(k_drop);
        }
    }

    // Clean tiny negative multipliers from roundoff.
    for l in lambda.iter_mut() {
        if *l < 0.0 && *l > -1e-9 {
            *l = 0.0;
        }
    }

    Ok(QpSolution {
        u,
        active_rows: active.iter().map(|&k| origin[k]).collect(),
        multipliers: lambda,
        status: QpStatus::Optimal,
        infeasibility_certificate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> NumericConfig {
        NumericConfig::default()
    }

    #[test]
    fn unconstrained_returns_nominal() {
        let p = QpProblem::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.u, p.u_nom);
        assert!(sol.active_rows.is_empty());
    }

    #[test]
    fn projection_onto_half_plane() {
        let p = QpProblem::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-10);
        assert_eq!(sol.active_rows, vec![0]);
        assert_relative_eq!(sol.multipliers[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn feasible_nominal_is_bitwise_unchanged() {
        let u_nom = DVector::from_vec(vec![0.123456789, -0.987654321]);
        let p = QpProblem::new(
            u_nom.clone(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![-10.0, -10.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(sol.u[0].to_bits(), u_nom[0].to_bits());
        assert_eq!(sol.u[1].to_bits(), u_nom[1].to_bits());
    }

    #[test]
    fn infeasible_system_is_certified() {
        // u >= 1 and -u >= 0 cannot both hold.
        let p = QpProblem::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let cert = sol.infeasibility_certificate.expect("certificate");
        // Nonnegative combination with positive combined bound.
        let mut combined_row = 0.0;
        let mut combined_bound = 0.0;
        for (row, coeff) in &cert {
            assert!(*coeff >= -1e-12);
            combined_row += coeff * p.g[(*row, 0)];
            combined_bound += coeff * p.w[*row];
        }
        assert_relative_eq!(combined_row, 0.0, epsilon = 1e-9);
        assert!(combined_bound > 1e-9);
    }

    #[test]
    fn duplicate_rows_keep_the_tighter_bound() {
        let p = QpProblem::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![0.5, 2.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_relative_eq!(sol.u[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn kkt_conditions_hold_on_a_small_problem() {
        let p = QpProblem::new(
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 1.0, 0.0, -1.0, 2.0, 1.0, 0.0, -1.0, 2.0],
            ),
            DVector::from_vec(vec![1.0, 0.5, 0.25]),
        )
        .unwrap();
        let sol = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        // Primal feasibility.
        let slack = &p.g * &sol.u - &p.w;
        assert!(slack.iter().all(|&s| s >= -1e-8));
        // Stationarity: u - u_nom = G_A^T lambda.
        let mut grad = sol.u.clone() - &p.u_nom;
        for (k, &row) in sol.active_rows.iter().enumerate() {
            grad -= p.g.row(row).transpose() * sol.multipliers[k];
        }
        assert!(grad.norm() < 1e-8);
        // Dual feasibility and complementary slackness.
        for (k, &row) in sol.active_rows.iter().enumerate() {
            assert!(sol.multipliers[k] >= -1e-9);
            assert!(slack[row].abs() < 1e-8);
        }
    }
}
