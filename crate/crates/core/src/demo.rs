//! The bundled demonstration plant: an omnidirectional vehicle on a plane.
//!
//! State `(x1, x2, x3, x4)` holds the two positions and the two velocities;
//! the inputs are the two accelerations with light damping `-0.2 v`. Eight
//! sensors read the state coordinates pairwise: sensors 1-2 see `x1`,
//! 3-4 see `x2`, 5-6 see `x3`, 7-8 see `x4`. The continuous-time model is
//! sampled by zero-order hold at 10 ms.

use nalgebra::{DMatrix, DVector};

use crate::model::{zoh_discretize, LtiSystem};
use crate::safety::PolyhedralCbf;

pub const DT: f64 = 0.01;

pub fn continuous_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    let ac = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, -0.2, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 0.0, -0.2,
        ],
    );
    let bc = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    (ac, bc)
}

pub fn output_map() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(8, 4);
    for sensor in 0..8 {
        c[(sensor, sensor / 2)] = 1.0;
    }
    c
}

pub fn vehicle_system() -> LtiSystem {
    let (ac, bc) = continuous_matrices();
    let (a, b) = zoh_discretize(&ac, &bc, DT).expect("demo discretization");
    LtiSystem::new(a, b, output_map()).expect("demo system")
}

/// Position-and-velocity box `|x_i| <= 4`, written as `[I; -I] x + 4 >= 0`.
pub fn box_cbf(gamma: f64) -> PolyhedralCbf {
    let mut h = DMatrix::zeros(8, 4);
    for i in 0..4 {
        h[(i, i)] = 1.0;
        h[(i + 4, i)] = -1.0;
    }
    PolyhedralCbf::new(h, DVector::from_element(8, 4.0), gamma).expect("demo box")
}

/// Velocity-only box `|x_2| <= 4`, `|x_4| <= 4`.
pub fn velocity_box_cbf(gamma: f64) -> PolyhedralCbf {
    let mut h = DMatrix::zeros(4, 4);
    h[(0, 1)] = 1.0;
    h[(1, 3)] = 1.0;
    h[(2, 1)] = -1.0;
    h[(3, 3)] = -1.0;
    PolyhedralCbf::new(h, DVector::from_element(4, 4.0), gamma).expect("demo velocity box")
}
