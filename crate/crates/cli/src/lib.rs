//! Library surface of the command-line front end, exposed so integration
//! tests can drive the bundled scenarios through the same code path.

pub mod config;

/// The packaged vehicle scenario.
pub const BUNDLED_VEHICLE: &str = include_str!("../scenarios/vehicle.json");
