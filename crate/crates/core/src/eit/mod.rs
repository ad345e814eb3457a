//! Electrical impedance tomography on a disk with the complete electrode
//! model: meshes, the forward map and its Jacobian, synthetic data, and the
//! posterior pieces (forward model on interior nodes, Laplace prior sites).

mod cem;
mod mesh;
mod meshio;
mod model;
pub mod skyline;

pub use cem::{CemConfig, CemError, CemProblem, Field, ForwardSolution, Pattern};
pub use mesh::{disk_mesh, gen_disk_mesh, signed_area, DiskMeshSpec, Mesh, MeshError};
pub use meshio::{format_mesh, parse_mesh, read_mesh, write_mesh};
pub use model::{
    conductivity, format_data_csv, inclusion_nodes, parse_data_csv, prior_sites, synth_data, DataError, EitModel, Inclusion, SynthData,
};

/// Tank radius in metres.
pub const RADIUS: f64 = 0.14;
pub const ELECTRODES: usize = 16;
/// Electrode width in metres.
pub const ELECTRODE_WIDTH: f64 = 0.025;
/// Homogeneous background conductivity (2D reduced).
pub const BACKGROUND: f64 = 1.41e-3;
/// Lower bound on admissible conductivity.
pub const FLOOR: f64 = 1e-5;
/// Noise precision.
pub const ALPHA: f64 = 6.9e4;
/// Laplace prior rate.
pub const LAMBDA: f64 = 3.0e4;
/// Injected current amplitude in amperes.
pub const CURRENT: f64 = 1e-3;
/// Measured contact impedances of the sixteen electrodes.
pub const CONTACT_IMPEDANCES: [f64; 16] = [
    2.64e-4, 3.00e-4, 2.76e-4, 4.27e-4, 3.50e-4, 4.30e-4, 3.91e-4, 2.35e-4, 2.01e-4, 2.21e-4, 2.04e-4, 1.43e-4, 2.98e-4, 2.78e-4, 2.92e-4,
    3.40e-4,
];

/// Fraction of the tank circumference covered by electrodes.
pub fn electrode_coverage() -> f64 {
    ELECTRODES as f64 * ELECTRODE_WIDTH / (2.0 * std::f64::consts::PI * RADIUS)
}

/// Sixteen electrodes, measured impedances, adjacent 1 mA injections.
pub fn default_config() -> CemConfig {
    CemConfig::adjacent(CONTACT_IMPEDANCES.to_vec(), CURRENT)
}

/// Single conductive inclusion used for the desk-scale reconstruction.
pub const DESK_INCLUSION: Inclusion = Inclusion { center: [0.03, 0.02], radius: 0.06, sigma: 2.0 * BACKGROUND };
/// Node-count targets of the data and inversion meshes.
pub const DESK_DATA_NODES: usize = 1200;
pub const DESK_INVERSION_NODES: usize = 300;
pub const DESK_SEED: u64 = 7;

#[cfg(test)]
mod tests;
