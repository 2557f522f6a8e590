//! Flows of regular vector fields on Euclidean domains.
//!
//! Smooth closed-form fields stand in for regular fields; their flows are
//! integrated with classical RK4 per seed. Push-forward densities are
//! histograms of the weighted seeds.

mod density;
mod field;
mod integrate;
mod splitting;

pub use density::{
    continuity_residual, pushforward_density, ContinuityResidual, DensityGrid, GridSpec, TestFunction,
};
pub use field::{FieldPiece, TimeDependentField, VectorField};
pub use integrate::{
    flow_point, flow_scaling_deviation, flow_speed_identity, integrate_flow, integrate_flow_recorded,
    local_convergence_distance, max_displacement, FlowMap,
};
pub use splitting::{
    interleaved_densities, interleaved_positions, interleaving_nodes, mollified_at, mollify_field,
    space_time_l1_distance, trotter_field, Mollifier,
};
