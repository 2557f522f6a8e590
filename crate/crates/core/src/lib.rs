//! Numerical laboratory for flows of regular vector fields, directional
//! Korevaar-Schoen energies of metric-valued maps and Trotter splitting.
//!
//! The crate is organised bottom-up:
//!
//! * [`metric`]: source domains, target metric spaces and 1-Lipschitz test families.
//! * [`curve`]: energies and metric speed of sampled curves.
//! * [`flow`]: vector fields, RK4 flow maps, push-forward densities, splitting.
//! * [`energy`]: directional energy densities, `|du(Z)|` and the verifiers built on it.
//! * [`experiment`]: named scenarios, flat config files and JSON run reports.

pub mod curve;
pub mod energy;
mod error;
pub mod experiment;
pub mod flow;
pub mod metric;

pub use error::{Error, Result};
