//! Numerical laboratory for total collisions of the planar n-body problem:
//! shape/rotation reduction, central configurations as restpoints of the
//! blown-up flow, and tracking of the spin angle and shape arclength along
//! collision orbits.

pub mod central;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod gradflow;
pub mod layout;
pub mod lowdisc;
pub mod mass;
pub mod ode;
pub mod spin;

pub use error::{Error, Result};
pub use mass::{MassSpec, MassSystem};
