//! Crowd simulation with a continuity-equation constraint.
//!
//! A next-frame acceleration predictor drives pedestrians; during training,
//! their motion also drives density flux between grid cells, and an
//! explicitly integrated density field is supervised jointly with velocity.
//!
//! Geometry, density and metric code is generic over [`Real`]; the
//! differentiable pipeline ([`autodiff`], [`predictor`], [`dvcg`],
//! [`training`]) runs in `f64`. The aliases below name the `f64`
//! instantiations used throughout the pipeline.

pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod density;
pub mod dvcg;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod ode;
pub mod predictor;
pub mod real;
pub mod simulate;
pub mod state;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;

pub type Vec2F64 = geom::Vec2<f64>;
pub type BoundsF64 = geom::Bounds<f64>;
pub type SceneF64 = state::Scene<f64>;
pub type CrowdStateF64 = state::CrowdState<f64>;
pub type PedestrianStateF64 = state::PedestrianState<f64>;
pub type TrajectorySetF64 = state::TrajectorySet<f64>;
pub type EpisodeF64 = data::Episode<f64>;
