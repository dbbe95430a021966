//! Household anomaly scenario generation and evaluation.

pub mod brainstorm;
pub mod catalog;
pub mod detect;
pub mod geometry;
pub mod metrics;
pub mod num;
pub mod prompts;
pub mod retrieval;
pub mod providers;
pub mod scene;
pub mod skills;

pub use num::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type Aabb = geometry::Aabb<f64>;
pub type Vec3f = geometry::Vec3<f32>;
pub type Aabbf = geometry::Aabb<f32>;
pub type CostMatrix = metrics::Matrix<f64>;
pub type TransportSolution = metrics::TransportSolution<f64>;
