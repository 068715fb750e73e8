//! Distributionally robust chance-constrained model predictive control for a
//! robot moving through a crowd of stochastic pedestrians.
//!
//! The pipeline, one control step at a time:
//!
//! 1. [`scenario`] replays recorded pedestrian tracks and holds the run configuration.
//! 2. [`forecast`] turns each pedestrian's history into a Monte Carlo ensemble of futures.
//! 3. [`moments`] interpolates the ensemble onto the controller clock and reduces it to
//!    per-step mean and covariance.
//! 4. [`safeset`] builds, for every candidate robot position, an ellipsoidal collision-free
//!    region around each predicted pedestrian mean.
//! 5. [`risk`] evaluates the worst-case CVaR of the safety loss over every distribution
//!    sharing those moments, in closed form.
//! 6. [`cem`] searches control sequences with a constrained cross-entropy method.
//! 7. [`sim`] closes the loop and accumulates episode metrics.
//!
//! [`verify`] hosts the Monte Carlo checks of the closed-form bound.

pub mod cem;
pub mod exec;
pub mod forecast;
pub mod moments;
pub mod risk;
pub mod safeset;
pub mod scenario;
pub mod seed;
pub mod sim;
pub mod verify;

pub use exec::Execution;

/// Planar vector, meters or meters per second depending on context.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2x2 matrix (covariances, quadratic weights, ellipsoid shapes).
pub type Mat2 = nalgebra::Matrix2<f64>;
