//! Ellipsoidal collision-free set around a predicted pedestrian mean.
//!
//! For a robot disc of radius `r` centered at `p` and a pedestrian mean `mu`
//! at distance `d`, the free set is the ellipse centered at `mu` whose minor
//! axis points at the robot with semi-length `a = d - r` (so it touches the
//! disc) and whose major semi-axis is `b = sqrt(d^2 - r^2)`. Along the
//! boundary the squared distance to `p` is concave in `cos(theta)` with its
//! minimum `r^2` at the tangent point, so the whole ellipse stays outside the
//! disc. The safety loss is `l(x) = (x - mu)^T E (x - mu) + e` with `e = -1`.

use thiserror::Error;

use crate::{Mat2, Vec2};

/// Separation margin beyond `r` used when callers do not choose one.
pub const DEFAULT_SEPARATION_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("robot radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("minimum separation {d_min} must exceed robot radius {r}")]
    SeparationTooSmall { d_min: f64, r: f64 },
    #[error("non-finite geometry input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeEllipsoid {
    pub center: Vec2,
    /// `E`; zero when infeasible.
    pub shape: Mat2,
    /// `e`, always -1.
    pub offset: f64,
    /// False when the mean is too close to the robot for any free ellipse.
    pub feasible: bool,
    /// Unit vector from the center toward the robot.
    pub axis: Vec2,
    pub semi_minor: f64,
    pub semi_major: f64,
}

impl SafeEllipsoid {
    /// Quadratic safety loss; non-positive exactly on the free set.
    pub fn loss(&self, x: &Vec2) -> f64 {
        let d = x - self.center;
        d.dot(&(self.shape * d)) + self.offset
    }

    pub fn tangent_point(&self) -> Vec2 {
        self.center + self.axis * self.semi_minor
    }
}

pub fn build_safe_ellipsoid(
    mu: Vec2,
    robot: Vec2,
    r: f64,
    d_min: f64,
) -> Result<SafeEllipsoid, GeometryError> {
    if !(mu.iter().chain(robot.iter()).all(|v| v.is_finite()) && r.is_finite() && d_min.is_finite())
    {
        return Err(GeometryError::NonFinite);
    }
    if r <= 0.0 {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    if d_min <= r {
        return Err(GeometryError::SeparationTooSmall { d_min, r });
    }
    let offset_vec = robot - mu;
    let d = offset_vec.norm();
    if d < d_min {
        return Ok(SafeEllipsoid {
            center: mu,
            shape: Mat2::zeros(),
            offset: -1.0,
            feasible: false,
            axis: Vec2::zeros(),
            semi_minor: 0.0,
            semi_major: 0.0,
        });
    }
    let u = offset_vec / d;
    let a = d - r;
    let b = ((d - r) * (d + r)).sqrt();
    let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
    // E = ia * u u^T + ib * w w^T with w = u rotated by 90 degrees
    let (ux, uy) = (u.x, u.y);
    let xy = (ia - ib) * ux * uy;
    let shape = Mat2::new(ia * ux * ux + ib * uy * uy, xy, xy, ia * uy * uy + ib * ux * ux);
    Ok(SafeEllipsoid {
        center: mu,
        shape,
        offset: -1.0,
        feasible: true,
        axis: u,
        semi_minor: a,
        semi_major: b,
    })
}
