//! Per-step mean and covariance of a forecast ensemble on the controller clock.
//!
//! Sample paths are interpolated first and moments computed afterwards, so
//! every covariance is the second central moment of actual (interpolated)
//! samples. Covariances use the population divisor `M` and are regularized by
//! `delta_reg * I`.

use thiserror::Error;

use crate::forecast::ForecastEnsemble;
use crate::{Mat2, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum MomentError {
    #[error("dt_forecast ({dt_forecast}) is not an integer multiple of dt ({dt})")]
    IncommensurateSteps { dt: f64, dt_forecast: f64 },
    #[error("horizon needs {required} forecast steps, ensemble has {available}")]
    HorizonOverrun { required: usize, available: usize },
    #[error("need at least 2 sample paths, got {0}")]
    TooFewSamples(usize),
    #[error("sample paths have inconsistent lengths")]
    Ragged,
    #[error("non-finite sample")]
    NonFinite,
    #[error("invalid regularization {0}")]
    InvalidRegularization(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMoment {
    pub mu: Vec2,
    pub sigma: Mat2,
}

/// Moments of one pedestrian for controller steps `k = 1..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    pub ped_id: u64,
    pub steps: Vec<StepMoment>,
}

impl MomentField {
    /// Steps `offset+1 ..= offset+len`, as a field of its own.
    pub fn window(&self, offset: usize, len: usize) -> Option<MomentField> {
        self.steps.get(offset..offset + len).map(|steps| MomentField {
            ped_id: self.ped_id,
            steps: steps.to_vec(),
        })
    }
}

/// Controller steps per forecast step, when `dt_forecast / dt` is integral.
pub fn step_ratio(dt: f64, dt_forecast: f64) -> Result<usize, MomentError> {
    let ratio = dt_forecast / dt;
    let n = ratio.round();
    if dt.is_nan() || dt <= 0.0 || n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
        return Err(MomentError::IncommensurateSteps { dt, dt_forecast });
    }
    Ok(n as usize)
}

/// Forecast steps needed to cover `k` controller steps.
pub fn required_forecast_steps(k: usize, ratio: usize) -> usize {
    k.div_ceil(ratio)
}

/// Linearly interpolates every sample path onto `dt, 2dt, ..., k*dt` after
/// `t0`. Each path is anchored at the ensemble origin at `t0`. Output is
/// `M` rows of `k` positions.
pub fn interpolate_ensemble(
    ensemble: &ForecastEnsemble,
    dt: f64,
    k: usize,
) -> Result<Vec<Vec<Vec2>>, MomentError> {
    let ratio = step_ratio(dt, ensemble.dt_forecast)?;
    let required = required_forecast_steps(k, ratio);
    if required > ensemble.steps() {
        return Err(MomentError::HorizonOverrun { required, available: ensemble.steps() });
    }
    let origin = ensemble.origin;
    Ok(ensemble
        .paths()
        .map(|path| {
            let node = |j: usize| if j == 0 { origin } else { path[j - 1] };
            (1..=k)
                .map(|step| {
                    let (j, rem) = (step / ratio, step % ratio);
                    if rem == 0 {
                        node(j)
                    } else {
                        let w = rem as f64 / ratio as f64;
                        node(j) + (node(j + 1) - node(j)) * w
                    }
                })
                .collect()
        })
        .collect())
}

/// Sample mean and population covariance (plus `delta_reg * I`) per step.
pub fn estimate_moments(
    paths: &[Vec<Vec2>],
    delta_reg: f64,
) -> Result<Vec<StepMoment>, MomentError> {
    if paths.len() < 2 {
        return Err(MomentError::TooFewSamples(paths.len()));
    }
    if !(delta_reg >= 0.0 && delta_reg.is_finite()) {
        return Err(MomentError::InvalidRegularization(delta_reg));
    }
    let k = paths[0].len();
    if paths.iter().any(|p| p.len() != k) {
        return Err(MomentError::Ragged);
    }
    if paths.iter().flatten().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(MomentError::NonFinite);
    }
    let m = paths.len() as f64;
    Ok((0..k)
        .map(|step| {
            let mu = paths.iter().map(|p| p[step]).sum::<Vec2>() / m;
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for p in paths {
                let d = p[step] - mu;
                sxx += d.x * d.x;
                sxy += d.x * d.y;
                syy += d.y * d.y;
            }
            let cxy = sxy / m;
            let sigma = Mat2::new(sxx / m + delta_reg, cxy, cxy, syy / m + delta_reg);
            StepMoment { mu, sigma }
        })
        .collect())
}

/// Interpolate-then-estimate for one ensemble.
pub fn moment_field(
    ensemble: &ForecastEnsemble,
    dt: f64,
    k: usize,
    delta_reg: f64,
) -> Result<MomentField, MomentError> {
    let paths = interpolate_ensemble(ensemble, dt, k)?;
    Ok(MomentField { ped_id: ensemble.ped_id, steps: estimate_moments(&paths, delta_reg)? })
}
