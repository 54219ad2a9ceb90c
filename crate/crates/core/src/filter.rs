//! Scalar shrinkage functions and their derivatives.
//!
//! All four functions share the same contract: a nonnegative threshold `tau`
//! splits the input into a dead zone `|x| < tau` that maps to exactly zero and
//! an active zone that is attenuated. They are odd in `x`, nondecreasing, and
//! never grow magnitude.
//!
//! The self-calibrating filter blends the soft threshold with its
//! second-order variant through a per-channel weight `lambda`: `lambda = 0`
//! reproduces the soft threshold exactly, `lambda = 1` the second-order one.
//! Starting at zero keeps early training on the well-behaved linear curve and
//! lets the optimizer move toward the low-bias curve as it learns.

use crate::error::{Error, Result};

/// Stabilizer added under the square root in backward passes only. The
/// second-order curve has unbounded slope at the knee; the epsilon bounds the
/// derivative without touching forward values.
pub const GRAD_EPSILON: f64 = 1e-8;

/// Keep `x` when `|x| >= tau`, zero otherwise.
pub fn hard_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x.abs() >= tau {
        x
    } else {
        0.0
    }
}

/// Shift the active zone toward zero by `tau`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x >= tau {
        x - tau
    } else if x <= -tau {
        x + tau
    } else {
        0.0
    }
}

/// Order-`n` soft threshold: `sgn(x) * (|x|^n - tau^n)^(1/n)` in the active
/// zone. Higher orders hug the identity sooner, trading the soft threshold's
/// constant bias for curvature at the knee.
pub fn high_order_threshold(x: f64, tau: f64, order: u32) -> f64 {
    debug_assert!(tau >= 0.0);
    debug_assert!(order >= 2);
    if x.abs() < tau {
        return 0.0;
    }
    if order == 2 {
        return second_order_threshold(x, tau);
    }
    let n = order as i32;
    let magnitude = (x.abs().powi(n) - tau.powi(n)).max(0.0).powf(1.0 / order as f64);
    x.signum() * magnitude
}

/// `sgn(x) * sqrt(x^2 - tau^2)`, shared by [`high_order_threshold`] at order 2
/// and the self-calibrating blend so the two agree bit for bit.
#[inline]
fn second_order_threshold(x: f64, tau: f64) -> f64 {
    x.signum() * (x * x - tau * tau).sqrt()
}

/// Self-calibrating filter: convex blend of the soft and second-order
/// thresholds with weight `lambda` in `[0, 1]`.
pub fn scf_forward(x: f64, tau: f64, lambda: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x >= tau {
        lambda * (x * x - tau * tau).sqrt() + (1.0 - lambda) * (x - tau)
    } else if x <= -tau {
        -lambda * (x * x - tau * tau).sqrt() + (1.0 - lambda) * (x + tau)
    } else {
        0.0
    }
}

/// Partials of [`scf_forward`] scaled by `upstream`, returned as
/// `(d_x, d_tau, d_lambda)`.
///
/// [`GRAD_EPSILON`] sits under the square root so the knee cannot blow up the
/// derivative. In the dead zone all partials are zero. At `|x| = tau` exactly
/// the soft-threshold subgradient is used: `d_x = (1 - lambda) * upstream`,
/// `d_tau = -sgn(x) * (1 - lambda) * upstream`, `d_lambda = 0`.
pub fn scf_backward(x: f64, tau: f64, lambda: f64, upstream: f64) -> (f64, f64, f64) {
    debug_assert!(tau >= 0.0);
    let ax = x.abs();
    if ax < tau {
        return (0.0, 0.0, 0.0);
    }
    if ax == tau {
        let soft_slope = (1.0 - lambda) * upstream;
        return (soft_slope, -x.signum() * soft_slope, 0.0);
    }
    let root = (x * x - tau * tau + GRAD_EPSILON).sqrt();
    if x > tau {
        let dx = upstream * (lambda * x / root + (1.0 - lambda));
        let dtau = upstream * (-lambda * tau / root - (1.0 - lambda));
        let dlambda = upstream * (root - (x - tau));
        (dx, dtau, dlambda)
    } else {
        let dx = upstream * (-lambda * x / root + (1.0 - lambda));
        let dtau = upstream * (lambda * tau / root + (1.0 - lambda));
        let dlambda = upstream * (-root - (x + tau));
        (dx, dtau, dlambda)
    }
}

/// Learnable per-channel state of the self-calibrating filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    lambda: Vec<f64>,
    order: u32,
}

impl FilterParams {
    /// Blend weights start at zero (pure soft threshold); `order` is the
    /// exponent of the high-order branch and is fixed at 2 for the blend.
    pub fn new(channels: usize, order: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("filter needs at least one channel".into()));
        }
        if order < 2 {
            return Err(Error::InvalidConfig(format!("filter order must be >= 2, got {order}")));
        }
        Ok(Self { lambda: vec![0.0; channels], order })
    }

    pub fn with_lambda(lambda: Vec<f64>, order: u32) -> Result<Self> {
        if lambda.iter().any(|l| !l.is_finite() || !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidConfig("lambda entries must lie in [0, 1]".into()));
        }
        let mut params = Self::new(lambda.len(), order)?;
        params.lambda = lambda;
        Ok(params)
    }

    pub fn channels(&self) -> usize {
        self.lambda.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// One descent step on the blend weights; values are clamped back into
    /// `[0, 1]` so the convex-combination reading stays valid.
    pub fn sgd_step(&mut self, d_lambda: &[f64], learning_rate: f64) -> Result<()> {
        if d_lambda.len() != self.lambda.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} lambda gradients", self.lambda.len()),
                got: format!("{}", d_lambda.len()),
            });
        }
        for (l, g) in self.lambda.iter_mut().zip(d_lambda) {
            *l = (*l - learning_rate * g).clamp(0.0, 1.0);
        }
        Ok(())
    }
}
