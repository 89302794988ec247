//! Numerical traces `û_h`, `q̂_h` at element interfaces and at the two
//! boundary points.

use num_complex::Complex64;

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Penalties `alpha` (on `[u]`) and `beta` (on `[q]`), and the boundary
/// weight `gamma`. `alpha = beta = 0` gives the alternating (MD-LDG) traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TraceParams {
    pub const DEFAULT_GAMMA: f64 = 0.5;

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalties must be finite and non-negative, got alpha = {alpha}, beta = {beta}"
            )));
        }
        check_gamma(gamma)?;
        Ok(Self { alpha, beta, gamma })
    }

    /// `alpha = beta = penalty` with the default `gamma`.
    pub fn symmetric(penalty: f64) -> Result<Self> {
        Self::new(penalty, penalty, Self::DEFAULT_GAMMA)
    }

    pub fn is_alternating(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceValues {
    pub u_hat: Complex64,
    pub q_hat: Complex64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

fn check_f(f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("boundary value of f must be positive, got {f}")))
    }
}

/// `[v] = v^- - v^+`.
pub fn jump(v_minus: Complex64, v_plus: Complex64) -> Complex64 {
    v_minus - v_plus
}

/// `û = u^- - i beta [q]`, `q̂ = q^+ + i alpha [u]`.
pub fn interior_trace(
    u_minus: Complex64,
    u_plus: Complex64,
    q_minus: Complex64,
    q_plus: Complex64,
    params: &TraceParams,
) -> TraceValues {
    TraceValues {
        u_hat: u_minus - I * params.beta * jump(q_minus, q_plus),
        q_hat: q_plus + I * params.alpha * jump(u_minus, u_plus),
    }
}

/// Left boundary traces for the incoming-wave condition
/// `q(a) + i sqrt(f_a) u(a) = 2 i sqrt(f_a)`.
pub fn boundary_trace_left(u_a: Complex64, q_a: Complex64, f_a: f64, gamma: f64) -> Result<TraceValues> {
    boundary_trace_left_with_data(u_a, q_a, f_a, gamma, 2.0)
}

/// Left boundary traces for `q(a) + i sqrt(f_a) u(a) = g i sqrt(f_a)`.
pub fn boundary_trace_left_with_data(
    u_a: Complex64,
    q_a: Complex64,
    f_a: f64,
    gamma: f64,
    g: f64,
) -> Result<TraceValues> {
    check_f(f_a)?;
    check_gamma(gamma)?;
    let sf = f_a.sqrt();
    Ok(TraceValues {
        u_hat: (1.0 - gamma) * u_a + I * (gamma / sf) * q_a + gamma * g,
        q_hat: gamma * q_a - I * ((1.0 - gamma) * sf) * u_a + I * ((1.0 - gamma) * sf * g),
    })
}

/// Right boundary traces for the outgoing condition `q(b) - i sqrt(f_b) u(b) = 0`.
pub fn boundary_trace_right(u_b: Complex64, q_b: Complex64, f_b: f64, gamma: f64) -> Result<TraceValues> {
    check_f(f_b)?;
    check_gamma(gamma)?;
    let sf = f_b.sqrt();
    Ok(TraceValues {
        u_hat: (1.0 - gamma) * u_b - I * (gamma / sf) * q_b,
        q_hat: gamma * q_b + I * ((1.0 - gamma) * sf) * u_b,
    })
}
