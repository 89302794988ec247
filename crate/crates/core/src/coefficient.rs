//! The potential-like coefficient `f(x)` of `-eps^2 u'' - f u = 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone)]
pub enum Coefficient {
    /// `f(x) = c`.
    Constant(f64),
    /// `f(x) = sin(x) + 2`.
    SinPlusTwo,
    /// A user supplied field identified by `descriptor` in reference caches.
    Custom {
        descriptor: String,
        func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Coefficient {
    pub fn custom(descriptor: impl Into<String>, func: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Custom {
            descriptor: descriptor.into(),
            func: Arc::new(func),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::SinPlusTwo => x.sin() + 2.0,
            Coefficient::Custom { func, .. } => func(x),
        }
    }

    /// Like [`eval`](Self::eval) but rejects non-positive values.
    pub fn eval_positive(&self, x: f64) -> Result<f64> {
        let value = self.eval(x);
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonPositiveCoefficient { x, value })
        }
    }

    /// Stable string identifying the field; stored in reference metadata.
    pub fn descriptor(&self) -> String {
        match self {
            Coefficient::Constant(c) => format!("const({c:?})"),
            Coefficient::SinPlusTwo => "sin(x)+2".to_string(),
            Coefficient::Custom { descriptor, .. } => descriptor.clone(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            _ => None,
        }
    }

    /// Maximum of `f` over `[a, b]`, sampled on 1025 points plus any
    /// closed-form knowledge.
    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            _ => {
                let n = 1024;
                (0..=n)
                    .map(|i| self.eval(a + (b - a) * i as f64 / n as f64))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coefficient({})", self.descriptor())
    }
}
