//! One-dimensional partitions `a = x_{1/2} < x_{3/2} < ... < x_{N+1/2} = b`.
//!
//! Elements are addressed 1-based (`j = 1..=N`) in the public API.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshPartition {
    breakpoints: Vec<f64>,
}

impl MeshPartition {
    /// Builds a partition from explicit breakpoints.
    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least two breakpoints, got {}",
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh("breakpoints must be finite".into()));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidMesh(format!(
                "breakpoints not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { breakpoints })
    }

    /// `n` equal elements on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidMesh(format!("need a < b, got a = {a}, b = {b}")));
        }
        if n == 0 {
            return Err(Error::InvalidMesh("element count must be at least 1".into()));
        }
        let width = (b - a) / n as f64;
        let mut breakpoints: Vec<f64> = (0..=n).map(|i| a + i as f64 * width).collect();
        breakpoints[n] = b;
        Self::from_breakpoints(breakpoints)
    }

    pub fn a(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn b(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Number of elements `N`.
    pub fn len(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Maximum element width.
    pub fn h(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Endpoints `(x_{j-1/2}, x_{j+1/2})` of element `j` (1-based).
    pub fn element(&self, j: usize) -> Result<(f64, f64)> {
        self.check(j)?;
        Ok((self.breakpoints[j - 1], self.breakpoints[j]))
    }

    pub fn width(&self, j: usize) -> Result<f64> {
        let (l, r) = self.element(j)?;
        Ok(r - l)
    }

    /// Midpoint `x_j` of element `j` (1-based).
    pub fn midpoint(&self, j: usize) -> Result<f64> {
        let (l, r) = self.element(j)?;
        Ok(0.5 * (l + r))
    }

    /// 1-based index of the element containing `x`. Interior breakpoints
    /// belong to the element on their left.
    pub fn locate(&self, x: f64) -> Result<usize> {
        let (a, b) = (self.a(), self.b());
        if !(x >= a && x <= b) {
            return Err(Error::OutsideDomain { x, a, b });
        }
        // first breakpoint index i >= 1 with x <= breakpoints[i]
        let i = self.breakpoints[1..].partition_point(|&r| r < x);
        Ok((i + 1).min(self.len()))
    }

    fn check(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.len() {
            return Err(Error::ElementIndex {
                index: j,
                count: self.len(),
            });
        }
        Ok(())
    }
}

pub fn uniform_partition(a: f64, b: f64, n: usize) -> Result<MeshPartition> {
    MeshPartition::uniform(a, b, n)
}

pub fn mesh_h(m: &MeshPartition) -> f64 {
    m.h()
}

pub fn element_midpoint(m: &MeshPartition, j: usize) -> Result<f64> {
    m.midpoint(j)
}
