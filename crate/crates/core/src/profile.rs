use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;

/// Real samples of a radial function at the nodes of a [`RadialGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    grid: RadialGrid,
    values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "profile has {} samples for a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite sample at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RadialGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: RadialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Last sample relative to the peak.
    pub fn tail_ratio(&self) -> f64 {
        let peak = self.peak();
        if peak == 0.0 {
            0.0
        } else {
            self.values.last().unwrap().abs() / peak
        }
    }

    /// Smallest sample relative to the peak; negative for nodal profiles.
    pub fn min_relative(&self) -> f64 {
        let peak = self.peak();
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if peak == 0.0 {
            0.0
        } else {
            min / peak
        }
    }

    /// Largest increase between neighbouring samples, relative to the peak.
    pub fn max_rise(&self) -> f64 {
        let peak = self.peak();
        let rise = self
            .values
            .windows(2)
            .fold(0.0f64, |m, w| m.max(w[1] - w[0]));
        if peak == 0.0 {
            0.0
        } else {
            rise / peak
        }
    }

    /// `½ ∫ f² 4πr² dr`.
    pub fn mass(&self) -> f64 {
        0.5 * self.grid.inner(&self.values, &self.values)
    }

    pub fn inner(&self, other: &RadialProfile) -> f64 {
        self.grid.inner(&self.values, &other.values)
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn h1_norm(&self) -> f64 {
        self.grid.h1_norm(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        let g = RadialGrid::new(20.0, 200).unwrap();
        let p = RadialProfile::from_fn(g.clone(), |r| (-r).exp());
        assert!(p.min_relative() > 0.0);
        assert!(p.max_rise() <= 0.0);
        assert!(p.tail_ratio() < 1e-8);
        let q = RadialProfile::from_fn(g.clone(), |r| (r - 5.0) * (-r).exp());
        assert!(q.min_relative() < 0.0);
        assert!(RadialProfile::new(g.clone(), vec![0.0; 3]).is_err());
        let mut bad = vec![0.0; 200];
        bad[4] = f64::NAN;
        assert!(RadialProfile::new(g, bad).is_err());
    }
}
