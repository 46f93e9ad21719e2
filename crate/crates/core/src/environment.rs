//! Ground-truth weed fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::gridmap::{CellIndex, GridMap};

/// Per-cell weed labels sharing the geometry of the mission map.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    geometry: GridMap,
    weeds: Vec<bool>,
}

impl GroundTruthGrid {
    pub fn empty(extent: (f64, f64), resolution: f64) -> Result<Self> {
        let geometry = GridMap::new(extent, resolution, 0.5)?;
        let weeds = vec![false; geometry.len()];
        Ok(Self { geometry, weeds })
    }

    pub fn from_weeds(extent: (f64, f64), resolution: f64, weeds: &[CellIndex]) -> Result<Self> {
        let mut grid = Self::empty(extent, resolution)?;
        for &c in weeds {
            let i = grid.index(c)?;
            grid.weeds[i] = true;
        }
        Ok(grid)
    }

    /// Prior-valued map with the same geometry, used for footprint lookups.
    pub fn reference_map(&self) -> &GridMap {
        &self.geometry
    }

    /// Fresh belief map over this field with a uniform prior.
    pub fn blank_map(&self, prior: f64) -> Result<GridMap> {
        GridMap::with_origin(self.geometry.origin(), self.geometry.extent(), self.geometry.resolution(), prior)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.geometry.dims()
    }

    fn index(&self, c: CellIndex) -> Result<usize> {
        let (cols, rows) = self.dims();
        if c.col >= cols || c.row >= rows {
            return Err(Error::OutOfBounds {
                col: c.col,
                row: c.row,
                cols,
                rows,
            });
        }
        Ok(c.row * cols + c.col)
    }

    pub fn is_weed(&self, c: CellIndex) -> Result<bool> {
        Ok(self.weeds[self.index(c)?])
    }

    pub fn labels(&self) -> &[bool] {
        &self.weeds
    }

    pub fn weed_count(&self) -> usize {
        self.weeds.iter().filter(|&&w| w).count()
    }
}

/// Random field with a Poisson-distributed number of weeds placed without replacement.
pub fn generate_environment(
    extent: (f64, f64),
    resolution: f64,
    n_weeds_mean: f64,
    seed: u64,
) -> Result<GroundTruthGrid> {
    if !(n_weeds_mean > 0.0) || !n_weeds_mean.is_finite() {
        return Err(Error::InvalidParameter(format!("mean weed count must be positive, got {n_weeds_mean}")));
    }
    let mut grid = GroundTruthGrid::empty(extent, resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(n_weeds_mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let n = poisson.sample(&mut rng) as usize;
    let cells = grid.weeds.len();
    if n > cells {
        return Err(Error::InvalidParameter(format!("drew {n} weeds for a {cells}-cell map")));
    }
    for i in rand::seq::index::sample(&mut rng, cells, n) {
        grid.weeds[i] = true;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_environment((50.0, 50.0), 0.5, 200.0, 17).unwrap();
        let b = generate_environment((50.0, 50.0), 0.5, 200.0, 17).unwrap();
        assert_eq!(a, b);
        let c = generate_environment((50.0, 50.0), 0.5, 200.0, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn weed_fraction_near_two_percent() {
        let g = generate_environment((50.0, 50.0), 0.5, 200.0, 3).unwrap();
        let frac = g.weed_count() as f64 / 10_000.0;
        // Poisson(200) stays within +-5 sigma of its mean
        assert!((frac - 0.02).abs() < 5.0 * 200f64.sqrt() / 10_000.0, "{frac}");
    }

    #[test]
    fn poisson_mean_over_seeds() {
        let mean = 150.0;
        let total: usize = (0..1000)
            .map(|s| generate_environment((10.0, 10.0), 0.05, mean, s).unwrap().weed_count())
            .sum();
        let sample_mean = total as f64 / 1000.0;
        assert!((sample_mean - mean).abs() < 0.05 * mean, "{sample_mean}");
    }

    #[test]
    fn too_many_weeds_is_an_error() {
        assert!(generate_environment((1.0, 1.0), 0.5, 500.0, 0).is_err());
        assert!(generate_environment((1.0, 1.0), 0.5, 0.0, 0).is_err());
    }
}
