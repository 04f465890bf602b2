//! Spatial pyramid cropping: pool a map onto several grids and pool all cells
//! into a single EMD node set.

use crate::error::{Error, Result};
use crate::types::{FeatureMap, NodeSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidSpec {
    pub grid_sizes: Vec<usize>,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { grid_sizes: vec![7, 5, 3] }
    }
}

impl PyramidSpec {
    pub fn new(grid_sizes: Vec<usize>) -> Result<Self> {
        if grid_sizes.is_empty() || grid_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid pyramid grids {grid_sizes:?}")));
        }
        Ok(Self { grid_sizes })
    }

    pub fn node_count(&self) -> usize {
        self.grid_sizes.iter().map(|g| g * g).sum()
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        for &g in &self.grid_sizes {
            if g == 0 || g > height.min(width) {
                return Err(Error::Config(format!(
                    "grid size {g} does not fit a {height}x{width} map"
                )));
            }
        }
        Ok(())
    }
}

/// Half-open input range `[floor(i*n/g), ceil((i+1)*n/g))` covered by output cell `i`.
pub fn bin_range(i: usize, n: usize, g: usize) -> (usize, usize) {
    let start = i * n / g;
    let end = ((i + 1) * n).div_ceil(g);
    (start, end)
}

/// Adaptive average pooling of an `h×w×c` buffer onto `gh×gw`. Grids larger
/// than the input are allowed here (each output bin still covers at least one
/// input cell).
pub fn adaptive_pool_raw(data: &[f64], h: usize, w: usize, c: usize, gh: usize, gw: usize) -> Vec<f64> {
    let mut out = vec![0.0; gh * gw * c];
    for oi in 0..gh {
        let (r0, r1) = bin_range(oi, h, gh);
        for oj in 0..gw {
            let (c0, c1) = bin_range(oj, w, gw);
            let cell = &mut out[(oi * gw + oj) * c..(oi * gw + oj + 1) * c];
            for r in r0..r1 {
                for q in c0..c1 {
                    let src = &data[(r * w + q) * c..(r * w + q + 1) * c];
                    for (o, s) in cell.iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            cell.iter_mut().for_each(|o| *o /= count);
        }
    }
    out
}

/// Pools `map` to a `g×g` grid; `g` must not exceed either spatial side.
pub fn adaptive_pool(map: &FeatureMap, g: usize) -> Result<FeatureMap> {
    if g == 0 || g > map.height().min(map.width()) {
        return Err(Error::Config(format!(
            "grid size {g} does not fit a {}x{} map",
            map.height(),
            map.width()
        )));
    }
    let data = adaptive_pool_raw(map.data(), map.height(), map.width(), map.channels(), g, g);
    FeatureMap::new(g, g, map.channels(), data)
}

/// Concatenated pooled cells for every grid, in spec order, row-major per grid.
pub fn pyramid_nodes(map: &FeatureMap, spec: &PyramidSpec) -> Result<NodeSet> {
    spec.validate_for(map.height(), map.width())?;
    let mut data = Vec::with_capacity(spec.node_count() * map.channels());
    for &g in &spec.grid_sizes {
        data.extend(adaptive_pool(map, g)?.into_data());
    }
    NodeSet::new(map.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pool_identity_when_grid_matches() {
        let map = FeatureMap::from_fn(5, 5, 2, |h, w, c| (h * 7 + w * 3 + c) as f64 * 0.1).unwrap();
        assert_eq!(adaptive_pool(&map, 5).unwrap(), map);
    }

    #[test]
    fn pool_constant_map() {
        let map = FeatureMap::new(6, 6, 1, vec![2.5; 36]).unwrap();
        for g in 1..=6 {
            assert!(adaptive_pool(&map, g).unwrap().data().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn pool_block_means() {
        let map = FeatureMap::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap();
        let pooled = adaptive_pool(&map, 2).unwrap();
        assert_eq!(pooled.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn pool_overlapping_bins() {
        // 3 -> 2: bins [0,2) and [1,3)
        let map = FeatureMap::new(1, 3, 1, vec![1.0, 2.0, 4.0]).unwrap();
        let out = adaptive_pool_raw(map.data(), 1, 3, 1, 1, 2);
        assert_eq!(out, vec![1.5, 3.0]);
    }

    #[test]
    fn pool_out_of_range() {
        let map = FeatureMap::new(3, 4, 1, vec![0.0; 12]).unwrap();
        assert!(adaptive_pool(&map, 4).is_err());
        assert!(adaptive_pool(&map, 0).is_err());
    }

    #[test]
    fn pyramid_counts() {
        let map = FeatureMap::from_fn(7, 7, 3, |h, w, c| (h + w + c) as f64).unwrap();
        let nodes = pyramid_nodes(&map, &PyramidSpec::default()).unwrap();
        assert_eq!(nodes.len(), 83);

        let single = pyramid_nodes(&map, &PyramidSpec::new(vec![7]).unwrap()).unwrap();
        assert_eq!(single, map.to_nodes());

        let constant = FeatureMap::new(7, 7, 2, vec![0.3; 98]).unwrap();
        let nodes = pyramid_nodes(&constant, &PyramidSpec::default()).unwrap();
        assert!(nodes.iter().all(|n| n == [0.3, 0.3]));
    }

    #[test]
    fn pyramid_rejects_oversized_grid() {
        let map = FeatureMap::new(4, 4, 1, vec![0.0; 16]).unwrap();
        assert!(pyramid_nodes(&map, &PyramidSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn mean_preserved_for_divisible_grids(vals in proptest::collection::vec(-5.0f64..5.0, 36)) {
            let map = FeatureMap::new(6, 6, 1, vals.clone()).unwrap();
            let mean = vals.iter().sum::<f64>() / 36.0;
            for g in [1, 2, 3, 6] {
                let pooled = adaptive_pool(&map, g).unwrap();
                let m = pooled.data().iter().sum::<f64>() / (g * g) as f64;
                prop_assert!((m - mean).abs() < 1e-12);
            }
        }
    }
}
