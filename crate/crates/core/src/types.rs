//! Validated numeric containers shared across the crate.
//!
//! Everything is stored and accumulated in `f64`. Spatial data is laid out
//! row-major with the channel index varying fastest, so node `i` of an
//! `H×W×C` map is the contiguous slice at `i*C..(i+1)*C` with `i = h*W + w`.

use crate::error::{Error, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Dense `H×W×C` grid of local embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    data.push(f(h, w, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[(h * self.width + w) * self.channels + c]
    }

    /// The `H·W` local vectors in row-major order; slices borrow the map's storage.
    pub fn flatten(&self) -> Vec<&[f64]> {
        self.data.chunks_exact(self.channels).collect()
    }

    /// Owned copy of the node vectors.
    pub fn to_nodes(&self) -> NodeSet {
        NodeSet { dim: self.channels, data: self.data.clone() }
    }

    /// Inverse of [`FeatureMap::to_nodes`].
    pub fn unflatten(nodes: &NodeSet, height: usize, width: usize) -> Result<Self> {
        if nodes.len() != height * width {
            return Err(Error::Shape(format!(
                "{} nodes cannot fill a {height}x{width} grid",
                nodes.len()
            )));
        }
        Self::new(height, width, nodes.dim(), nodes.data().to_vec())
    }
}

/// Ordered collection of equal-length node vectors (the EMD supply or demand set).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    dim: usize,
    data: Vec<f64>,
}

impl NodeSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form nodes of dimension {dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::Shape("node vectors have unequal lengths".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Appends all nodes of `other`.
    pub fn extend(&mut self, other: &NodeSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate nodes of dim {} and {}",
                self.dim, other.dim
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Mean of all node vectors, accumulated as offsets from the first node
    /// so that a set of identical nodes returns that node exactly.
    pub fn mean(&self) -> Vec<f64> {
        let Some(first) = self.iter().next() else {
            return vec![0.0; self.dim];
        };
        let mut acc = vec![0.0; self.dim];
        for node in self.iter().skip(1) {
            for ((a, v), f) in acc.iter_mut().zip(node).zip(first) {
                *a += v - f;
            }
        }
        let n = self.len() as f64;
        first.iter().zip(&acc).map(|(f, a)| f + a / n).collect()
    }
}

/// Global embedding from the vector branch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("embedding vector must be non-empty".into()));
        }
        check_finite(&data)?;
        Ok(Self(data))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dense row-major matrix of per-unit transport costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "cost matrix {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reorders rows so that new row `k` is old row `perm[k]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let data = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }
}

/// Tolerance on the unit-sum requirement of [`MarginalWeights`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Nonnegative supply or demand masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalWeights(Vec<f64>);

impl MarginalWeights {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        check_finite(&data)?;
        if let Some(i) = data.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidWeights(format!("negative weight at index {i}")));
        }
        let sum: f64 = data.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self(data))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Divides nonnegative raw masses by their sum.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidWeights(format!("raw masses sum to {sum}")));
        }
        Self::new(raw.iter().map(|w| w / sum).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&i| self.0[i]).collect())
    }
}

/// A coupling between two marginals, optionally carrying the Sinkhorn scalings
/// that produced it (`plan = diag(row_scaling) · K · diag(col_scaling)`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    row_scaling: Vec<f64>,
    col_scaling: Vec<f64>,
}

impl TransportPlan {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_scalings(rows, cols, data, Vec::new(), Vec::new())
    }

    pub fn with_scalings(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        row_scaling: Vec<f64>,
        col_scaling: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "plan {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        check_finite(&data)?;
        if let Some(i) = data.iter().position(|&p| p < 0.0) {
            return Err(Error::InvalidWeights(format!("negative plan entry at {i}")));
        }
        Ok(Self { rows, cols, data, row_scaling, col_scaling })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Scaling applied to rows (`v`); empty for plans not produced by Sinkhorn.
    pub fn row_scaling(&self) -> &[f64] {
        &self.row_scaling
    }

    /// Scaling applied to columns (`u`).
    pub fn col_scaling(&self) -> &[f64] {
        &self.col_scaling
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        sums
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute deviation of row sums from `r`.
    pub fn row_violation(&self, r: &MarginalWeights) -> f64 {
        max_abs_diff(&self.row_sums(), r.as_slice())
    }

    /// Largest absolute deviation of column sums from `c`.
    pub fn col_violation(&self, c: &MarginalWeights) -> f64 {
        max_abs_diff(&self.col_sums(), c.as_slice())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let denom = norm(x) * norm(y);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(x, y) / denom).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_single_node() {
        let map = FeatureMap::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(map.flatten(), vec![&[0.1, 0.2, 0.3][..]]);
    }

    #[test]
    fn flatten_row_major() {
        let map = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let nodes: Vec<f64> = map.flatten().iter().map(|n| n[0]).collect();
        assert_eq!(nodes, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn flatten_seven_by_seven() {
        let map = FeatureMap::from_fn(7, 7, 5, |h, w, c| (h * 100 + w * 10 + c) as f64).unwrap();
        let nodes = map.flatten();
        assert_eq!(nodes.len(), 49);
        // node i = h*W + w
        assert_eq!(nodes[3 * 7 + 4][2], 342.0);
    }

    #[test]
    fn flatten_aliases_storage() {
        let map = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let nodes = map.flatten();
        assert!(std::ptr::eq(nodes[1].as_ptr(), &map.data()[2]));
    }

    #[test]
    fn rejects_bad_maps() {
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureMap::new(1, 1, 2, vec![1.0]).is_err());
        assert_eq!(
            FeatureMap::new(1, 1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        );
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn marginal_validation() {
        assert!(MarginalWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            MarginalWeights::new(vec![0.5, 0.6]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(MarginalWeights::new(vec![1.5, -0.5]).is_err());
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in vec_strategy(150)) {
            let map = FeatureMap::from_fn(h, w, c, |a, b, d| seed[(a * w + b) * c + d]).unwrap();
            let back = FeatureMap::unflatten(&map.to_nodes(), h, w).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            x in vec_strategy(6),
            y in vec_strategy(6),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&x) > 1e-6 && norm(&y) > 1e-6);
            let base = cosine(&x, &y);
            prop_assert!((base - cosine(&y, &x)).abs() <= 1e-12);
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            prop_assert!((base - cosine(&xs, &ys)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
