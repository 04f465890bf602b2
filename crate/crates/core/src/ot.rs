//! Discrete optimal transport: entropic Sinkhorn-Knopp scaling for the loss
//! path and an exact transportation simplex used as a reference solver.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::types::{CostMatrix, MarginalWeights, TransportPlan};

/// Default regularization intensity used by the loss.
pub const DEFAULT_LAMBDA: f64 = 25.0;
/// Default number of scaling iterations.
pub const DEFAULT_ITERATIONS: usize = 10;
/// Lower clamp applied to kernel entries after exponentiation.
pub const DEFAULT_KERNEL_FLOOR: f64 = 1e-300;
/// Largest side accepted by [`exact_ot`].
pub const EXACT_OT_MAX_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub kernel_floor: f64,
    /// Stop early once the largest row-marginal violation falls below this.
    pub tolerance: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            iterations: DEFAULT_ITERATIONS,
            kernel_floor: DEFAULT_KERNEL_FLOOR,
            tolerance: None,
        }
    }
}

impl SinkhornConfig {
    pub fn new(lambda: f64, iterations: usize) -> Result<Self> {
        let cfg = Self { lambda, iterations, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.kernel_floor > 0.0 && self.kernel_floor < 1.0) {
            return Err(Error::Config(format!(
                "kernel_floor must lie in (0, 1), got {}",
                self.kernel_floor
            )));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0) {
                return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// Gibbs kernel `max(exp(-lambda * M), floor)`, row-major like `cost`.
pub fn kernel(cost: &CostMatrix, lambda: f64, floor: f64) -> Vec<f64> {
    cost.data().iter().map(|&m| (-lambda * m).exp().max(floor)).collect()
}

fn check_dims(cost: &CostMatrix, r: &MarginalWeights, c: &MarginalWeights) -> Result<()> {
    if r.len() != cost.rows() || c.len() != cost.cols() {
        return Err(Error::DimensionMismatch(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            r.len(),
            c.len()
        )));
    }
    Ok(())
}

fn check_normalized(w: &MarginalWeights) -> Result<()> {
    let sum: f64 = w.as_slice().iter().sum();
    if (sum - 1.0).abs() > crate::types::MASS_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Entropic transport plan `diag(v) K diag(u)` after alternating row then
/// column rescaling. The last update is always the column one, so column sums
/// match `c` to rounding error on return.
pub fn sinkhorn(
    cost: &CostMatrix,
    r: &MarginalWeights,
    c: &MarginalWeights,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_dims(cost, r, c)?;
    check_normalized(r)?;
    check_normalized(c)?;

    let (rows, cols) = (cost.rows(), cost.cols());
    let k = kernel(cost, cfg.lambda, cfg.kernel_floor);
    let r = r.as_slice();
    let c = c.as_slice();
    let mut u = vec![1.0; cols];
    let mut v = vec![0.0; rows];
    let mut col_acc = vec![0.0; cols];

    for _ in 0..cfg.iterations {
        for i in 0..rows {
            let krow = &k[i * cols..(i + 1) * cols];
            let s: f64 = krow.iter().zip(&u).map(|(a, b)| a * b).sum();
            v[i] = r[i] / s.max(f64::MIN_POSITIVE);
        }
        col_acc.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..rows {
            let krow = &k[i * cols..(i + 1) * cols];
            for (acc, kij) in col_acc.iter_mut().zip(krow) {
                *acc += kij * v[i];
            }
        }
        for j in 0..cols {
            u[j] = c[j] / col_acc[j].max(f64::MIN_POSITIVE);
        }
        if let Some(tol) = cfg.tolerance {
            let worst = (0..rows)
                .map(|i| {
                    let krow = &k[i * cols..(i + 1) * cols];
                    let s: f64 = krow.iter().zip(&u).map(|(a, b)| a * b).sum();
                    (v[i] * s - r[i]).abs()
                })
                .fold(0.0, f64::max);
            if worst < tol {
                break;
            }
        }
    }

    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(v[i] * k[i * cols + j] * u[j]);
        }
    }
    TransportPlan::with_scalings(rows, cols, data, v, u)
}

/// Frobenius inner product `<plan, cost>`.
pub fn transport_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.rows() != cost.rows() || plan.cols() != cost.cols() {
        return Err(Error::DimensionMismatch(format!(
            "plan is {}x{} but cost is {}x{}",
            plan.rows(),
            plan.cols(),
            cost.rows(),
            cost.cols()
        )));
    }
    Ok(plan.data().iter().zip(cost.data()).map(|(p, m)| p * m).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    pub pivots: usize,
}

/// Exact minimum-cost plan for problems up to [`EXACT_OT_MAX_SIZE`] per side.
pub fn exact_ot(
    cost: &CostMatrix,
    r: &MarginalWeights,
    c: &MarginalWeights,
) -> Result<ExactSolution> {
    exact_ot_with_limit(cost, r, c, EXACT_OT_MAX_SIZE)
}

const REDUCED_COST_EPS: f64 = 1e-12;

/// Transportation simplex: northwest-corner start, then MODI (u-v potential)
/// pivoting on the most negative reduced cost until none remains.
pub fn exact_ot_with_limit(
    cost: &CostMatrix,
    r: &MarginalWeights,
    c: &MarginalWeights,
    limit: usize,
) -> Result<ExactSolution> {
    check_dims(cost, r, c)?;
    check_normalized(r)?;
    check_normalized(c)?;
    let (m, n) = (cost.rows(), cost.cols());
    if m > limit || n > limit {
        return Err(Error::SizeExceeded { rows: m, cols: n, limit });
    }

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];

    // Northwest corner: exactly m + n - 1 basic cells forming a spanning tree.
    let mut supply = r.as_slice().to_vec();
    let mut demand = c.as_slice().to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let q = supply[i].min(demand[j]);
        flow[i * n + j] = q;
        basic[i * n + j] = true;
        supply[i] -= q;
        demand[j] -= q;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let max_pivots = 50 * m * n + 100;
    let mut pivots = 0;
    let mut row_pot = vec![0.0; m];
    let mut col_pot = vec![0.0; n];
    loop {
        compute_potentials(cost, &basic, &mut row_pot, &mut col_pot);

        let mut entering = None;
        let mut best = -REDUCED_COST_EPS;
        for a in 0..m {
            for b in 0..n {
                if basic[a * n + b] {
                    continue;
                }
                let reduced = cost.get(a, b) - row_pot[a] - col_pot[b];
                if reduced < best {
                    best = reduced;
                    entering = Some((a, b));
                }
            }
        }
        let Some((ea, eb)) = entering else { break };
        if pivots >= max_pivots {
            // Dantzig's rule can cycle on degenerate vertices; the plan so far is feasible.
            break;
        }
        pivots += 1;

        // Path through the basis tree from column eb back to row ea closes the cycle.
        let cycle = basis_path(&basic, m, n, ea, eb);
        let (theta, leave_pos) = cycle
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 2 == 0)
            .map(|(k, &(a, b))| (flow[a * n + b], k))
            .fold((f64::INFINITY, usize::MAX), |best, cur| if cur.0 < best.0 { cur } else { best });
        for (k, &(a, b)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[a * n + b] -= theta;
            } else {
                flow[a * n + b] += theta;
            }
        }
        flow[ea * n + eb] += theta;
        let (la, lb) = cycle[leave_pos];
        flow[la * n + lb] = 0.0;
        basic[la * n + lb] = false;
        basic[ea * n + eb] = true;
    }

    flow.iter_mut().for_each(|f| *f = f.max(0.0));
    let plan = TransportPlan::new(m, n, flow)?;
    let total = transport_cost(&plan, cost)?;
    Ok(ExactSolution { plan, cost: total, pivots })
}

/// Solves `row_pot[a] + col_pot[b] = cost[a][b]` on basic cells with `row_pot[0] = 0`.
fn compute_potentials(cost: &CostMatrix, basic: &[bool], row_pot: &mut [f64], col_pot: &mut [f64]) {
    let (m, n) = (cost.rows(), cost.cols());
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    let mut queue = VecDeque::new();
    row_pot[0] = 0.0;
    row_done[0] = true;
    queue.push_back(Node::Row(0));
    while let Some(node) = queue.pop_front() {
        match node {
            Node::Row(a) => {
                for b in 0..n {
                    if basic[a * n + b] && !col_done[b] {
                        col_pot[b] = cost.get(a, b) - row_pot[a];
                        col_done[b] = true;
                        queue.push_back(Node::Col(b));
                    }
                }
            }
            Node::Col(b) => {
                for a in 0..m {
                    if basic[a * n + b] && !row_done[a] {
                        row_pot[a] = cost.get(a, b) - col_pot[b];
                        row_done[a] = true;
                        queue.push_back(Node::Row(a));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Basic cells on the tree path from column `to_col` to row `from_row`, in
/// order starting at the cell adjacent to `to_col`. Alternate cells starting
/// with index 0 lose flow when the entering cell `(from_row, to_col)` gains it.
fn basis_path(basic: &[bool], m: usize, n: usize, from_row: usize, to_col: usize) -> Vec<(usize, usize)> {
    // BFS from the entering column to the entering row; parents give the path.
    let mut parent: Vec<Option<Node>> = vec![None; m + n];
    let idx = |node: Node| match node {
        Node::Row(a) => a,
        Node::Col(b) => m + b,
    };
    let start = Node::Col(to_col);
    let goal = Node::Row(from_row);
    let mut seen = vec![false; m + n];
    seen[idx(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        let neighbours: Vec<Node> = match node {
            Node::Row(a) => (0..n).filter(|&b| basic[a * n + b]).map(Node::Col).collect(),
            Node::Col(b) => (0..m).filter(|&a| basic[a * n + b]).map(Node::Row).collect(),
        };
        for next in neighbours {
            if !seen[idx(next)] {
                seen[idx(next)] = true;
                parent[idx(next)] = Some(node);
                queue.push_back(next);
            }
        }
    }

    let mut cells = Vec::new();
    let mut node = goal;
    while let Some(prev) = parent[idx(node)] {
        let cell = match (node, prev) {
            (Node::Row(a), Node::Col(b)) | (Node::Col(b), Node::Row(a)) => (a, b),
            _ => unreachable!("basis graph is bipartite"),
        };
        cells.push(cell);
        node = prev;
    }
    // `cells` runs from the entering row back to the entering column.
    cells.reverse();
    cells
}
