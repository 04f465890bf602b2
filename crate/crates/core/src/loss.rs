//! The feature-map EMD loss and the vector loss it is paired with.
//!
//! For two node sets `X`, `Y` the loss is `2 - 2 S` where
//! `S = <plan, 1 - M>`, `M_ij = 1 - cos(x_i, y_j)` and the plan transports
//! attention-derived masses `r` (from `X`) onto `c` (from `Y`).

use crate::error::{Error, Result};
use crate::ot::{exact_ot_with_limit, sinkhorn, SinkhornConfig};
use crate::types::{cosine, dot, CostMatrix, EmbeddingVector, MarginalWeights, NodeSet, TransportPlan};

/// Added to every clamped raw weight before normalization.
pub const WEIGHT_EPSILON: f64 = 1e-8;

/// How the transport plan is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Sinkhorn(SinkhornConfig),
    /// Transportation simplex, accepting up to `limit` nodes per side.
    Exact { limit: usize },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Sinkhorn(SinkhornConfig::default())
    }
}

impl Solver {
    pub fn solve(
        &self,
        cost: &CostMatrix,
        r: &MarginalWeights,
        c: &MarginalWeights,
    ) -> Result<TransportPlan> {
        match self {
            Solver::Sinkhorn(cfg) => sinkhorn(cost, r, c, cfg),
            Solver::Exact { limit } => Ok(exact_ot_with_limit(cost, r, c, *limit)?.plan),
        }
    }
}

/// Source of the per-node masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// Dot product with the opposite view's global embedding.
    #[default]
    Anchor,
    /// Dot product with the mean node of the opposite set.
    MeanNode,
}

fn check_dim(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b} channels")));
    }
    Ok(())
}

/// `M_ij = 1 - cos(x_i, y_j)`, clamped into `[0, 2]`.
pub fn cost_matrix(x: &NodeSet, y: &NodeSet) -> Result<CostMatrix> {
    check_dim("cost matrix", x.dim(), y.dim())?;
    let mut data = Vec::with_capacity(x.len() * y.len());
    for xi in x.iter() {
        for yj in y.iter() {
            data.push((1.0 - cosine(xi, yj)).clamp(0.0, 2.0));
        }
    }
    CostMatrix::new(x.len(), y.len(), data)
}

/// Clamps at zero, adds the epsilon floor and normalizes; falls back to
/// uniform mass when every clamped weight is zero.
fn finish_weights(raw: Vec<f64>) -> Result<MarginalWeights> {
    let clamped: Vec<f64> = raw.iter().map(|w| w.max(0.0)).collect();
    if clamped.iter().all(|&w| w == 0.0) {
        return MarginalWeights::uniform(clamped.len());
    }
    let floored: Vec<f64> = clamped.iter().map(|w| w + WEIGHT_EPSILON).collect();
    MarginalWeights::normalized(&floored)
}

/// `r_i ∝ max(x_i · anchor, 0) + ε`.
pub fn marginal_weights(nodes: &NodeSet, anchor: &EmbeddingVector) -> Result<MarginalWeights> {
    check_dim("marginal weights", nodes.dim(), anchor.dim())?;
    finish_weights(nodes.iter().map(|x| dot(x, anchor.as_slice())).collect())
}

/// `r_i ∝ max(x_i · mean(y), 0) + ε`.
pub fn marginal_weights_deepemd(nodes_x: &NodeSet, nodes_y: &NodeSet) -> Result<MarginalWeights> {
    check_dim("marginal weights", nodes_x.dim(), nodes_y.dim())?;
    let mean = nodes_y.mean();
    finish_weights(nodes_x.iter().map(|x| dot(x, &mean)).collect())
}

/// `S = <plan, 1 - M>`, clamped into `[-1, 1]`: a unit-mass plan cannot leave
/// that range, but summation rounding can overshoot it by an ulp or two.
pub fn similarity_score(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.rows() != cost.rows() || plan.cols() != cost.cols() {
        return Err(Error::DimensionMismatch(format!(
            "plan is {}x{} but cost is {}x{}",
            plan.rows(),
            plan.cols(),
            cost.rows(),
            cost.cols()
        )));
    }
    let s: f64 = plan.data().iter().zip(cost.data()).map(|(p, m)| p * (1.0 - m)).sum();
    Ok(s.clamp(-1.0, 1.0))
}

/// Everything computed while evaluating one EMD term.
#[derive(Debug, Clone, PartialEq)]
pub struct EmdOutcome {
    pub similarity: f64,
    pub loss: f64,
    pub plan: TransportPlan,
    pub cost: CostMatrix,
    pub weights_r: MarginalWeights,
    pub weights_c: MarginalWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmdOptions {
    pub solver: Solver,
    pub weights: WeightScheme,
}

impl Default for EmdOptions {
    fn default() -> Self {
        Self { solver: Solver::default(), weights: WeightScheme::Anchor }
    }
}

/// Transport masses for the pair, per the configured scheme.
pub fn pair_weights(
    x: &NodeSet,
    y: &NodeSet,
    v_x: &EmbeddingVector,
    v_y: &EmbeddingVector,
    scheme: WeightScheme,
) -> Result<(MarginalWeights, MarginalWeights)> {
    match scheme {
        WeightScheme::Anchor => Ok((marginal_weights(x, v_y)?, marginal_weights(y, v_x)?)),
        WeightScheme::MeanNode => {
            Ok((marginal_weights_deepemd(x, y)?, marginal_weights_deepemd(y, x)?))
        }
    }
}

/// EMD loss between node sets `x` and `y`; `v_x`, `v_y` are the global
/// embeddings of the views the sets came from. Node counts may differ.
pub fn emd_loss(
    x: &NodeSet,
    y: &NodeSet,
    v_x: &EmbeddingVector,
    v_y: &EmbeddingVector,
    opts: &EmdOptions,
) -> Result<EmdOutcome> {
    let cost = cost_matrix(x, y)?;
    let (weights_r, weights_c) = pair_weights(x, y, v_x, v_y, opts.weights)?;
    let plan = opts.solver.solve(&cost, &weights_r, &weights_c)?;
    let similarity = similarity_score(&plan, &cost)?;
    Ok(EmdOutcome { similarity, loss: 2.0 - 2.0 * similarity, plan, cost, weights_r, weights_c })
}

/// `2 - 2 cos(p, z)`, in `[0, 4]`.
pub fn byol_vector_loss(p: &EmbeddingVector, z: &EmbeddingVector) -> Result<f64> {
    check_dim("vector loss", p.dim(), z.dim())?;
    Ok(2.0 - 2.0 * cosine(p.as_slice(), z.as_slice()))
}

/// Encoder outputs for one augmented view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewOutputs {
    /// Spatial nodes from the query network (after the predictor).
    pub query_nodes: NodeSet,
    pub query_vector: EmbeddingVector,
    /// Spatial nodes from the momentum network.
    pub key_nodes: NodeSet,
    pub key_vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub emd: EmdOutcome,
    pub vector_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn emd_loss(&self) -> f64 {
        self.emd.loss
    }
}

/// One direction: query branch of `from` against key branch of `to`.
/// Marginal anchors are the key-branch vectors of both views.
pub fn directional_loss(
    from: &ViewOutputs,
    to: &ViewOutputs,
    opts: &EmdOptions,
    vector_mix: f64,
) -> Result<LossBreakdown> {
    let emd = emd_loss(&from.query_nodes, &to.key_nodes, &from.key_vector, &to.key_vector, opts)?;
    let vector_loss = byol_vector_loss(&from.query_vector, &to.key_vector)?;
    let total = emd.loss + vector_mix * vector_loss;
    Ok(LossBreakdown { emd, vector_loss, total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricLoss {
    pub a_to_b: LossBreakdown,
    pub b_to_a: LossBreakdown,
    pub total: f64,
}

pub fn symmetric_total_loss(
    view_a: &ViewOutputs,
    view_b: &ViewOutputs,
    opts: &EmdOptions,
    vector_mix: f64,
) -> Result<SymmetricLoss> {
    let a_to_b = directional_loss(view_a, view_b, opts, vector_mix)?;
    let b_to_a = directional_loss(view_b, view_a, opts, vector_mix)?;
    let total = a_to_b.total + b_to_a.total;
    Ok(SymmetricLoss { a_to_b, b_to_a, total })
}
