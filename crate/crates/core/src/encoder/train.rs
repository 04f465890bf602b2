//! Training loop for the query/key encoder pair on the symmetric EMD + vector loss.
//!
//! Transport plans and marginal weights are computed from forward values and
//! then enter the graph as constants, so gradients reach the query features
//! through the cosine costs only. The key branch is behind a stop-gradient and
//! moves only through the EMA update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, small_view, apply, AugmentParams};
use super::data::Image;
use super::model::{ema_update, forward, Branch, EncoderOutput, EncoderParams, ParamVars};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::loss::{directional_loss, EmdOptions, Solver, ViewOutputs, WeightScheme};
use crate::ot::SinkhornConfig;
use crate::pyramid::PyramidSpec;
use crate::types::{EmbeddingVector, NodeSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub momentum: f64,
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Weight of the vector loss relative to the EMD loss.
    pub loss_mix: f64,
    pub sinkhorn: SinkhornConfig,
    pub pyramid: PyramidSpec,
    pub small_view: bool,
    pub dataset_size: usize,
    pub image_size: usize,
    pub view_size: usize,
    /// Shared spatial grid every view's map is pooled to before the pyramid.
    pub grid: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.99,
            lr: 0.05,
            warmup_steps: 20,
            batch_size: 8,
            steps: 200,
            seed: 0,
            loss_mix: 1.0,
            sinkhorn: SinkhornConfig::default(),
            pyramid: PyramidSpec::default(),
            small_view: true,
            dataset_size: 64,
            image_size: 64,
            view_size: 56,
            grid: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1], got {}", self.momentum));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be a nonnegative number, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.loss_mix >= 0.0) || !self.loss_mix.is_finite() {
            return bad(format!("loss_mix must be nonnegative, got {}", self.loss_mix));
        }
        if self.dataset_size == 0 {
            return bad("dataset must contain at least one image".into());
        }
        if self.view_size < 8 || self.view_size > self.image_size {
            return bad(format!(
                "view size {} must lie in [8, image size {}]",
                self.view_size, self.image_size
            ));
        }
        if self.grid == 0 {
            return bad("grid must be positive".into());
        }
        self.sinkhorn.validate()?;
        self.pyramid.validate_for(self.grid, self.grid)
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            emd: EmdOptions { solver: Solver::Sinkhorn(self.sinkhorn), weights: WeightScheme::Anchor },
            pyramid: self.pyramid.clone(),
            grid: self.grid,
            loss_mix: self.loss_mix,
        }
    }

    /// Warmup from zero, then cosine decay towards zero at `steps`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSettings {
    pub emd: EmdOptions,
    pub pyramid: PyramidSpec,
    pub grid: usize,
    pub loss_mix: f64,
}

/// Augmented inputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageViews {
    pub a: Image,
    pub b: Image,
    pub small: Option<Image>,
}

impl ImageViews {
    pub fn sample<R: Rng>(image: &Image, rng: &mut R, view_size: usize, with_small: bool) -> Self {
        let a = augment(image, rng, view_size);
        let b = augment(image, rng, view_size);
        let small = with_small.then(|| small_view(image, rng, view_size));
        Self { a, b, small }
    }
}

/// Per-term loss values; the small-view terms are summed over both key views.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub emd_ab: f64,
    pub emd_ba: f64,
    pub vec_ab: f64,
    pub vec_ba: f64,
    pub emd_small: f64,
    pub vec_small: f64,
    pub total: f64,
}

impl LossTerms {
    fn add_scaled(&mut self, o: &LossTerms, k: f64) {
        self.emd_ab += k * o.emd_ab;
        self.emd_ba += k * o.emd_ba;
        self.vec_ab += k * o.vec_ab;
        self.vec_ba += k * o.vec_ba;
        self.emd_small += k * o.emd_small;
        self.vec_small += k * o.vec_small;
        self.total += k * o.total;
    }

    pub fn is_finite(&self) -> bool {
        [self.emd_ab, self.emd_ba, self.vec_ab, self.vec_ba, self.emd_small, self.vec_small, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Transport plans used for each EMD term, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plans {
    pub ab: Vec<f64>,
    pub ba: Vec<f64>,
    pub small_a: Option<Vec<f64>>,
    pub small_b: Option<Vec<f64>>,
}

struct BranchNodes {
    nodes: Var,
    vector: Var,
}

struct ViewGraph {
    query: BranchNodes,
    key: BranchNodes,
}

fn image_tensor(image: &Image) -> Tensor {
    Tensor::new(image.height, image.width, Image::CHANNELS, image.data.clone())
}

fn pyramid_var(tape: &mut Tape, map: Var, settings: &LossSettings) -> Var {
    let levels: Vec<Var> = settings
        .pyramid
        .grid_sizes
        .iter()
        .map(|&g| if g == settings.grid { map } else { tape.adaptive_pool(map, g, g) })
        .collect();
    tape.concat_nodes(&levels)
}

fn view_graph(
    tape: &mut Tape,
    query: &ParamVars,
    key: &ParamVars,
    image: &Image,
    settings: &LossSettings,
) -> ViewGraph {
    let input = tape.constant(image_tensor(image));
    let EncoderOutput { map, vector } = forward(tape, query, input, settings.grid, Branch::Query);
    let q_nodes = pyramid_var(tape, map, settings);
    let k_out = forward(tape, key, input, settings.grid, Branch::Key);
    let k_map = tape.stop_grad(k_out.map);
    let k_vector = tape.stop_grad(k_out.vector);
    let k_nodes = pyramid_var(tape, k_map, settings);
    ViewGraph {
        query: BranchNodes { nodes: q_nodes, vector },
        key: BranchNodes { nodes: k_nodes, vector: k_vector },
    }
}

fn to_nodes(tape: &Tape, v: Var) -> Result<NodeSet> {
    let t = tape.value(v);
    NodeSet::new(t.channels, t.data.clone())
}

fn to_vector(tape: &Tape, v: Var) -> Result<EmbeddingVector> {
    EmbeddingVector::new(tape.value(v).data.clone())
}

fn view_outputs(tape: &Tape, g: &ViewGraph) -> Result<ViewOutputs> {
    Ok(ViewOutputs {
        query_nodes: to_nodes(tape, g.query.nodes)?,
        query_vector: to_vector(tape, g.query.vector)?,
        key_nodes: to_nodes(tape, g.key.nodes)?,
        key_vector: to_vector(tape, g.key.vector)?,
    })
}

/// Adds `similarity` and `cosine` nodes for one direction, returning
/// `(emd_loss, vector_loss, plan)` and pushing linear terms for the total.
fn direction(
    tape: &mut Tape,
    from: &ViewGraph,
    to: &ViewGraph,
    settings: &LossSettings,
    fixed_plan: Option<&Vec<f64>>,
    terms: &mut Vec<(Var, f64)>,
    bias: &mut f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let plan = match fixed_plan {
        Some(p) => p.clone(),
        None => {
            let outcome = directional_loss(
                &view_outputs(tape, from)?,
                &view_outputs(tape, to)?,
                &settings.emd,
                settings.loss_mix,
            )?;
            outcome.emd.plan.data().to_vec()
        }
    };
    let sim = tape.plan_cosine(from.query.nodes, to.key.nodes, plan.clone());
    let cos = tape.cosine(from.query.vector, to.key.vector);
    terms.push((sim, -2.0));
    terms.push((cos, -2.0 * settings.loss_mix));
    *bias += 2.0 + 2.0 * settings.loss_mix;
    Ok((2.0 - 2.0 * tape.scalar(sim), 2.0 - 2.0 * tape.scalar(cos), plan))
}

struct Graph {
    tape: Tape,
    root: Var,
    query: ParamVars,
    key: ParamVars,
    terms: LossTerms,
    plans: Plans,
}

fn build_graph(
    query: &EncoderParams,
    key: &EncoderParams,
    views: &ImageViews,
    settings: &LossSettings,
    fixed: Option<&Plans>,
) -> Result<Graph> {
    let mut tape = Tape::new();
    let qv = ParamVars::register(&mut tape, query, true);
    let kv = ParamVars::register(&mut tape, key, false);
    let ga = view_graph(&mut tape, &qv, &kv, &views.a, settings);
    let gb = view_graph(&mut tape, &qv, &kv, &views.b, settings);

    let mut lin = Vec::new();
    let mut bias = 0.0;
    let mut t = LossTerms::default();
    let (emd_ab, vec_ab, ab) = direction(&mut tape, &ga, &gb, settings, fixed.map(|p| &p.ab), &mut lin, &mut bias)?;
    let (emd_ba, vec_ba, ba) = direction(&mut tape, &gb, &ga, settings, fixed.map(|p| &p.ba), &mut lin, &mut bias)?;
    t.emd_ab = emd_ab;
    t.emd_ba = emd_ba;
    t.vec_ab = vec_ab;
    t.vec_ba = vec_ba;

    let (mut small_a, mut small_b) = (None, None);
    if let Some(small) = &views.small {
        let gs = view_graph(&mut tape, &qv, &kv, small, settings);
        let fa = fixed.and_then(|p| p.small_a.as_ref());
        let fb = fixed.and_then(|p| p.small_b.as_ref());
        let (e1, v1, pa) = direction(&mut tape, &gs, &ga, settings, fa, &mut lin, &mut bias)?;
        let (e2, v2, pb) = direction(&mut tape, &gs, &gb, settings, fb, &mut lin, &mut bias)?;
        t.emd_small = e1 + e2;
        t.vec_small = v1 + v2;
        small_a = Some(pa);
        small_b = Some(pb);
    }

    let root = tape.lin_comb(&lin, bias);
    t.total = tape.scalar(root);
    Ok(Graph { tape, root, query: qv, key: kv, terms: t, plans: Plans { ab, ba, small_a, small_b } })
}

/// Loss, gradients and the plans used, for one image.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub terms: LossTerms,
    pub query_grad: EncoderParams,
    /// Always zero: the key branch sits behind a stop-gradient.
    pub key_grad: EncoderParams,
    pub plans: Plans,
}

pub fn loss_and_grad(
    query: &EncoderParams,
    key: &EncoderParams,
    views: &ImageViews,
    settings: &LossSettings,
) -> Result<StepOutput> {
    let g = build_graph(query, key, views, settings, None)?;
    let grads = g.tape.backward(g.root);
    Ok(StepOutput {
        terms: g.terms,
        query_grad: g.query.gradients(&grads),
        key_grad: g.key.gradients(&grads),
        plans: g.plans,
    })
}

/// Total loss with the transport plans held at `plans`.
pub fn loss_with_plans(
    query: &EncoderParams,
    key: &EncoderParams,
    views: &ImageViews,
    settings: &LossSettings,
    plans: &Plans,
) -> Result<f64> {
    Ok(build_graph(query, key, views, settings, Some(plans))?.terms.total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub emd_ab: f64,
    pub emd_ba: f64,
    pub vec_ab: f64,
    pub vec_ba: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial_query: EncoderParams,
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub history: Vec<HistoryRow>,
}

/// Runs `cfg.steps` SGD steps on `dataset`. Deterministic for a fixed config.
pub fn train(cfg: &TrainConfig, dataset: &[Image]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let settings = cfg.loss_settings();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_query = EncoderParams::init(&mut rng);
    let mut query = initial_query.clone();
    let mut key = query.clone();
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = cfg.learning_rate(step);
        let batch: Vec<ImageViews> = (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..dataset.len());
                ImageViews::sample(&dataset[idx], &mut rng, cfg.view_size, cfg.small_view)
            })
            .collect();

        let inv = 1.0 / cfg.batch_size as f64;
        let mut grad = EncoderParams::zeros();
        let mut mean = LossTerms::default();
        for views in &batch {
            let out = loss_and_grad(&query, &key, views, &settings)?;
            if !out.terms.is_finite() || !out.query_grad.is_finite() {
                return Err(Error::Diverged { step, detail: format!("non-finite loss terms {:?}", out.terms) });
            }
            if out.key_grad.iter().any(|&g| g != 0.0) {
                return Err(Error::Diverged { step, detail: "gradient reached the key branch".into() });
            }
            grad.add_scaled(&out.query_grad, inv);
            mean.add_scaled(&out.terms, inv);
        }
        history.push(HistoryRow {
            step,
            lr,
            emd_ab: mean.emd_ab,
            emd_ba: mean.emd_ba,
            vec_ab: mean.vec_ab,
            vec_ba: mean.vec_ba,
            total: mean.total,
        });

        query.add_scaled(&grad, -lr);
        if !query.is_finite() {
            return Err(Error::Diverged { step, detail: "parameters became non-finite".into() });
        }
        key = ema_update(&key, &query, cfg.momentum)?;
    }

    Ok(TrainOutcome { initial_query, query, key, history })
}

/// Mean total loss over the first and last `window` steps.
pub fn smoothed_endpoints(history: &[HistoryRow], window: usize) -> (f64, f64) {
    let w = window.clamp(1, history.len().max(1));
    let mean = |rows: &[HistoryRow]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
    (mean(&history[..w]), mean(&history[history.len() - w..]))
}

/// Key-branch (pre-predictor) embedding vectors of full-frame views.
pub fn embed(params: &EncoderParams, images: &[Image], view_size: usize, grid: usize) -> Vec<Vec<f64>> {
    images
        .iter()
        .map(|img| {
            let view = apply(img, &AugmentParams::identity(img), view_size);
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, params, false);
            let input = tape.constant(image_tensor(&view));
            let out = forward(&mut tape, &vars, input, grid, Branch::Key);
            tape.value(out.vector).data.clone()
        })
        .collect()
}

/// Population standard deviation of each embedding dimension.
pub fn per_dimension_std(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len() as f64;
    let dim = vectors.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| {
            let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / n;
            (vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}
