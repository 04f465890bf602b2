//! Command implementations behind the `semd` binary. Each returns the text it
//! would print so the commands can be exercised without spawning a process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::checkpoint::{write_checkpoint, Checkpoint, CheckpointError};
use super::config::{read_run_config, ConfigError};
use super::csv::{grid_csv, history_csv};
use super::fmap::{read_fmap, read_vector, FmapError};
use super::atomic_write;
use crate::encoder::data::{synthetic_dataset, Image, ShapeKind};
use crate::encoder::train::{smoothed_endpoints, train, TrainConfig};
use crate::error::Error;
use crate::loss::{emd_loss, EmdOptions, EmdOutcome, Solver, WeightScheme};
use crate::ot::{exact_ot, sinkhorn, transport_cost, SinkhornConfig, DEFAULT_ITERATIONS, DEFAULT_LAMBDA};
use crate::pyramid::{pyramid_nodes, PyramidSpec};
use crate::types::{CostMatrix, EmbeddingVector, FeatureMap, MarginalWeights, NodeSet};

/// Node limit for the exact solver when requested from the command line.
pub const CLI_EXACT_LIMIT: usize = 128;
/// Convergence threshold and iteration cap for heatmap plans.
pub const HEATMAP_TOLERANCE: f64 = 1e-12;
pub const HEATMAP_MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Error)]
pub enum CommandError {
    /// Bad input or arguments; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything else; exit code 1.
    #[error("{0}")]
    Internal(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 2,
            CommandError::Internal(_) => 1,
        }
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) | Error::Diverged { .. } => CommandError::Internal(e.to_string()),
            _ => CommandError::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.to_string())
    }
}

fn read_input(path: &Path) -> Result<FeatureMap, CommandError> {
    read_fmap(path).map_err(|e| input_error(path, e))
}

fn input_error(path: &Path, e: FmapError) -> CommandError {
    CommandError::Usage(format!("{}: {e} (code {})", path.display(), e.code()))
}

fn write_error(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Internal(format!("{}: {e}", path.display()))
}

/// Inputs shared by `emd` and `heatmap`.
#[derive(Debug, Clone)]
pub struct PairArgs {
    pub fmap_a: PathBuf,
    pub fmap_b: PathBuf,
    /// Global embeddings; without them node masses come from the other set's mean node.
    pub vec_a: Option<PathBuf>,
    pub vec_b: Option<PathBuf>,
    /// Pyramid grids; `None` uses every spatial position as a node.
    pub grids: Option<Vec<usize>>,
    pub lambda: f64,
    pub iterations: usize,
    pub exact: bool,
}

impl PairArgs {
    pub fn new(fmap_a: impl Into<PathBuf>, fmap_b: impl Into<PathBuf>) -> Self {
        Self {
            fmap_a: fmap_a.into(),
            fmap_b: fmap_b.into(),
            vec_a: None,
            vec_b: None,
            grids: None,
            lambda: DEFAULT_LAMBDA,
            iterations: DEFAULT_ITERATIONS,
            exact: false,
        }
    }
}

struct Pair {
    map_b: FeatureMap,
    nodes_a: NodeSet,
    nodes_b: NodeSet,
    vec_a: EmbeddingVector,
    vec_b: EmbeddingVector,
    scheme: WeightScheme,
}

fn nodes_of(map: &FeatureMap, grids: &Option<Vec<usize>>) -> Result<NodeSet, CommandError> {
    match grids {
        None => Ok(map.to_nodes()),
        Some(g) => Ok(pyramid_nodes(map, &PyramidSpec::new(g.clone())?)?),
    }
}

fn load_pair(args: &PairArgs) -> Result<Pair, CommandError> {
    let map_a = read_input(&args.fmap_a)?;
    let map_b = read_input(&args.fmap_b)?;
    if map_a.channels() != map_b.channels() {
        return Err(CommandError::Usage(format!(
            "dimension mismatch: {} has {} channels, {} has {}",
            args.fmap_a.display(),
            map_a.channels(),
            args.fmap_b.display(),
            map_b.channels()
        )));
    }
    let nodes_a = nodes_of(&map_a, &args.grids)?;
    let nodes_b = nodes_of(&map_b, &args.grids)?;
    let (vec_a, vec_b, scheme) = match (&args.vec_a, &args.vec_b) {
        (Some(pa), Some(pb)) => {
            let va = read_vector(pa).map_err(|e| input_error(pa, e))?;
            let vb = read_vector(pb).map_err(|e| input_error(pb, e))?;
            for (v, p) in [(&va, pa), (&vb, pb)] {
                if v.dim() != map_a.channels() {
                    return Err(CommandError::Usage(format!(
                        "dimension mismatch: {} has {} entries, maps have {} channels",
                        p.display(),
                        v.dim(),
                        map_a.channels()
                    )));
                }
            }
            (va, vb, WeightScheme::Anchor)
        }
        (None, None) => {
            let placeholder = EmbeddingVector::new(vec![0.0; map_a.channels()])?;
            (placeholder.clone(), placeholder, WeightScheme::MeanNode)
        }
        _ => return Err(CommandError::Usage("give both --vec-a and --vec-b or neither".into())),
    };
    Ok(Pair { map_b, nodes_a, nodes_b, vec_a, vec_b, scheme })
}

fn solver_for(args: &PairArgs) -> Result<Solver, CommandError> {
    if args.exact {
        Ok(Solver::Exact { limit: CLI_EXACT_LIMIT })
    } else {
        Ok(Solver::Sinkhorn(SinkhornConfig::new(args.lambda, args.iterations)?))
    }
}

/// Similarity, loss and marginal diagnostics as `key=value` lines.
pub fn cmd_emd(args: &PairArgs) -> Result<String, CommandError> {
    let pair = load_pair(args)?;
    let opts = EmdOptions { solver: solver_for(args)?, weights: pair.scheme };
    let out = emd_loss(&pair.nodes_a, &pair.nodes_b, &pair.vec_a, &pair.vec_b, &opts)?;
    Ok(render_emd(args, &pair, &out))
}

fn render_emd(args: &PairArgs, pair: &Pair, out: &EmdOutcome) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("nodes_x", pair.nodes_a.len().to_string());
    kv("nodes_y", pair.nodes_b.len().to_string());
    kv("solver", if args.exact { "exact" } else { "sinkhorn" }.into());
    if !args.exact {
        kv("lambda", args.lambda.to_string());
        kv("iterations", args.iterations.to_string());
    }
    kv(
        "weights",
        match pair.scheme {
            WeightScheme::Anchor => "anchor",
            WeightScheme::MeanNode => "mean_node",
        }
        .into(),
    );
    kv("similarity", out.similarity.to_string());
    kv("loss", out.loss.to_string());
    kv("transport_cost", transport_cost(&out.plan, &out.cost).unwrap_or(f64::NAN).to_string());
    kv("total_mass", out.plan.total_mass().to_string());
    kv("row_violation", out.plan.row_violation(&out.weights_r).to_string());
    kv("col_violation", out.plan.col_violation(&out.weights_c).to_string());
    let range = |w: &MarginalWeights| {
        let min = w.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.as_slice().iter().copied().fold(0.0, f64::max);
        (min, max)
    };
    let (rmin, rmax) = range(&out.weights_r);
    let (cmin, cmax) = range(&out.weights_c);
    kv("weight_r_min", rmin.to_string());
    kv("weight_r_max", rmax.to_string());
    kv("weight_c_min", cmin.to_string());
    kv("weight_c_max", cmax.to_string());
    s
}

/// Matching heatmap for one crop-1 node.
#[derive(Debug, Clone)]
pub struct HeatmapArgs {
    pub pair: PairArgs,
    pub node: usize,
    pub out: PathBuf,
}

/// The plan row of `node` laid out on crop 2's grid: one `g×g` block per
/// pyramid level, stacked top to bottom (or the map's `H×W` without a pyramid).
/// Sinkhorn is iterated to convergence here so the row matches its mass.
pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<String, CommandError> {
    let pair = load_pair(&args.pair)?;
    if args.node >= pair.nodes_a.len() {
        return Err(Error::IndexOutOfRange { index: args.node, len: pair.nodes_a.len() }.into());
    }
    let solver = if args.pair.exact {
        Solver::Exact { limit: CLI_EXACT_LIMIT }
    } else {
        let cap = args.pair.iterations.max(HEATMAP_MAX_ITERATIONS);
        Solver::Sinkhorn(SinkhornConfig::new(args.pair.lambda, cap)?.with_tolerance(HEATMAP_TOLERANCE))
    };
    let opts = EmdOptions { solver, weights: pair.scheme };
    let out = emd_loss(&pair.nodes_a, &pair.nodes_b, &pair.vec_a, &pair.vec_b, &opts)?;
    let row = out.plan.row(args.node);

    let mut csv = String::new();
    match &args.pair.grids {
        None => csv.push_str(&grid_csv(row, pair.map_b.height(), pair.map_b.width())),
        Some(grids) => {
            let mut offset = 0;
            for &g in grids {
                csv.push_str(&grid_csv(&row[offset..offset + g * g], g, g));
                offset += g * g;
            }
        }
    }
    atomic_write(&args.out, csv.as_bytes()).map_err(|e| write_error(&args.out, e))?;

    let row_sum: f64 = row.iter().sum();
    let (argmax, peak) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best });
    let weight = out.weights_r.as_slice()[args.node];
    Ok(format!(
        "node={}\nweight={weight}\nrow_sum={row_sum}\nrow_error={}\npeak_index={argmax}\npeak_fraction={}\nout={}\n",
        args.node,
        (row_sum - weight).abs(),
        peak / row_sum,
        args.out.display()
    ))
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub size: usize,
    pub lambdas: Vec<f64>,
    pub iterations: Vec<usize>,
    pub instances: usize,
    pub seed: u64,
    /// Record wall time; disabled, the column is 0 and output is reproducible.
    pub timing: bool,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            size: 8,
            lambdas: vec![5.0, 25.0, 100.0],
            iterations: vec![DEFAULT_ITERATIONS],
            instances: 5,
            seed: 0,
            timing: true,
        }
    }
}

pub const BENCH_HEADER: &str = "instance,lambda,iterations,transport_cost,exact_cost,gap,row_violation,col_violation,micros";

/// Random `rows×cols` instance with costs in `[0, 2]` and strictly positive normalized masses.
pub fn random_instance<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> (CostMatrix, MarginalWeights, MarginalWeights) {
    let cost: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..=2.0)).collect();
    let r: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..1.0)).collect();
    let c: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
    (
        CostMatrix::new(rows, cols, cost).expect("finite costs"),
        MarginalWeights::normalized(&r).expect("positive masses"),
        MarginalWeights::normalized(&c).expect("positive masses"),
    )
}

/// Entropic cost, gap to the exact optimum and marginal violations per `(λ, T)`.
/// The exact columns stay empty above the exact solver's default size limit.
pub fn cmd_sinkhorn_bench(args: &BenchArgs) -> Result<String, CommandError> {
    if args.size == 0 || args.lambdas.is_empty() || args.iterations.is_empty() {
        return Err(CommandError::Usage("size, lambda list and iteration list must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for inst in 0..args.instances {
        let (cost, r, c) = random_instance(&mut rng, args.size, args.size);
        let exact = match exact_ot(&cost, &r, &c) {
            Ok(sol) => Some(sol.cost),
            Err(Error::SizeExceeded { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        for &lambda in &args.lambdas {
            for &t in &args.iterations {
                let cfg = SinkhornConfig::new(lambda, t)?;
                let start = Instant::now();
                let plan = sinkhorn(&cost, &r, &c, &cfg)?;
                let micros = if args.timing { start.elapsed().as_micros() } else { 0 };
                let tc = transport_cost(&plan, &cost)?;
                let (exact_s, gap_s) = match exact {
                    Some(e) => (e.to_string(), (tc - e).to_string()),
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(
                    out,
                    "{inst},{lambda},{t},{tc},{exact_s},{gap_s},{},{},{micros}",
                    plan.row_violation(&r),
                    plan.col_violation(&c)
                );
            }
        }
    }
    Ok(out)
}

/// Minimum of `Σ_i M[i, σ(i)] / n` over all permutations `σ` (uniform masses).
pub fn brute_force_assignment(cost: &CostMatrix) -> f64 {
    fn search(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = cost.rows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                search(cost, row + 1, used, acc + cost.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "assignment needs a square cost matrix");
    let mut best = f64::INFINITY;
    search(cost, 0, &mut vec![false; n], 0.0, &mut best);
    best / n as f64
}

#[derive(Debug, Clone)]
pub struct OracleArgs {
    pub instances: usize,
    pub max_size: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleArgs {
    fn default() -> Self {
        Self { instances: 100, max_size: 5, lambda: 200.0, iterations: 1000, tolerance: 0.02, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_entropic_gap: f64,
    pub entropic_failures: usize,
    pub assignment_checks: usize,
    pub max_assignment_error: f64,
    pub assignment_failures: usize,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.entropic_failures == 0 && self.assignment_failures == 0
    }
}

/// Cross-checks Sinkhorn against the exact solver on random instances, and the
/// exact solver against permutation enumeration on uniform square instances.
pub fn oracle_check(args: &OracleArgs) -> Result<OracleReport, CommandError> {
    if args.max_size == 0 || args.max_size > crate::ot::EXACT_OT_MAX_SIZE {
        return Err(CommandError::Usage(format!(
            "max size must lie in 1..={}",
            crate::ot::EXACT_OT_MAX_SIZE
        )));
    }
    let cfg = SinkhornConfig::new(args.lambda, args.iterations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut report = OracleReport {
        instances: args.instances,
        max_entropic_gap: 0.0,
        entropic_failures: 0,
        assignment_checks: 0,
        max_assignment_error: 0.0,
        assignment_failures: 0,
    };
    for _ in 0..args.instances {
        let rows = rng.random_range(1..=args.max_size);
        let cols = rng.random_range(1..=args.max_size);
        let (cost, r, c) = random_instance(&mut rng, rows, cols);
        let exact = exact_ot(&cost, &r, &c)?.cost;
        let gap = (transport_cost(&sinkhorn(&cost, &r, &c, &cfg)?, &cost)? - exact).abs();
        report.max_entropic_gap = report.max_entropic_gap.max(gap);
        if gap > args.tolerance {
            report.entropic_failures += 1;
        }

        let n = rows.min(4);
        let (square, _, _) = random_instance(&mut rng, n, n);
        let uniform = MarginalWeights::uniform(n)?;
        let err = (exact_ot(&square, &uniform, &uniform)?.cost - brute_force_assignment(&square)).abs();
        report.assignment_checks += 1;
        report.max_assignment_error = report.max_assignment_error.max(err);
        if err > 1e-12 {
            report.assignment_failures += 1;
        }
    }
    Ok(report)
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<(String, bool), CommandError> {
    let rep = oracle_check(args)?;
    let text = format!(
        "instances={}\nmax_entropic_gap={}\nentropic_failures={}\nassignment_checks={}\nmax_assignment_error={}\nassignment_failures={}\nstatus={}\n",
        rep.instances,
        rep.max_entropic_gap,
        rep.entropic_failures,
        rep.assignment_checks,
        rep.max_assignment_error,
        rep.assignment_failures,
        if rep.passed() { "pass" } else { "fail" }
    );
    Ok((text, rep.passed()))
}

/// The synthetic training corpus a config describes.
pub fn training_images(cfg: &TrainConfig) -> Vec<Image> {
    synthetic_dataset(cfg.dataset_size, cfg.seed, cfg.image_size).into_iter().map(|s| s.image).collect()
}

pub const CHECKPOINT_FILE: &str = "checkpoint.semd";
pub const HISTORY_FILE: &str = "history.csv";

/// Trains from a config file (empty path contents → defaults) and writes the
/// checkpoint and loss history into `out_dir`.
pub fn cmd_train(config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<String, CommandError> {
    let mut cfg = match config {
        Some(p) => read_run_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| write_error(out_dir, e))?;
    let start = Instant::now();
    let outcome = train(&cfg, &training_images(&cfg))?;
    let elapsed = start.elapsed().as_secs_f64();

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint { query: outcome.query, key: outcome.key };
    write_checkpoint(&ckpt, &ckpt_path).map_err(|e| match e {
        CheckpointError::Io(io) => write_error(&ckpt_path, io),
        other => CommandError::Internal(other.to_string()),
    })?;
    let hist_path = out_dir.join(HISTORY_FILE);
    atomic_write(&hist_path, history_csv(&outcome.history).as_bytes()).map_err(|e| write_error(&hist_path, e))?;

    let mut s = format!("steps={}\nseed={}\n", cfg.steps, cfg.seed);
    if !outcome.history.is_empty() {
        let window = 20.min(outcome.history.len());
        let (first, last) = smoothed_endpoints(&outcome.history, window);
        let _ = write!(s, "initial_loss={first}\nfinal_loss={last}\nratio={}\n", last / first);
    }
    let _ = write!(s, "seconds={elapsed:.2}\ncheckpoint={}\nhistory={}\n", ckpt_path.display(), hist_path.display());
    Ok(s)
}

/// Writes `n` scenes as `img_NNNN.ppm` plus an `index.csv` describing their
/// shapes. `n = 0` leaves `out_dir` empty.
pub fn cmd_gen_synthetic(n: usize, seed: u64, size: usize, out_dir: &Path) -> Result<String, CommandError> {
    if size < 8 {
        return Err(CommandError::Usage(format!("image size must be at least 8, got {size}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| write_error(out_dir, e))?;
    let scenes = synthetic_dataset(n, seed, size);
    let mut index = String::from("file,shapes,kinds,colors\n");
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("img_{i:04}.ppm");
        let path = out_dir.join(&name);
        atomic_write(&path, &scene.image.to_ppm()).map_err(|e| write_error(&path, e))?;
        let kinds: Vec<&str> = scene
            .shapes
            .iter()
            .map(|s| match s.kind {
                ShapeKind::Rectangle => "rect",
                ShapeKind::Ellipse => "ellipse",
            })
            .collect();
        let colors: Vec<String> = scene
            .shapes
            .iter()
            .map(|s| s.color.iter().map(|v| format!("{:02x}", (v * 255.0).round() as u8)).collect())
            .collect();
        let _ = writeln!(index, "{name},{},{},{}", scene.shapes.len(), kinds.join(";"), colors.join(";"));
    }
    if n > 0 {
        let path = out_dir.join("index.csv");
        atomic_write(&path, index.as_bytes()).map_err(|e| write_error(&path, e))?;
    }
    Ok(format!("images={n}\nout={}\n", out_dir.display()))
}
