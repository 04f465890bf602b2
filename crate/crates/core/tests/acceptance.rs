//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does. Reference values come from oracles
//! written here, independent of the library code they check.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use self_emd::encoder::augment::small_view;
use self_emd::encoder::model::EncoderParams;
use self_emd::encoder::train::{
    embed, loss_and_grad, loss_with_plans, per_dimension_std, smoothed_endpoints, train, ImageViews, TrainConfig,
};
use self_emd::encoder::data::{synthetic_dataset, Image};
use self_emd::encoder::ema_update;
use self_emd::io::commands::{cmd_emd, cmd_heatmap, training_images, HeatmapArgs, PairArgs};
use self_emd::io::csv::{history_csv, parse_grid_csv};
use self_emd::io::fmap::{read_fmap, write_fmap, write_vector, FmapError};
use self_emd::loss::{marginal_weights, marginal_weights_deepemd, EmdOptions, Solver, WeightScheme};
use self_emd::pyramid::{adaptive_pool, pyramid_nodes, PyramidSpec};
use self_emd::{
    emd_loss, exact_ot, sinkhorn, transport_cost, CostMatrix, EmbeddingVector, FeatureMap, MarginalWeights, NodeSet,
    SinkhornConfig,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> MarginalWeights {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MarginalWeights::new(raw.iter().map(|v| v / total).collect()).unwrap()
}

fn random_cost(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CostMatrix {
    CostMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..=2.0)).collect()).unwrap()
}

/// Every permutation of `0..n`, by Heap's algorithm.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// For uniform masses an optimal plan is a permutation matrix scaled by 1/n.
fn assignment_oracle(cost: &CostMatrix) -> f64 {
    let n = cost.rows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = SinkhornConfig::new(200.0, 1000).unwrap();
    let mut worst_gap: f64 = 0.0;
    for k in 0..100 {
        let (rows, cols) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let cost = random_cost(&mut rng, rows, cols);
        let (r, c) = (random_simplex(&mut rng, rows), random_simplex(&mut rng, cols));
        let exact = exact_ot(&cost, &r, &c).map_err(|e| e.to_string())?.cost;
        let entropic = transport_cost(&sinkhorn(&cost, &r, &c, &cfg).unwrap(), &cost).unwrap();
        let gap = (entropic - exact).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 0.02, || format!("instance {k}: sinkhorn {entropic} vs exact {exact}"))?;
    }
    let mut worst_assign: f64 = 0.0;
    let mut checked = 0;
    for n in 1..=4 {
        for _ in 0..50 {
            let cost = random_cost(&mut rng, n, n);
            let u = MarginalWeights::uniform(n).unwrap();
            let exact = exact_ot(&cost, &u, &u).unwrap().cost;
            let brute = assignment_oracle(&cost);
            worst_assign = worst_assign.max((exact - brute).abs());
            ensure((exact - brute).abs() <= 1e-12, || format!("n={n}: exact {exact} vs enumeration {brute}"))?;
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "max entropic gap {worst_gap:.2e} over 100 instances; max enumeration error {worst_assign:.1e} over {checked}; {elapsed:.2?}"
    ))
}

fn feasibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut calls = 0;
    let mut worst_col: f64 = 0.0;
    for inst in 0..20 {
        let (rows, cols) = (rng.random_range(2..=12), rng.random_range(2..=12));
        let cost = random_cost(&mut rng, rows, cols);
        let (r, c) = (random_simplex(&mut rng, rows), random_simplex(&mut rng, cols));
        let lambda = [5.0, 25.0, 100.0][inst % 3];
        let mut prev = f64::INFINITY;
        for t in 1..=60 {
            let plan = sinkhorn(&cost, &r, &c, &SinkhornConfig::new(lambda, t).unwrap()).unwrap();
            calls += 1;
            let col_err = (0..cols)
                .map(|j| ((0..rows).map(|i| plan.get(i, j)).sum::<f64>() - c.as_slice()[j]).abs())
                .fold(0.0, f64::max);
            worst_col = worst_col.max(col_err);
            ensure(col_err <= 1e-9, || format!("instance {inst}, T={t}: column violation {col_err:e}"))?;
            let row_err: f64 = (0..rows)
                .map(|i| ((0..cols).map(|j| plan.get(i, j)).sum::<f64>() - r.as_slice()[i]).abs())
                .sum();
            ensure(row_err <= prev + 1e-15, || {
                format!("instance {inst}: row violation rose from {prev:e} to {row_err:e} at T={t}")
            })?;
            prev = row_err;
        }
    }
    Ok(format!("{calls} calls, max column violation {worst_col:.1e}, row violation monotone in T"))
}

fn random_nodes(rng: &mut ChaCha8Rng, n: usize, d: usize) -> NodeSet {
    NodeSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss_identities(dir: &std::path::Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..1000 {
        let d = rng.random_range(1..=8);
        let (n, m) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let (x, y) = (random_nodes(&mut rng, n, d), random_nodes(&mut rng, m, d));
        let (vx, vy) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
        let weights = if k % 2 == 0 { WeightScheme::Anchor } else { WeightScheme::MeanNode };
        let cfg = SinkhornConfig::new(rng.random_range(1.0..100.0), rng.random_range(1..=30)).unwrap();
        let opts = EmdOptions { solver: Solver::Sinkhorn(cfg), weights };
        let loss = emd_loss(&x, &y, &vx, &vy, &opts).unwrap().loss;
        lo = lo.min(loss);
        hi = hi.max(loss);
        ensure((0.0..=4.0).contains(&loss), || format!("input {k}: loss {loss}"))?;
    }

    // Identical maps through the command surface with the exact solver.
    let map = FeatureMap::from_fn(5, 5, 6, |h, w, c| ((h * 5 + w) as f64 * 0.7 + c as f64 * 1.3).sin()).unwrap();
    let path = dir.join("same.fmap");
    write_fmap(&map, &path).unwrap();
    let text = cmd_emd(&PairArgs { exact: true, ..PairArgs::new(&path, &path) }).map_err(|e| e.to_string())?;
    let identical: f64 = text.lines().find_map(|l| l.strip_prefix("loss=")).unwrap().parse().unwrap();
    ensure(identical <= 1e-6, || format!("identical maps gave loss {identical}"))?;

    // Antipodal nodes: every cosine is -1.
    let base: Vec<f64> = random_vec(&mut rng, 4).as_slice().to_vec();
    let x1 = NodeSet::new(4, (0..6).flat_map(|_| base.clone()).collect()).unwrap();
    let y1 = NodeSet::new(4, (0..5).flat_map(|_| base.iter().map(|v| -v).collect::<Vec<_>>()).collect()).unwrap();
    let anti = emd_loss(&x1, &y1, &random_vec(&mut rng, 4), &random_vec(&mut rng, 4), &EmdOptions::default())
        .unwrap()
        .loss;
    ensure((anti - 4.0).abs() <= 1e-9, || format!("antipodal loss {anti}"))?;

    // Constant Y: the anchor scheme with v_y = y and the mean-node scheme coincide.
    let mut agree = 0;
    for _ in 0..50 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=10);
        let x = random_nodes(&mut rng, n, d);
        let y0 = random_vec(&mut rng, d);
        let m = rng.random_range(1..=10);
        let y = NodeSet::new(d, (0..m).flat_map(|_| y0.as_slice().to_vec()).collect()).unwrap();
        let from_anchor = marginal_weights(&x, &y0).unwrap();
        let from_mean = marginal_weights_deepemd(&x, &y).unwrap();
        ensure(from_anchor == from_mean, || format!("weights differ: {from_anchor:?} vs {from_mean:?}"))?;
        agree += 1;
    }
    Ok(format!(
        "1000 losses in [{lo:.3}, {hi:.3}]; identical exact {identical:.1e}; antipodal {anti}; {agree} constant-Y weight pairs identical"
    ))
}

const FINE_STEP: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig { view_size: 16, image_size: 16, grid: 2, pyramid: PyramidSpec::new(vec![2, 1]).unwrap(), ..TrainConfig::default() };
    let settings = cfg.loss_settings();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut refined = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let query = EncoderParams::init(&mut rng);
        let key = EncoderParams::init(&mut rng);
        let image = synthetic_dataset(1, seed, 16).remove(0).image;
        let views = ImageViews {
            a: image.clone(),
            b: Image::new(16, 16, image.data.iter().rev().copied().collect()),
            small: Some(small_view(&image, &mut rng, 16)),
        };
        let out = loss_and_grad(&query, &key, &views, &settings).unwrap();
        let analytic = out.query_grad.flat();
        let base = query.flat();
        for (p, &g) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut theta = base.clone();
                theta[p] += delta;
                let q = EncoderParams::from_flat(&theta).unwrap();
                loss_with_plans(&q, &key, &views, &settings, &out.plans).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let mut rel = relative_error(g, numeric);
            if rel > 1e-4 {
                // A ReLU input within h of zero makes the loss non-smooth on the
                // stencil. A correct gradient still agrees once the step shrinks.
                let fine = (eval(FINE_STEP) - eval(-FINE_STEP)) / (2.0 * FINE_STEP);
                rel = relative_error(g, fine);
                ensure(rel <= 1e-4, || {
                    format!("seed {seed}, parameter {p}: analytic {g:e} vs numeric {numeric:e} (h={h}), {fine:e} (h={FINE_STEP})")
                })?;
                refined += 1;
            }
            worst = worst.max(rel);
            count += 1;
        }
        ensure(out.key_grad.flat().iter().all(|&g| g == 0.0), || "key branch received gradient".into())?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    ensure(refined * 1000 <= count, || format!("{refined} of {count} parameters needed a finer step"))?;
    Ok(format!(
        "{count} parameter checks over 5 seeds, max relative error {worst:.2e}; {refined} re-checked at h={FINE_STEP} (ReLU kink inside h=1e-4 stencil); {elapsed:.2?}"
    ))
}

fn ema_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let theta = EncoderParams::init(&mut rng);
    let xi0 = EncoderParams::init(&mut rng);
    let mut worst: f64 = 0.0;
    for m in [0.0, 0.5, 0.99, 1.0] {
        let mut xi = xi0.clone();
        for k in 1..=50 {
            xi = ema_update(&xi, &theta, m).unwrap();
            let factor = m.powi(k);
            for ((a, t), b) in xi.flat().iter().zip(theta.flat()).zip(xi0.flat()) {
                let got = (a - t).abs();
                let want = factor * (b - t).abs();
                if m == 0.0 || m == 1.0 {
                    ensure(got == want, || format!("m={m}, k={k}: {got:e} vs {want:e}"))?;
                } else {
                    // Each update rounds at most a few ulps of max(|ξ|, |θ|); those
                    // errors decay geometrically, so their sum is bounded by 1/(1-m).
                    let scale = b.abs().max(t.abs());
                    let bound = 4.0 * f64::EPSILON * scale / (1.0 - m);
                    let err = (got - want).abs();
                    worst = worst.max(err / bound);
                    ensure(err <= bound, || format!("m={m}, k={k}: {got:e} vs {want:e}"))?;
                }
            }
        }
    }
    Ok(format!("m in {{0, 0.5, 0.99, 1}} over 50 updates; exact at m=0,1; rounding within {:.0}% of the error bound", 100.0 * worst))
}

fn toy_training() -> Outcome {
    let cfg = TrainConfig::default();
    let images = training_images(&cfg);
    let start = Instant::now();
    let first = train(&cfg, &images).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("training took {elapsed:?}"))?;
    ensure(first.history.len() == 200, || format!("{} history rows", first.history.len()))?;
    let (initial, last) = smoothed_endpoints(&first.history, 20);
    let ratio = last / initial;
    ensure(ratio <= 0.7, || format!("smoothed loss {initial} -> {last} (ratio {ratio})"))?;

    let probe: Vec<Image> = synthetic_dataset(32, 9_999, cfg.image_size).into_iter().map(|s| s.image).collect();
    let mut min_std = f64::INFINITY;
    for params in [&first.query, &first.key] {
        let std = per_dimension_std(&embed(params, &probe, cfg.view_size, cfg.grid));
        min_std = std.iter().copied().fold(min_std, f64::min);
    }
    ensure(min_std > 1e-3, || format!("collapsed: min per-dimension std {min_std:e}"))?;

    let second = train(&cfg, &images).map_err(|e| e.to_string())?;
    ensure(history_csv(&first.history) == history_csv(&second.history), || "rerun history differs".into())?;
    ensure(first.query == second.query && first.key == second.key, || "rerun parameters differ".into())?;
    Ok(format!(
        "200 steps in {elapsed:.1?}; smoothed loss {initial:.3} -> {last:.3} (ratio {ratio:.3}); min std {min_std:.3e}; rerun identical"
    ))
}

fn spc() -> Outcome {
    let map = FeatureMap::from_fn(7, 7, 3, |h, w, c| (h * 31 + w * 7 + c) as f64 * 0.01).unwrap();
    let nodes = pyramid_nodes(&map, &PyramidSpec::new(vec![7, 5, 3]).unwrap()).unwrap();
    ensure(nodes.len() == 83, || format!("{} nodes", nodes.len()))?;
    let same = adaptive_pool(&map, 7).unwrap();
    ensure(same == map, || "g = H pooling changed the map".into())?;

    let small = FeatureMap::from_fn(4, 4, 2, |h, w, c| (h * 4 + w) as f64 + 100.0 * c as f64).unwrap();
    let pooled = adaptive_pool(&small, 2).unwrap();
    for (bh, bw, c) in (0..2).flat_map(|a| (0..2).flat_map(move |b| (0..2).map(move |c| (a, b, c)))) {
        let block: f64 = (0..2)
            .flat_map(|dy| (0..2).map(move |dx| (2 * bh + dy, 2 * bw + dx)))
            .map(|(y, x)| small.get(y, x, c))
            .sum::<f64>()
            / 4.0;
        ensure((pooled.get(bh, bw, c) - block).abs() <= 1e-12, || {
            format!("block ({bh},{bw},{c}): {} vs {block}", pooled.get(bh, bw, c))
        })?;
    }
    ensure(pooled.get(0, 0, 0) == 2.5 && pooled.get(1, 1, 0) == 12.5, || "hand values".into())?;
    Ok("7x7 with grids [7,5,3] gives 83 nodes; g=H identity; 4x4->2x2 block means match".into())
}

fn heatmap_feasibility(dir: &std::path::Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let random_map = |rng: &mut ChaCha8Rng| {
        FeatureMap::new(7, 7, 8, (0..7 * 7 * 8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let [a, b, va, vb] = ["a", "b", "va", "vb"].map(|n| dir.join(format!("{n}.fmap")));
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for round in 0..4 {
        write_fmap(&random_map(&mut rng), &a).unwrap();
        write_fmap(&random_map(&mut rng), &b).unwrap();
        write_vector(&random_vec(&mut rng, 8), &va).unwrap();
        write_vector(&random_vec(&mut rng, 8), &vb).unwrap();
        for (grids, exact) in [(None, false), (Some(vec![7, 5, 3]), false), (None, true)] {
            let node = rng.random_range(0..if grids.is_some() { 83 } else { 49 });
            let out = dir.join("heat.csv");
            let pair = PairArgs {
                vec_a: Some(va.clone()),
                vec_b: Some(vb.clone()),
                grids,
                exact,
                ..PairArgs::new(&a, &b)
            };
            let text = cmd_heatmap(&HeatmapArgs { pair: pair.clone(), node, out: out.clone() }).map_err(|e| e.to_string())?;
            let weight: f64 = text.lines().find_map(|l| l.strip_prefix("weight=")).unwrap().parse().unwrap();
            let values: Vec<f64> = parse_grid_csv(&std::fs::read_to_string(&out).unwrap()).unwrap().concat();
            ensure(values.iter().all(|&v| v >= 0.0), || "negative heatmap entry".into())?;
            // Recompute the marginal weight independently from the files.
            let nodes_of = |m: &FeatureMap| match &pair.grids {
                None => m.to_nodes(),
                Some(g) => pyramid_nodes(m, &PyramidSpec::new(g.clone()).unwrap()).unwrap(),
            };
            let xa = nodes_of(&read_fmap(&a).unwrap());
            let vbv = self_emd::io::fmap::read_vector(&vb).unwrap();
            let raw: Vec<f64> =
                xa.iter().map(|x| x.iter().zip(vbv.as_slice()).map(|(p, q)| p * q).sum::<f64>().max(0.0) + 1e-8).collect();
            let expected = raw[node] / raw.iter().sum::<f64>();
            ensure((expected - weight).abs() <= 1e-12, || format!("marginal {weight} vs {expected}"))?;
            let err = (values.iter().sum::<f64>() - weight).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("round {round}: row sum off by {err:e}"))?;
            rows += 1;
        }
    }

    let map = random_map(&mut rng);
    write_fmap(&map, &a).unwrap();
    let vec = random_vec(&mut rng, 8);
    write_vector(&vec, &va).unwrap();
    let mut min_share: f64 = 1.0;
    for node in [0, 10, 24, 37, 48] {
        let out = dir.join("self.csv");
        let pair = PairArgs { vec_a: Some(va.clone()), vec_b: Some(va.clone()), exact: true, ..PairArgs::new(&a, &a) };
        cmd_heatmap(&HeatmapArgs { pair, node, out: out.clone() }).map_err(|e| e.to_string())?;
        let values: Vec<f64> = parse_grid_csv(&std::fs::read_to_string(&out).unwrap()).unwrap().concat();
        let share = values[node] / values.iter().sum::<f64>();
        min_share = min_share.min(share);
        ensure(share >= 0.99, || format!("node {node}: only {share} of its mass on itself"))?;
    }
    Ok(format!("{rows} exported rows, max row-sum error {worst:.1e}; identical-map self share >= {min_share:.4}"))
}

fn format_round_trip(dir: &std::path::Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let path = dir.join("rt.fmap");
    for k in 0..1000 {
        let (h, w, c) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=5));
        let data: Vec<f64> = (0..h * w * c).map(|_| f64::from(rng.random_range(-1e4f32..1e4))).collect();
        let map = FeatureMap::new(h, w, c, data).unwrap();
        write_fmap(&map, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = read_fmap(&path).map_err(|e| format!("map {k}: {e}"))?;
        ensure(back == map, || format!("map {k}: values changed"))?;
        write_fmap(&back, &path).unwrap();
        ensure(std::fs::read(&path).unwrap() == bytes, || format!("map {k}: bytes changed"))?;
    }

    // Hand-built fixtures: a valid 2x2x1 header then corruptions.
    let mut good = b"FMAP".to_vec();
    for v in [1u32, 2, 2, 1] {
        good.extend_from_slice(&v.to_le_bytes());
    }
    for v in [0.5f32, 1.5, -2.0, 3.0] {
        good.extend_from_slice(&v.to_le_bytes());
    }
    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"XMAP");
    let truncated = good[..good.len() - 4].to_vec();
    let mut nan = good.clone();
    nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut codes = Vec::new();
    for (name, bytes) in [("magic", magic), ("truncated", truncated), ("nan", nan)] {
        let p = dir.join(format!("{name}.fmap"));
        std::fs::write(&p, bytes).unwrap();
        match read_fmap(&p) {
            Err(e @ (FmapError::BadMagic(_) | FmapError::Truncated { .. } | FmapError::NonFinite(_))) => codes.push(e.code()),
            other => return Err(format!("{name} fixture: {other:?}")),
        }
    }
    let mut distinct = codes.clone();
    distinct.sort();
    distinct.dedup();
    ensure(distinct.len() == 3, || format!("codes {codes:?}"))?;
    Ok(format!("1000 random files bit-exact; corruption codes {codes:?}"))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("feasibility", Box::new(feasibility)),
        ("loss bounds and identities", Box::new(|| loss_identities(dir.path()))),
        ("gradient check", Box::new(gradient_check)),
        ("EMA law", Box::new(ema_law)),
        ("toy training", Box::new(toy_training)),
        ("spatial pyramid", Box::new(spc)),
        ("heatmap feasibility", Box::new(|| heatmap_feasibility(dir.path()))),
        ("format round-trip", Box::new(|| format_round_trip(dir.path()))),
    ];
    // Written to the stderr handle directly so the lines survive output capture.
    let mut log = std::io::stderr();
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("PASS {}. {name}: {detail}", k + 1),
            Err(detail) => {
                failed.push(*name);
                format!("FAIL {}. {name}: {detail}", k + 1)
            }
        };
        writeln!(log, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
