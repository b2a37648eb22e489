//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line per
//! criterion with its runtime, and exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vfl_core::analysis::{
    check_theorem2, check_theorem3, epoch_stats, reference_optimum, stepsize_theorem1,
    suboptimality_curve, time_to_target, AnalysisError, CurvePoint, TheoryConstants,
};
use vfl_core::data::{
    generate_synthetic, partition_features, Dataset, PartitionMode, PartitionedData,
    SyntheticSpec, Task,
};
use vfl_core::engine::{
    inject_straggler, run, run_from, stream_rng, Algorithm, Clock, CostModel, EventLog,
    EventRecord, MaskMode, Mode, RunConfig,
};
use vfl_core::estimators::{svrg_estimate, sgd_estimate, SagaTable};
use vfl_core::losses::{
    block_gradient_from_residual, full_block_gradient, local_product, sample_block_gradient,
    score_derivative, LossKind, LossSpec, ModelView,
};
use vfl_core::treecomm::{
    is_significantly_different, masked_tree_sum, tree_sum, Node, TreePair, TreeTopology,
    Transcript,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn problem(n: usize, d: usize, q: usize, task: Task, seed: u64, noise: Option<f64>) -> (Dataset, PartitionedData) {
    let mut spec = SyntheticSpec::new(n, d, task, seed);
    if let Some(s) = noise {
        spec.noise_std = s;
    }
    let ds = generate_synthetic(&spec).unwrap().dataset;
    let p = partition_features(d, q, PartitionMode::Contiguous).unwrap();
    let data = PartitionedData::new(&ds, &p).unwrap();
    (ds, data)
}

fn random_model(data: &PartitionedData, spec: &LossSpec, rng: &mut ChaCha8Rng) -> ModelView {
    let mut m = ModelView::zeros(data.partition(), spec);
    for b in &mut m.blocks {
        b.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
    }
    if let Some(b) = m.bias.as_mut() {
        *b = rng.sample::<f64, _>(StandardNormal);
    }
    m
}

/// Score `w·x_i` from the unpartitioned dataset, summed feature by feature.
fn direct_score(ds: &Dataset, data: &PartitionedData, m: &ModelView, i: usize) -> f64 {
    let full = m.to_full(data.partition());
    (0..ds.n_features()).map(|j| full[j] * ds.features[(i, j)]).sum()
}

// ---------------------------------------------------------------------------
// 1. Estimator unbiasedness

fn criterion_1() -> Outcome {
    let (ds, data) = problem(50, 8, 2, Task::Classification, 11, None);
    let spec = LossSpec::logistic(1e-3);
    let n = data.n_samples();
    let mut runner = TestRunner::new(PropConfig {
        cases: 32,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let worst = std::cell::Cell::new(0.0f64);
    let result = runner.run(&proptest::num::u64::ANY, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_model(&data, &spec, &mut rng);
        let snap = random_model(&data, &spec, &mut rng);
        for worker in 1..=2 {
            // Oracle: (1/n) Σ_i -y σ(-y s) x_i + λ w, from the unpartitioned features.
            let cols = data.partition().group(worker).to_vec();
            let wb = w.block(worker);
            let mut oracle = vec![0.0; cols.len()];
            for i in 0..n {
                let y = ds.labels[i];
                let s = direct_score(&ds, &data, &w, i);
                let r = -y / (1.0 + (y * s).exp());
                for (k, &j) in cols.iter().enumerate() {
                    oracle[k] += r * ds.features[(i, j)] / n as f64;
                }
            }
            oracle.iter_mut().zip(wb).for_each(|(o, v)| *o += spec.lambda * v);

            let grad_at = |m: &ModelView, i: usize| {
                let s = direct_score(&ds, &data, m, i);
                sample_block_gradient(&spec, m, &data, i, worker, s).into_flat()
            };
            let snap_full = full_block_gradient(&spec, &snap, &data, worker).into_flat();
            let alphas: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..cols.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let table = SagaTable::from_entries(alphas).unwrap();

            let mut means = vec![vec![0.0; cols.len()]; 3];
            for i in 0..n {
                let g = grad_at(&w, i);
                let ests = [
                    sgd_estimate(&g),
                    svrg_estimate(&g, &grad_at(&snap, i), &snap_full).unwrap(),
                    table.estimate(&g, i).unwrap(),
                ];
                for (m, e) in means.iter_mut().zip(&ests) {
                    m.iter_mut().zip(e).for_each(|(a, b)| *a += b / n as f64);
                }
            }
            for (name, m) in ["sgd", "svrg", "saga"].iter().zip(&means) {
                let err = m.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst.set(worst.get().max(err));
                proptest::prop_assert!(err <= 1e-10, "{} worker {}: error {:e}", name, worker, err);
            }
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("32 random (model, snapshot, table) cases, max error {:.1e}", worst.get()))
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness against central differences

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for (kind, task) in [(LossKind::Logistic, Task::Classification), (LossKind::Ridge, Task::Regression)] {
        let (ds, data) = problem(30, 7, 3, task, 21, None);
        let spec = match kind {
            LossKind::Logistic => LossSpec::logistic(0.05),
            LossKind::Ridge => LossSpec::ridge(0.05, true),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        // f_i(θ) = loss(w·x_i + b, y_i) + λ/2 ‖θ‖², evaluated on the flat parameter vector.
        let f_i = |theta: &[f64], i: usize| {
            let d = ds.n_features();
            let b = if spec.has_bias { theta[d] } else { 0.0 };
            let s: f64 = (0..d).map(|j| theta[j] * ds.features[(i, j)]).sum::<f64>() + b;
            let y = ds.labels[i];
            let loss = match kind {
                LossKind::Logistic => (1.0 + (-y * s).exp()).ln(),
                LossKind::Ridge => (s - y) * (s - y),
            };
            loss + 0.5 * spec.lambda * theta.iter().map(|v| v * v).sum::<f64>()
        };
        for _ in 0..20 {
            let m = random_model(&data, &spec, &mut rng);
            let i = rng.random_range(0..data.n_samples());
            let mut theta = m.to_full(data.partition());
            theta.extend(m.bias);
            let s = direct_score(&ds, &data, &m, i);
            for worker in 1..=data.n_workers() {
                let g = sample_block_gradient(&spec, &m, &data, i, worker, s).into_flat();
                let mut coords: Vec<usize> = data.partition().group(worker).to_vec();
                if g.len() > coords.len() {
                    coords.push(ds.n_features());
                }
                for (k, &j) in coords.iter().enumerate() {
                    let h = 1e-5;
                    let mut up = theta.clone();
                    up[j] += h;
                    let mut down = theta.clone();
                    down[j] -= h;
                    let fd = (f_i(&up, i) - f_i(&down, i)) / (2.0 * h);
                    let err = (g[k] - fd).abs() / g[k].abs().max(1.0);
                    worst = worst.max(err);
                    ensure(err <= 1e-6, || format!("{kind:?} coord {j}: analytic {} vs fd {fd}", g[k]))?;
                }
            }
        }
    }
    Ok(format!("20 points per loss, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. Masked sums and subtree-disjointness of the generated pairs

fn internal_leaf_sets(node: &Node, out: &mut Vec<BTreeSet<usize>>) -> BTreeSet<usize> {
    match node {
        Node::Leaf(w) => BTreeSet::from([*w]),
        Node::Merge(a, b) => {
            let mut s = internal_leaf_sets(a, out);
            s.extend(internal_leaf_sets(b, out));
            out.push(s.clone());
            s
        }
    }
}

/// Leaf sets of subtrees with more than one and fewer than `q` leaves.
fn proper_sets(t: &TreeTopology) -> Vec<BTreeSet<usize>> {
    let mut all = Vec::new();
    let root = internal_leaf_sets(t.root(), &mut all);
    all.retain(|s| s.len() > 1 && s.len() < root.len());
    all
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for q in [2usize, 4, 8] {
        for trial in 0..100u64 {
            let pair = TreePair::generate(q, trial).unwrap();
            let (a, b) = (proper_sets(pair.t1()), proper_sets(pair.t2()));
            ensure(a.iter().all(|s| !b.contains(s)), || format!("q={q} trial {trial}: shared subtree"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * q as u64 + trial);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let c: Vec<f64> = (0..q).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let range = 1e3 * scale.max(1.0);
            let mut tr = Transcript::new();
            let masked = masked_tree_sum(pair.t1(), pair.t2(), &c, range, &mut rng, &mut tr).unwrap();
            let plain: f64 = c.iter().sum();
            let mag: f64 = c.iter().map(|v| v.abs()).sum();
            let err = (masked - plain).abs() / mag;
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("q={q} trial {trial}: {masked} vs {plain}"))?;
            ensure(tr.merge_count() == 2 * (q - 1), || format!("q={q}: {} merges", tr.merge_count()))?;
        }
    }
    Ok(format!("300 trials, max relative error {worst:.1e}, no shared proper subtree"))
}

// ---------------------------------------------------------------------------
// 4. Significant difference against brute-force enumeration

fn shapes(leaves: &[usize]) -> Vec<Node> {
    if leaves.len() == 1 {
        return vec![Node::Leaf(leaves[0])];
    }
    let mut out = Vec::new();
    for k in 1..leaves.len() {
        for l in shapes(&leaves[..k]) {
            for r in shapes(&leaves[k..]) {
                out.push(Node::Merge(Box::new(l.clone()), Box::new(r)));
            }
        }
    }
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Bitmasks of every subtree's leaf set, found by walking the tree.
fn subtree_masks(node: &Node, out: &mut Vec<u32>) -> u32 {
    match node {
        Node::Leaf(w) => {
            out.push(1 << w);
            1 << w
        }
        Node::Merge(a, b) => {
            let m = subtree_masks(a, out) | subtree_masks(b, out);
            out.push(m);
            m
        }
    }
}

fn criterion_4() -> Outcome {
    let mut pairs = 0usize;
    let mut differing = 0usize;
    for q in 1..=5usize {
        let leaves: Vec<usize> = (1..=q).collect();
        let mut trees = Vec::new();
        for perm in permutations(&leaves) {
            for shape in shapes(&perm) {
                let mut masks = Vec::new();
                subtree_masks(&shape, &mut masks);
                masks.retain(|m| (2..q as u32).contains(&m.count_ones()));
                trees.push((TreeTopology::new(shape).unwrap(), masks));
            }
        }
        for (t1, m1) in &trees {
            for (t2, m2) in &trees {
                let oracle = !m1.iter().any(|m| m2.contains(m));
                let got = is_significantly_different(t1, t2).unwrap();
                ensure(got == oracle, || format!("disagreement on {t1:?} vs {t2:?}"))?;
                pairs += 1;
                differing += usize::from(oracle);
            }
        }
    }
    Ok(format!("{pairs} ordered pairs for q <= 5, {differing} significantly different"))
}

// ---------------------------------------------------------------------------
// 5. Convergence with a tuned step size

const GRID: [f64; 4] = [0.5, 0.1, 0.05, 0.01];

fn criterion_5() -> Outcome {
    let (_, data) = problem(200, 20, 4, Task::Classification, 7, None);
    let spec = LossSpec::logistic(1e-4);
    let opt = reference_optimum(&spec, &data).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    let mut ok = true;
    for (alg, target) in [(Algorithm::Svrg, 1e-6), (Algorithm::Saga, 1e-6), (Algorithm::Sgd, 1e-2)] {
        let mut best = (f64::NAN, f64::INFINITY);
        for gamma in GRID {
            let mut cfg = RunConfig::new(alg, gamma, 40_000, spec);
            cfg.record_every = 1000;
            let out = run(&cfg, &data).map_err(|e| e.to_string())?;
            let c = suboptimality_curve(&out.curve, &spec, &data, opt.value).map_err(|e| e.to_string())?;
            let last = c.last().unwrap().suboptimality;
            if last < best.1 {
                best = (gamma, last);
            }
        }
        ok &= best.1 <= target;
        report.push(format!("{} {:.1e} (gamma {}, target {:.0e})", alg.name(), best.1, best.0, target));
    }
    let line = report.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------------------
// 6. Asynchronous speedup on the wall clock with a straggler

const SPEEDUP_COST: CostModel = CostModel {
    step_us: 200.0,
    message_us: 20.0,
    full_pass_us_per_sample: 2.0,
};

fn speedup_config(alg: Algorithm, gamma: f64, updates: usize, mode: Mode, clock: Clock) -> RunConfig {
    let mut cfg = inject_straggler(RunConfig::new(alg, gamma, updates, LossSpec::logistic(1e-4)), 2, 3.0).unwrap();
    cfg.mode = mode;
    cfg.clock = clock;
    cfg.cost = SPEEDUP_COST;
    cfg.record_every = 100;
    cfg
}

fn curve_of(cfg: &RunConfig, data: &PartitionedData, f_star: f64) -> Result<Vec<CurvePoint>, String> {
    let out = run(cfg, data).map_err(|e| e.to_string())?;
    suboptimality_curve(&out.curve, &cfg.loss, data, f_star).map_err(|e| e.to_string())
}

/// Picks γ on the virtual clock: among grid values whose run ends at or below the
/// target, the one crossing it first. Returns γ and the update count at the crossing.
fn tune(alg: Algorithm, mode: Mode, data: &PartitionedData, f_star: f64, target: f64) -> Result<(f64, u64), String> {
    let mut settled = None;
    let mut crossed = None;
    for gamma in GRID {
        let c = curve_of(&speedup_config(alg, gamma, 30_000, mode, Clock::Virtual), data, f_star)?;
        let Some(t) = time_to_target(&c, target) else { continue };
        let u = c.iter().find(|p| p.suboptimality <= target).unwrap().updates;
        let better = |b: Option<(f64, f64, u64)>| b.is_none_or(|(_, bt, _)| t < bt);
        if c.last().unwrap().suboptimality <= target && better(settled) {
            settled = Some((gamma, t, u));
        }
        if better(crossed) {
            crossed = Some((gamma, t, u));
        }
    }
    settled
        .or(crossed)
        .map(|(g, _, u)| (g, u))
        .ok_or_else(|| format!("{} {mode}: no step size reaches {target:e}", alg.name()))
}

fn wall_time_to_target(alg: Algorithm, mode: Mode, data: &PartitionedData, f_star: f64, target: f64) -> Result<f64, String> {
    let (gamma, u) = tune(alg, mode, data, f_star, target)?;
    let budget = ((1.6 * u as f64) as usize + 1000).min(30_000);
    for updates in [budget, 30_000] {
        let c = curve_of(&speedup_config(alg, gamma, updates, mode, Clock::Wall), data, f_star)?;
        if let Some(t) = time_to_target(&c, target) {
            return Ok(t);
        }
    }
    Err(format!("{} {mode} wall run (gamma {gamma}) never reaches {target:e}", alg.name()))
}

fn criterion_6() -> Outcome {
    let mut report = Vec::new();
    let mut ok = true;
    let problems: Vec<(PartitionedData, f64)> = (1..=4u64)
        .map(|seed| {
            let (_, data) = problem(200, 20, 4, Task::Classification, seed, Some(0.5));
            let f_star = reference_optimum(&LossSpec::logistic(1e-4), &data).unwrap().value;
            (data, f_star)
        })
        .collect();
    for (alg, target) in [(Algorithm::Sgd, 10f64.powf(-1.5)), (Algorithm::Svrg, 1e-4), (Algorithm::Saga, 1e-4)] {
        let (mut t_async, mut t_sync) = (0.0, 0.0);
        for (data, f_star) in &problems {
            t_async += wall_time_to_target(alg, Mode::Async, data, *f_star, target)?;
            t_sync += wall_time_to_target(alg, Mode::Sync, data, *f_star, target)?;
        }
        let s = t_sync / t_async;
        ok &= s >= 1.3;
        report.push(format!("{} {s:.2}x ({t_sync:.0} ms / {t_async:.0} ms)", alg.name()));
    }
    let line = report.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------------------
// 7. One worker reduces to the sequential optimizer

/// Plain single-block loop: draw i, form the estimate, step. Returns the parameter
/// vector after every update.
fn sequential(alg: Algorithm, spec: &LossSpec, data: &PartitionedData, gamma: f64, updates: usize, seed: u64) -> Vec<Vec<f64>> {
    let x = data.block(1);
    let y = data.labels();
    let n = data.n_samples();
    let d = x.ncols();
    let bias = spec.has_bias;
    let mut p = vec![0.0; d + usize::from(bias)];
    let mut rng = stream_rng(seed, 1);
    let residual = |p: &[f64], i: usize| {
        let s = local_product(&p[..d], x.row(i)) + if bias { p[d] } else { 0.0 };
        score_derivative(spec.kind, s, y[i])
    };
    let grad = |p: &[f64], r: f64, i: usize| block_gradient_from_residual(r, x.row(i), p, spec.lambda, bias);
    let full = |p: &[f64]| {
        let mut acc = vec![0.0; p.len()];
        for i in 0..n {
            let g = grad(p, residual(p, i), i);
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        acc.iter_mut().for_each(|a| *a *= 1.0 / n as f64);
        acc
    };
    let mut snapshot: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut table = SagaTable::uninitialized(n, p.len());
    if alg == Algorithm::Saga {
        let p0 = p.clone();
        table.fill(|i| grad(&p0, residual(&p0, i), i)).unwrap();
    }
    let mut trajectory = Vec::with_capacity(updates);
    for k in 0..updates {
        if alg == Algorithm::Svrg && k % n == 0 {
            snapshot = Some((p.clone(), full(&p)));
        }
        let i = rng.random_range(0..n);
        let g = grad(&p, residual(&p, i), i);
        let v = match alg {
            Algorithm::Sgd => g,
            Algorithm::Svrg => {
                let (s, mu) = snapshot.as_ref().unwrap();
                svrg_estimate(&g, &grad(s, residual(s, i), i), mu).unwrap()
            }
            Algorithm::Saga => {
                let v = table.estimate(&g, i).unwrap();
                table.update_entry(i, &g).unwrap();
                v
            }
        };
        p.iter_mut().zip(&v).for_each(|(w, g)| *w -= gamma * g);
        trajectory.push(p.clone());
    }
    trajectory
}

fn flat(m: &ModelView) -> Vec<u64> {
    m.blocks.iter().flatten().chain(m.bias.iter()).map(|v| v.to_bits()).collect()
}

fn criterion_7() -> Outcome {
    let mut checked = 0;
    for (task, spec) in [
        (Task::Classification, LossSpec::logistic(1e-3)),
        (Task::Regression, LossSpec::ridge(1e-3, true)),
    ] {
        let (_, data) = problem(60, 6, 1, task, 31, None);
        for alg in [Algorithm::Sgd, Algorithm::Svrg, Algorithm::Saga] {
            let gamma = if task == Task::Regression { 0.01 } else { 0.1 };
            let updates = 1500;
            let reference = sequential(alg, &spec, &data, gamma, updates, 5);
            for mode in [Mode::Async, Mode::Sync] {
                let mut cfg = RunConfig::new(alg, gamma, updates, spec);
                cfg.seed = 5;
                cfg.mode = mode;
                cfg.record_every = 1;
                let out = run(&cfg, &data).map_err(|e| e.to_string())?;
                for s in out.curve.iter().filter(|s| s.updates > 0) {
                    let want: Vec<u64> = reference[s.updates as usize - 1].iter().map(|v| v.to_bits()).collect();
                    ensure(flat(&s.model) == want, || {
                        format!("{} {mode} {task:?}: diverges at update {}", alg.name(), s.updates)
                    })?;
                }
                let last: Vec<u64> = reference.last().unwrap().iter().map(|v| v.to_bits()).collect();
                ensure(flat(&out.model) == last, || format!("{} {mode}: final model differs", alg.name()))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} runs bit-identical at every update"))
}

// ---------------------------------------------------------------------------
// 8. Replaying the event log

fn criterion_8() -> Outcome {
    let mut checked = 0;
    for (task, spec) in [
        (Task::Classification, LossSpec::logistic(1e-4)),
        (Task::Regression, LossSpec::ridge(1e-3, true)),
    ] {
        let (_, data) = problem(80, 12, 4, task, 41, None);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let initial = random_model(&data, &spec, &mut rng);
        for alg in [Algorithm::Sgd, Algorithm::Svrg, Algorithm::Saga] {
            for mask in [MaskMode::Plain, MaskMode::Masked] {
                let mut cfg = RunConfig::new(alg, 0.01, 3000, spec);
                cfg.mask = mask;
                cfg.seed = 9;
                cfg.stragglers.insert(3, 2.5);
                let out = run_from(&cfg, &data, &initial).map_err(|e| e.to_string())?;
                let mut order: Vec<&EventRecord> = out.log.records.iter().collect();
                order.sort_by_key(|r| r.t);
                let mut m = initial.clone();
                for r in order {
                    let block = &mut m.blocks[r.worker - 1];
                    let d = block.len();
                    block.iter_mut().zip(&r.update).for_each(|(w, v)| *w -= cfg.gamma * v);
                    if r.worker == 1 {
                        if let (Some(b), Some(v)) = (m.bias.as_mut(), r.update.get(d)) {
                            *b -= cfg.gamma * v;
                        }
                    }
                }
                ensure(flat(&m) == flat(&out.model), || format!("{} {mask} {task:?}: replay differs", alg.name()))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} virtual-clock runs replay bit-exactly"))
}

// ---------------------------------------------------------------------------
// 9. Message accounting

fn criterion_9() -> Outcome {
    let (_, data8) = problem(40, 16, 8, Task::Classification, 51, None);
    let mut checked = 0;
    for q in [2usize, 3, 4, 8] {
        let (_, data) = if q == 8 {
            (None::<Dataset>, data8.clone())
        } else {
            let (ds, d) = problem(40, 16, q, Task::Classification, 51, None);
            (Some(ds), d)
        };
        for (mask, per) in [(MaskMode::Plain, q - 1), (MaskMode::Masked, 2 * (q - 1))] {
            let mut cfg = RunConfig::new(Algorithm::Sgd, 0.05, 1000, LossSpec::logistic(1e-4));
            cfg.mask = mask;
            let out = run(&cfg, &data).map_err(|e| e.to_string())?;
            ensure(out.log.len() == 1000, || format!("q={q}: {} records", out.log.len()))?;
            if let Some(r) = out.log.records.iter().find(|r| r.messages != per) {
                return Err(format!("q={q} {mask}: update {} used {} messages, expected {per}", r.t, r.messages));
            }
            ensure(out.metrics.messages == 1000 * per, || {
                format!("q={q} {mask}: total {} messages", out.metrics.messages)
            })?;
            checked += 1;
        }
        let c = vec![1.0; q];
        let pair = TreePair::generate(q, 0).unwrap();
        let mut tr = Transcript::new();
        tree_sum(pair.t1(), &c, &mut tr).unwrap();
        ensure(tr.merge_count() == q - 1, || format!("q={q}: plain transcript {}", tr.merge_count()))?;
    }
    Ok(format!("{checked} runs of 1000 updates, q in {{2,3,4,8}}"))
}

// ---------------------------------------------------------------------------
// 10. Theory calculators

/// Windows by definition: from each start, the first end at which every worker has
/// appeared, checked from scratch for every candidate end.
fn oracle_windows(seq: &[usize], q: usize) -> Vec<(usize, usize)> {
    let covers = |s: &[usize]| (1..=q).all(|w| s.contains(&w));
    let mut out = Vec::new();
    let mut start = 0;
    'outer: while start < seq.len() {
        for end in start..seq.len() {
            if covers(&seq[start..=end]) {
                out.push((start, end));
                start = end + 1;
                continue 'outer;
            }
        }
        break;
    }
    out
}

fn check_epochs(log: &EventLog, q: usize) -> Result<(), String> {
    let seq = log.workers();
    let got = epoch_stats(log, q);
    let missing: Vec<usize> = (1..=q).filter(|w| !seq.contains(w)).collect();
    if !missing.is_empty() {
        return ensure(got == Err(AnalysisError::MissingWorkers(missing)), || format!("{seq:?}: {got:?}"));
    }
    let got = got.map_err(|e| format!("{seq:?}: {e}"))?;
    let windows = oracle_windows(&seq, q);
    let eta1 = windows
        .iter()
        .flat_map(|&(a, b)| (1..=q).map(move |w| (a, b, w)))
        .map(|(a, b, w)| seq[a..=b].iter().filter(|&&v| v == w).count())
        .max()
        .unwrap_or(0);
    let tau = log.records.iter().map(|r| r.max_staleness).max().unwrap_or(0);
    let eta2 = log.records.iter().flat_map(|r| r.block_lags.clone()).max().unwrap_or(0);
    let sizes: Vec<usize> = windows.iter().map(|&(a, b)| b - a + 1).collect();
    ensure(
        got.upsilon == windows.len()
            && got.measured_eta1 == eta1
            && got.k_sizes == sizes
            && got.measured_tau == tau
            && got.measured_eta2 == u64::from(eta2),
        || format!("{seq:?}: {got:?}"),
    )
}

fn blank_log(len: usize) -> EventLog {
    EventLog {
        records: (0..len)
            .map(|t| EventRecord {
                t: t as u64,
                worker: 1,
                sample: 0,
                sim_time_ms: 0.0,
                max_staleness: 0,
                block_lags: Vec::new(),
                messages: 0,
                update: Vec::new(),
            })
            .collect(),
    }
}

/// Every log with `q^len ≤ 2^18` is enumerated; longer logs are sampled.
const EXHAUSTIVE_LIMIT: u64 = 1 << 18;
const SAMPLES_PER_SHAPE: usize = 3000;

fn random_constants(rng: &mut ChaCha8Rng) -> TheoryConstants {
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| 10f64.powf(rng.random_range(lo..hi));
    let q = rng.random_range(1..=16) as f64;
    let l_max = log_uniform(rng, -1.0, 1.0);
    let l = l_max * rng.random_range(1.0..=q);
    TheoryConstants {
        l,
        l_max,
        mu: l_max * log_uniform(rng, -3.0, 0.0),
        g: log_uniform(rng, -2.0, 2.0),
        q,
        eta1: rng.random_range(1..=5) as f64,
        eta2: rng.random_range(0..=5) as f64,
        tau: rng.random_range(0..=20) as f64,
        epsilon: log_uniform(rng, -6.0, -1.0),
        initial_gap: log_uniform(rng, -1.0, 1.0),
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) || (a.is_nan() && b.is_nan())
}

fn criterion_10() -> Outcome {
    let (gamma, _) = stepsize_theorem1(&TheoryConstants::unit()).map_err(|e| e.to_string())?;
    let golden = (-1.0 + 5f64.sqrt()) / 4.0;
    ensure((gamma - golden).abs() <= 1e-12, || format!("unit step {gamma} vs {golden}"))?;

    let mut exhaustive = 0usize;
    let mut sampled = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for q in 1..=4usize {
        for len in 1..=20usize {
            let mut log = blank_log(len);
            if (q as u64).checked_pow(len as u32).is_some_and(|c| c <= EXHAUSTIVE_LIMIT) {
                let total = (q as u64).pow(len as u32);
                for code in 0..total {
                    let mut c = code;
                    for r in &mut log.records {
                        r.worker = (c % q as u64) as usize + 1;
                        c /= q as u64;
                    }
                    check_epochs(&log, q)?;
                    exhaustive += 1;
                }
            } else {
                for _ in 0..SAMPLES_PER_SHAPE {
                    for r in &mut log.records {
                        r.worker = rng.random_range(1..=q);
                        r.max_staleness = rng.random_range(0..50);
                        r.block_lags = (0..q).map(|_| rng.random_range(0..8)).collect();
                    }
                    check_epochs(&log, q)?;
                    sampled += 1;
                }
            }
        }
    }

    let mut feasible = [0usize; 2];
    for k in 0..50 {
        let c = random_constants(&mut rng);
        let gamma = 10f64.powf(rng.random_range(-8.0..0.0));
        let (l2, q, e1, e2, tau) = (c.l * c.l, c.q, c.eta1, c.eta2, c.tau);

        let delay = q * e1.powi(2) + e2 * tau;
        let num = -c.l_max + (c.l_max.powi(2) + 2.0 * c.mu * c.epsilon * l2 * delay / (c.g * e1 * q)).sqrt();
        let want_gamma = num / (2.0 * l2 * delay);
        let (got_gamma, got_epochs) = stepsize_theorem1(&c).map_err(|e| e.to_string())?;
        let want_epochs = 2.0 / c.mu / want_gamma * (2.0 * c.initial_gap / c.epsilon).ln();
        ensure(close(got_gamma, want_gamma) || (got_gamma - want_gamma).abs() <= 1e-9 * want_gamma, || {
            format!("set {k}: step {got_gamma} vs {want_gamma}")
        })?;
        ensure((got_epochs - want_epochs).abs() <= 1e-9 * want_epochs.abs(), || {
            format!("set {k}: epochs {got_epochs} vs {want_epochs}")
        })?;

        let cc = 0.5 * gamma * gamma * (gamma * l2 * q * e1 * e1 + c.l_max);
        let rho = 0.5 * gamma * c.mu - 16.0 * cc * q * e1 * l2 / c.mu;
        let v9 = 8.0 * cc * q * e1 * l2 / (c.mu * rho);
        let v10 = (gamma.powi(3) * e2 * tau / 2.0 + 2.0 * cc * gamma * gamma * e2 * tau + 4.0 * cc * gamma * gamma * e1 * e1 * q)
            * e1
            * q
            * l2
            * c.g
            / rho;
        let r2 = check_theorem2(&c, gamma).map_err(|e| e.to_string())?;
        ensure(close(r2.c, cc) && close(r2.rho, rho), || format!("set {k}: C/rho {r2:?}"))?;
        let v10_ok = (r2.floor_value - v10).abs() <= 1e-10 * v10.abs();
        ensure(close(r2.coupling_value, v9) && v10_ok, || format!("set {k}: eq values {r2:?} vs {v9} {v10}"))?;
        // A positive contraction factor is required for both bounds to mean anything.
        ensure(r2.coupling == (rho > 0.0 && v9 <= 0.5), || format!("set {k}: coupling flag"))?;
        ensure(r2.floor == (rho > 0.0 && v10 <= c.epsilon / 8.0), || format!("set {k}: floor flag"))?;

        let l = rng.random_range(2..=1000usize);
        let lo = 1.0 - 1.0 / l as f64;
        let rho3 = lo + rng.random_range(0.01..0.99) * (1.0 - lo);
        let base = gamma * l2 * q * e1 * e1 + c.l_max;
        let c0 = gamma.powi(4)
            * l2
            * e1
            * q
            * c.g
            * (tau * (e2 / 2.0 + 3.0 * (gamma * q * e1 * e1 + c.l_max) * (e1 + 2.0 * e2))
                + e1 * e1 * q * (gamma * l2 * q * e1 * e1 + 8.0 * c.l_max));
        let c1 = 2.0 * l2 * e1 * q * gamma * gamma * base;
        let c2 = 4.0 * l2 * e1 * e1 * q * gamma * gamma * base / l as f64;
        let gap = gamma * c.mu * c.mu / 4.0 - 2.0 * c1 - c2;
        let v11 = 4.0 * c0 / (gamma * c.mu * (1.0 - rho3) * gap);
        let gap_scale = gamma * c.mu * c.mu / 4.0 + 2.0 * c1 + c2;
        let frac = rho3 / (rho3 - lo);
        let v13 = 2.0 * c1 + c2 * (1.0 + frac) - gamma * c.mu * c.mu / 4.0;
        let v14 = c2 + c1 * (2.0 + frac) - gamma * c.mu * c.mu / 4.0;
        let r3 = check_theorem3(&c, gamma, rho3, l).map_err(|e| e.to_string())?;
        let near = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-12 * scale;
        let scale = gamma * c.mu * c.mu / 4.0 + 2.0 * c1 + c2 * (2.0 + frac) + c1 * frac;
        ensure(close(r3.c0, c0) && close(r3.c1, c1) && close(r3.c2, c2), || format!("set {k}: c0..c2 {r3:?}"))?;
        ensure((r3.floor_value - v11).abs() <= 1e-12 * v11.abs() * gap_scale / gap.abs(), || format!("set {k}: floor {} vs {v11}", r3.floor_value))?;
        ensure(near(r3.table_margin_value, v13, scale) && near(r3.iterate_margin_value, v14, scale), || {
            format!("set {k}: table_margin/14 {r3:?} vs {v13} {v14}")
        })?;
        ensure(r3.floor == (gap > 0.0 && v11 <= c.epsilon / 2.0), || format!("set {k}: floor flag"))?;
        let shrink = 1.0 - gamma * c.mu / 4.0;
        ensure(r3.shrink_ok == (0.0 < shrink && shrink < 1.0), || format!("set {k}: shrink_ok flag"))?;
        feasible[0] += usize::from(r2.feasible());
        feasible[1] += usize::from(r3.feasible());
        ensure(r3.table_margin == (v13 <= 0.0) && r3.iterate_margin == (v14 <= 0.0), || format!("set {k}: table_margin/14 flags"))?;
    }
    Ok(format!(
        "unit step {gamma:.15}; {exhaustive} enumerated + {sampled} sampled logs; 50 constant sets ({} and {} feasible)",
        feasible[0], feasible[1]
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        (1, "estimator unbiasedness", criterion_1, Duration::from_secs(1)),
        (2, "gradient finite differences", criterion_2, Duration::from_secs(1)),
        (3, "masked sum and disjoint subtrees", criterion_3, Duration::from_secs(1)),
        (4, "significant-difference oracle", criterion_4, Duration::from_secs(10)),
        (5, "variance-reduced convergence", criterion_5, Duration::from_secs(60)),
        (6, "async speedup with a straggler", criterion_6, Duration::from_secs(120)),
        (7, "single-worker equivalence", criterion_7, Duration::from_secs(5)),
        (8, "replay determinism", criterion_8, Duration::from_secs(5)),
        (9, "message accounting", criterion_9, Duration::from_secs(10)),
        (10, "theory calculators", criterion_10, Duration::from_secs(10)),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, f, budget) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2}: {} {name} [{:.2} s / {} s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
