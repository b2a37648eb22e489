use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vfl_core::analysis::{
    curve_to_csv, epoch_stats, reference_optimum, speedup, suboptimality_curve, CurvePoint,
};
use vfl_core::data::{
    generate_synthetic, parse_libsvm, partition_features, standardize, Dataset,
    PartitionedData, SyntheticSpec, Task,
};
use vfl_core::engine::{run, Algorithm, Mode, RunConfig, RunOutput};
use vfl_core::losses::LossSpec;

use crate::config::{default_target, DataSource, ExperimentConfig};

/// The run kept for one (algorithm, mode) pair: the grid value with the lowest
/// final sub-optimality.
#[derive(Debug, Clone)]
pub struct BestRun {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub gamma: f64,
    pub curve: Vec<CurvePoint>,
    pub output: RunOutput,
}

impl BestRun {
    pub fn final_suboptimality(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.suboptimality)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub f_star: f64,
    pub best: Vec<BestRun>,
    /// Per algorithm, when both modes ran: target and the speedup, or why it is missing.
    pub speedups: Vec<(Algorithm, f64, Result<f64, String>)>,
    pub curve_files: Vec<PathBuf>,
}

fn max_libsvm_index(text: &str) -> usize {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace().skip(1))
        .filter_map(|tok| tok.split_once(':').and_then(|(i, _)| i.parse().ok()))
        .max()
        .unwrap_or(0)
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let ds = match &config.data {
        DataSource::Synthetic { n, d, noise, seed } => {
            let mut spec = SyntheticSpec::new(*n, *d, config.task, *seed);
            spec.noise_std = *noise;
            generate_synthetic(&spec)?.dataset
        }
        DataSource::Libsvm { path, features } => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let d = features.unwrap_or_else(|| max_libsvm_index(&text));
            parse_libsvm(&text, d, config.task, config.labels01)
                .with_context(|| format!("parsing {}", path.display()))?
        }
    };
    if config.standardize {
        Ok(standardize(&ds)?.0)
    } else {
        Ok(ds)
    }
}

fn loss_spec(config: &ExperimentConfig) -> LossSpec {
    match config.task {
        Task::Classification => LossSpec::logistic(config.lambda),
        Task::Regression => LossSpec::ridge(config.lambda, config.bias),
    }
}

fn run_config(config: &ExperimentConfig, alg: Algorithm, mode: Mode, gamma: f64, loss: LossSpec) -> RunConfig {
    let mut rc = RunConfig::new(alg, gamma, config.updates, loss);
    rc.mode = mode;
    rc.mask = config.mask;
    rc.mask_range = config.mask_range;
    rc.staleness_cap = config.staleness_cap;
    rc.stragglers = config.stragglers.clone();
    rc.seed = config.seed;
    rc.snapshot_interval = config.snapshot_interval;
    rc.clock = config.clock;
    rc.cost = config.cost;
    rc.record_every = config.record_every;
    rc
}

/// `curve_<algo>_<mode>.csv`, with a `_gamma<γ>` suffix when a grid is searched.
pub fn curve_file_name(alg: Algorithm, mode: Mode, gamma: Option<f64>) -> String {
    match gamma {
        None => format!("curve_{}_{mode}.csv", alg.name()),
        Some(g) => format!("curve_{}_{mode}_gamma{g}.csv", alg.name()),
    }
}

/// Runs every requested algorithm, mode and step size, then writes the curves,
/// `events.csv` and `summary.txt` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let ds = load_dataset(config)?;
    let partition = partition_features(ds.n_features(), config.q, config.partition)?;
    let data = PartitionedData::new(&ds, &partition)?;
    let loss = loss_spec(config);
    let opt = reference_optimum(&loss, &data)?;
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;

    let grid = config.gammas.len() > 1;
    let mut best = Vec::new();
    let mut curve_files = Vec::new();
    let mut grid_lines = String::new();
    for &alg in &config.algorithms {
        for mode in config.mode.modes() {
            let mut kept: Option<BestRun> = None;
            for &gamma in &config.gammas {
                let output = run(&run_config(config, alg, mode, gamma, loss), &data)?;
                let curve = suboptimality_curve(&output.curve, &loss, &data, opt.value)?;
                let path = config.out.join(curve_file_name(alg, mode, grid.then_some(gamma)));
                fs::write(&path, curve_to_csv(&curve))?;
                curve_files.push(path);
                let candidate = BestRun { algorithm: alg, mode, gamma, curve, output };
                writeln!(
                    grid_lines,
                    "{}.{mode}.gamma.{gamma}.final_suboptimality = {}",
                    alg.name(),
                    candidate.final_suboptimality()
                )?;
                if kept
                    .as_ref()
                    .is_none_or(|k| candidate.final_suboptimality() < k.final_suboptimality())
                {
                    kept = Some(candidate);
                }
            }
            best.extend(kept);
        }
    }

    let mut speedups = Vec::new();
    for &alg in &config.algorithms {
        let find = |m: Mode| best.iter().find(|b| b.algorithm == alg && b.mode == m);
        if let (Some(a), Some(s)) = (find(Mode::Async), find(Mode::Sync)) {
            let target = config.target.unwrap_or_else(|| default_target(alg));
            speedups.push((alg, target, speedup(&a.curve, &s.curve, target).map_err(|e| e.to_string())));
        }
    }

    write_events(&config.out, &best)?;
    let report = ExperimentReport {
        f_star: opt.value,
        best,
        speedups,
        curve_files,
    };
    fs::write(config.out.join("summary.txt"), summary_text(config, &report, &grid_lines))?;
    Ok(report)
}

fn write_events(out: &Path, best: &[BestRun]) -> Result<()> {
    let mut text = String::from("algorithm,mode,t,worker,sample,sim_time_ms,max_staleness,messages\n");
    for b in best {
        for line in b.output.log.to_csv().lines().skip(1) {
            writeln!(text, "{},{},{line}", b.algorithm.name(), b.mode)?;
        }
    }
    fs::write(out.join("events.csv"), text)?;
    Ok(())
}

fn summary_text(config: &ExperimentConfig, report: &ExperimentReport, grid_lines: &str) -> String {
    let mut s = String::from("# configuration\n");
    s += &config.echo();
    s += "\n# results\n";
    writeln!(s, "f_star = {}", report.f_star).unwrap();
    s += grid_lines;
    for b in &report.best {
        let key = format!("{}.{}", b.algorithm.name(), b.mode);
        let m = &b.output.metrics;
        let mut line = |k: &str, v: String| writeln!(s, "{key}.{k} = {v}").unwrap();
        line("best_gamma", b.gamma.to_string());
        line("final_suboptimality", b.final_suboptimality().to_string());
        line("time_ms", m.total_time_ms.to_string());
        line("updates", b.output.log.len().to_string());
        line("updates_per_worker", format!("{:?}", m.updates_per_worker));
        line("messages", m.messages.to_string());
        line("barrier_messages", m.barrier_messages.to_string());
        line("outer_loops", m.outer_loops.to_string());
        line("retries", m.retries.to_string());
        match epoch_stats(&b.output.log, config.q) {
            Ok(e) => {
                line("epochs", e.upsilon.to_string());
                line("tau", e.measured_tau.to_string());
                line("eta1", e.measured_eta1.to_string());
                line("eta2", e.measured_eta2.to_string());
            }
            Err(e) => line("epochs", format!("n/a ({e})")),
        }
    }
    for (alg, target, value) in &report.speedups {
        writeln!(s, "{}.speedup_target = {target}", alg.name()).unwrap();
        match value {
            Ok(v) => writeln!(s, "{}.speedup = {v}", alg.name()).unwrap(),
            Err(e) => writeln!(s, "{}.speedup = n/a ({e})", alg.name()).unwrap(),
        }
    }
    s
}

/// Generates the tree pair for `q` workers and reports whether it passes the check.
pub fn verify_trees(q: usize, seed: u64) -> Result<(String, bool)> {
    if q < 2 {
        bail!("verify-trees needs q >= 2, got {q}");
    }
    let (t1, t2) = vfl_core::treecomm::generate_significantly_different_pair(q, seed)?;
    let ok = vfl_core::treecomm::is_significantly_different(&t1, &t2)?;
    Ok((format!("T1: {t1}\nT2: {t2}\nsignificantly different: {ok}\n"), ok))
}
