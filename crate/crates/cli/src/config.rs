//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use vfl_core::data::{PartitionMode, Task};
use vfl_core::engine::{Algorithm, Clock, CostModel, MaskMode, Mode};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { n: usize, d: usize, noise: f64, seed: u64 },
    Libsvm { path: PathBuf, features: Option<usize> },
}

/// Which of the two runtimes a run uses, or both for a paired comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Async,
    Sync,
    Both,
}

impl ModeChoice {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeChoice::Async => vec![Mode::Async],
            ModeChoice::Sync => vec![Mode::Sync],
            ModeChoice::Both => vec![Mode::Async, Mode::Sync],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub task: Task,
    pub labels01: bool,
    pub standardize: bool,
    pub q: usize,
    pub partition: PartitionMode,
    pub algorithms: Vec<Algorithm>,
    pub mode: ModeChoice,
    pub gammas: Vec<f64>,
    pub lambda: f64,
    pub bias: bool,
    pub updates: usize,
    pub snapshot_interval: Option<usize>,
    pub stragglers: BTreeMap<usize, f64>,
    pub mask: MaskMode,
    pub mask_range: Option<f64>,
    pub staleness_cap: Option<usize>,
    pub seed: u64,
    pub clock: Clock,
    pub record_every: usize,
    pub cost: CostModel,
    /// Sub-optimality used for the speedup; `None` picks a per-algorithm default.
    pub target: Option<f64>,
    pub out: PathBuf,
}

/// Keys accepted besides `straggler.<id>`, in the order they are echoed.
pub const KEYS: &[&str] = &[
    "data",
    "data.features",
    "synthetic.n",
    "synthetic.d",
    "synthetic.noise",
    "synthetic.seed",
    "task",
    "labels01",
    "standardize",
    "q",
    "partition",
    "algorithm",
    "mode",
    "gamma",
    "lambda",
    "bias",
    "updates",
    "snapshot_interval",
    "mask",
    "mask_range",
    "staleness_cap",
    "seed",
    "clock",
    "record_every",
    "cost.step_us",
    "cost.message_us",
    "cost.pass_us_per_sample",
    "target",
    "out",
];

/// Default sub-optimality target for the speedup of `alg`.
pub fn default_target(alg: Algorithm) -> f64 {
    match alg {
        Algorithm::Sgd => 10f64.powf(-1.5),
        Algorithm::Svrg | Algorithm::Saga => 1e-4,
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got `{line}`", k + 1))?;
        let key = key.trim();
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            bail!("line {}: duplicate key `{key}`", k + 1);
        }
    }
    Ok(out)
}

/// Turns `--key value` and `--key=value` flags into pairs.
pub fn parse_overrides(args: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| anyhow!("expected a --key flag, got `{arg}`"))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| anyhow!("flag --{flag} needs a value"))?;
                (flag.to_string(), v.clone())
            }
        };
        out.insert(key, value);
    }
    Ok(out)
}

fn parsed<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse `{value}`: {e}"))
}

fn optional<T: FromStr>(key: &str, value: Option<&String>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value.map(String::as_str) {
        None | Some("auto") | Some("none") => Ok(None),
        Some(v) => parsed(key, v).map(Some),
    }
}

impl ExperimentConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        for key in pairs.keys() {
            let straggler = key
                .strip_prefix("straggler.")
                .is_some_and(|id| id.parse::<usize>().is_ok());
            if !straggler && !KEYS.contains(&key.as_str()) {
                bail!("unknown key `{key}`");
            }
        }
        let get = |k: &str| pairs.get(k);
        let or = |k: &str, default: &str| get(k).cloned().unwrap_or_else(|| default.to_string());
        let seed: u64 = parsed("seed", &or("seed", "0"))?;

        let data = match get("data").map(String::as_str) {
            None | Some("synthetic") => DataSource::Synthetic {
                n: parsed("synthetic.n", &or("synthetic.n", "200"))?,
                d: parsed("synthetic.d", &or("synthetic.d", "20"))?,
                noise: parsed("synthetic.noise", &or("synthetic.noise", "1.0"))?,
                seed: optional("synthetic.seed", get("synthetic.seed"))?.unwrap_or(seed),
            },
            Some(path) => DataSource::Libsvm {
                path: PathBuf::from(path),
                features: optional("data.features", get("data.features"))?,
            },
        };
        let task: Task = parsed("task", &or("task", "classification"))?;

        let algorithms = or("algorithm", "afsgd")
            .split(',')
            .map(|a| parsed::<Algorithm>("algorithm", a.trim()))
            .collect::<Result<Vec<_>>>()?;
        let mode = match or("mode", "async").as_str() {
            "async" => ModeChoice::Async,
            "sync" => ModeChoice::Sync,
            "both" => ModeChoice::Both,
            other => bail!("mode: expected async, sync or both, got `{other}`"),
        };
        let gammas = or("gamma", "0.01")
            .split(',')
            .map(|g| parsed::<f64>("gamma", g.trim()))
            .collect::<Result<Vec<_>>>()?;
        if gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            bail!("gamma: every value must be positive");
        }

        let mut stragglers = BTreeMap::new();
        for (key, value) in pairs {
            if let Some(id) = key.strip_prefix("straggler.") {
                stragglers.insert(parsed::<usize>(key, id)?, parsed::<f64>(key, value)?);
            }
        }

        let defaults = CostModel::default();
        let cost = CostModel {
            step_us: optional("cost.step_us", get("cost.step_us"))?.unwrap_or(defaults.step_us),
            message_us: optional("cost.message_us", get("cost.message_us"))?.unwrap_or(defaults.message_us),
            full_pass_us_per_sample: optional("cost.pass_us_per_sample", get("cost.pass_us_per_sample"))?
                .unwrap_or(defaults.full_pass_us_per_sample),
        };

        let config = ExperimentConfig {
            data,
            task,
            labels01: parsed("labels01", &or("labels01", "false"))?,
            standardize: parsed("standardize", &or("standardize", "false"))?,
            q: parsed("q", &or("q", "4"))?,
            partition: parsed("partition", &or("partition", "contiguous"))?,
            algorithms,
            mode,
            gammas,
            lambda: parsed("lambda", &or("lambda", "1e-4"))?,
            bias: parsed("bias", &or("bias", "false"))?,
            updates: parsed("updates", &or("updates", "10000"))?,
            snapshot_interval: optional("snapshot_interval", get("snapshot_interval"))?,
            stragglers,
            mask: parsed("mask", &or("mask", "plain"))?,
            mask_range: optional("mask_range", get("mask_range"))?,
            staleness_cap: optional("staleness_cap", get("staleness_cap"))?,
            seed,
            clock: parsed("clock", &or("clock", "virtual"))?,
            record_every: parsed("record_every", &or("record_every", "100"))?,
            cost,
            target: optional("target", get("target"))?,
            out: PathBuf::from(or("out", "out")),
        };
        if config.q == 0 {
            bail!("q must be positive");
        }
        if config.bias && config.task == Task::Classification {
            bail!("bias is only supported for regression");
        }
        if let Some(t) = config.target {
            if !(t > 0.0) {
                bail!("target must be positive");
            }
        }
        Ok(config)
    }

    /// Reads a config file (if any) and applies flag overrides on top.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                parse_pairs(&text)?
            }
            None => BTreeMap::new(),
        };
        pairs.extend(parse_overrides(overrides)?);
        Self::from_pairs(&pairs)
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        match &self.data {
            DataSource::Synthetic { n, d, noise, seed } => {
                line("data", "synthetic".into());
                line("synthetic.n", n.to_string());
                line("synthetic.d", d.to_string());
                line("synthetic.noise", noise.to_string());
                line("synthetic.seed", seed.to_string());
            }
            DataSource::Libsvm { path, features } => {
                line("data", path.display().to_string());
                line("data.features", opt(features.map(|f| f.to_string())));
            }
        }
        line("task", match self.task {
            Task::Classification => "classification".into(),
            Task::Regression => "regression".into(),
        });
        line("labels01", self.labels01.to_string());
        line("standardize", self.standardize.to_string());
        line("q", self.q.to_string());
        line("partition", match self.partition {
            PartitionMode::Contiguous => "contiguous".into(),
            PartitionMode::RoundRobin => "round_robin".into(),
        });
        line("algorithm", self.algorithms.iter().map(|a| a.name()).collect::<Vec<_>>().join(","));
        line("mode", match self.mode {
            ModeChoice::Async => "async".into(),
            ModeChoice::Sync => "sync".into(),
            ModeChoice::Both => "both".into(),
        });
        line("gamma", self.gammas.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        line("lambda", self.lambda.to_string());
        line("bias", self.bias.to_string());
        line("updates", self.updates.to_string());
        line("snapshot_interval", opt(self.snapshot_interval.map(|v| v.to_string())));
        for (id, m) in &self.stragglers {
            line(&format!("straggler.{id}"), m.to_string());
        }
        line("mask", self.mask.to_string());
        line("mask_range", opt(self.mask_range.map(|v| v.to_string())));
        line("staleness_cap", self.staleness_cap.map_or("none".into(), |v| v.to_string()));
        line("seed", self.seed.to_string());
        line("clock", self.clock.to_string());
        line("record_every", self.record_every.to_string());
        line("cost.step_us", self.cost.step_us.to_string());
        line("cost.message_us", self.cost.message_us.to_string());
        line("cost.pass_us_per_sample", self.cost.full_pass_us_per_sample.to_string());
        line("target", opt(self.target.map(|v| v.to_string())));
        line("out", self.out.display().to_string());
        s
    }
}
