//! Experiment plumbing for the `pfmab` binary: a flat `key=value` experiment
//! spec, model sources, and the CSV and text artifacts each subcommand writes.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use pfmab::data_ingest::{ingest_ratings, nine_arm_game, random_instance, RatingsConfig};
use pfmab::simulator::{replicate, Replications, SimulationConfig, TraceResolution};
use pfmab::theory::regret_upper_bound;
use pfmab::{global_means, BanditInstance, ScheduleKind};

pub const THREADS_ENV: &str = "PFMAB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("spec line {line}: {message}")]
    SpecSyntax { line: usize, message: String },
    #[error("invalid value {value:?} for {key}: {message}")]
    InvalidField {
        key: &'static str,
        value: String,
        message: String,
    },
    #[error("missing required field {0}")]
    MissingField(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{THREADS_ENV} must be a positive integer, got {0:?}")]
    Threads(String),
    #[error(transparent)]
    Model(#[from] pfmab::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    CompareEnhanced,
    Bounds,
    Ingest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::CompareEnhanced => "compare-enhanced",
            Command::Bounds => "bounds",
            Command::Ingest => "ingest",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            Command::Run,
            Command::Sweep,
            Command::CompareEnhanced,
            Command::Bounds,
            Command::Ingest,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| "expected one of run, sweep, compare-enhanced, bounds, ingest".to_string())
    }
}

/// Where the local means come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    NineArm,
    Random {
        clients: usize,
        arms: usize,
        seed: u64,
        lo: f64,
        hi: f64,
    },
    Csv(PathBuf),
}

impl ModelSource {
    pub fn load(&self) -> Result<BanditInstance> {
        Ok(match self {
            ModelSource::NineArm => nine_arm_game(),
            ModelSource::Random {
                clients,
                arms,
                seed,
                lo,
                hi,
            } => random_instance(*clients, *arms, *seed, *lo, *hi)?,
            ModelSource::Csv(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                BanditInstance::from_csv_str(&text)?
            }
        })
    }
}

impl FromStr for ModelSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "paper9" {
            return Ok(ModelSource::NineArm);
        }
        let Some(rest) = s.strip_prefix("random:") else {
            return Ok(ModelSource::Csv(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 && parts.len() != 5 {
            return Err("expected random:M:K:seed or random:M:K:seed:lo:hi".into());
        }
        let int = |v: &str| v.parse::<u64>().map_err(|e| format!("{v:?}: {e}"));
        let real = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = if parts.len() == 5 {
            (real(parts[3])?, real(parts[4])?)
        } else {
            (0.0, 1.0)
        };
        let (clients, arms) = (int(parts[0])? as usize, int(parts[1])? as usize);
        if clients == 0 || arms == 0 {
            return Err("need at least one client and one arm".into());
        }
        Ok(ModelSource::Random {
            clients,
            arms,
            seed: int(parts[2])?,
            lo,
            hi,
        })
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::NineArm => f.write_str("paper9"),
            ModelSource::Random {
                clients,
                arms,
                seed,
                lo,
                hi,
            } => {
                write!(f, "random:{clients}:{arms}:{seed}:{lo}:{hi}")
            }
            ModelSource::Csv(path) => write!(f, "{}", path.display()),
        }
    }
}

/// Inputs of the `ingest` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestSpec {
    pub ratings: Option<PathBuf>,
    pub config: RatingsConfig,
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub model: ModelSource,
    pub alphas: Vec<f64>,
    pub horizon: u64,
    pub comm_cost: f64,
    pub schedule: ScheduleKind,
    pub seeds: usize,
    pub seed: u64,
    pub enhanced: bool,
    pub noise_std: f64,
    pub trace_points: usize,
    pub out: PathBuf,
    pub ingest: IngestSpec,
}

impl ExperimentSpec {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            model: ModelSource::NineArm,
            alphas: match command {
                Command::Sweep => vec![0.0, 0.2, 0.5, 0.9, 1.0],
                _ => vec![0.5],
            },
            horizon: 1_000_000,
            comm_cost: 1.0,
            schedule: ScheduleKind::ExponentialLog,
            seeds: 20,
            seed: 0,
            enhanced: false,
            noise_std: 1.0,
            trace_points: 500,
            out: PathBuf::from("results"),
            ingest: IngestSpec {
                ratings: None,
                config: RatingsConfig::default(),
            },
        }
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Unset keys keep the defaults for the spec's command.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut command = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::SpecSyntax {
                    line: i + 1,
                    message: format!("expected key=value, got {line:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key == "command" {
                command = Some(parse_field("command", value)?);
            } else {
                pairs.push((i + 1, key.to_string(), value.to_string()));
            }
        }
        let mut spec = Self::new(command.ok_or(CliError::MissingField("command"))?);
        for (line, key, value) in pairs {
            spec.set(&key, &value).map_err(|e| match e {
                CliError::SpecSyntax { message, .. } => CliError::SpecSyntax { line, message },
                other => other,
            })?;
        }
        Ok(spec)
    }

    /// Assigns one field by its spec key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "command" => self.command = parse_field("command", value)?,
            "model" => self.model = parse_field("model", value)?,
            "alphas" => {
                self.alphas = value
                    .split(',')
                    .map(|a| parse_field("alphas", a.trim()))
                    .collect::<Result<_>>()?
            }
            "horizon" => self.horizon = parse_field("horizon", value)?,
            "comm_cost" => self.comm_cost = parse_field("comm_cost", value)?,
            "schedule" => self.schedule = parse_field("schedule", value)?,
            "seeds" => self.seeds = parse_field("seeds", value)?,
            "seed" => self.seed = parse_field("seed", value)?,
            "enhanced" => self.enhanced = parse_field("enhanced", value)?,
            "noise_std" => self.noise_std = parse_field("noise_std", value)?,
            "trace_points" => self.trace_points = parse_field("trace_points", value)?,
            "out" => self.out = PathBuf::from(value),
            "ratings" => self.ingest.ratings = Some(PathBuf::from(value)),
            "client_groups" => {
                self.ingest.config.num_client_groups = parse_field("client_groups", value)?
            }
            "arm_groups" => self.ingest.config.num_arm_groups = parse_field("arm_groups", value)?,
            "partition_seed" => {
                self.ingest.config.partition_seed = parse_field("partition_seed", value)?
            }
            "rating_scale" => {
                self.ingest.config.rating_scale_max = parse_field("rating_scale", value)?
            }
            other => {
                return Err(CliError::SpecSyntax {
                    line: 0,
                    message: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// Serializes every field; `parse` of the result yields `self`.
    pub fn to_text(&self) -> String {
        let alphas: Vec<String> = self.alphas.iter().map(f64::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| writeln!(s, "{k}={v}").unwrap();
        kv("command", &self.command.name());
        kv("model", &self.model);
        kv("alphas", &alphas.join(","));
        kv("horizon", &self.horizon);
        kv("comm_cost", &self.comm_cost);
        kv("schedule", &self.schedule);
        kv("seeds", &self.seeds);
        kv("seed", &self.seed);
        kv("enhanced", &self.enhanced);
        kv("noise_std", &self.noise_std);
        kv("trace_points", &self.trace_points);
        kv("out", &self.out.display());
        if let Some(path) = &self.ingest.ratings {
            kv("ratings", &path.display());
        }
        let c = &self.ingest.config;
        kv("client_groups", &c.num_client_groups);
        kv("arm_groups", &c.num_arm_groups);
        kv("partition_seed", &c.partition_seed);
        kv("rating_scale", &c.rating_scale_max);
        s
    }

    fn validate(&self) -> Result<()> {
        let bad = |key, value: String, message: &str| {
            Err(CliError::InvalidField {
                key,
                value,
                message: message.to_string(),
            })
        };
        if self.alphas.is_empty() {
            return bad("alphas", String::new(), "need at least one value");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad("alphas", a.to_string(), "every alpha must lie in [0, 1]");
        }
        if self.command == Command::Run && self.alphas.len() != 1 {
            return bad(
                "alphas",
                format!("{:?}", self.alphas),
                "run takes a single alpha; use sweep for several",
            );
        }
        if self.seeds == 0 {
            return bad("seeds", "0".into(), "need at least one seed");
        }
        if self.trace_points < 2 {
            return bad(
                "trace_points",
                self.trace_points.to_string(),
                "need at least 2 points",
            );
        }
        Ok(())
    }

    fn sim_config(
        &self,
        instance: &Arc<BanditInstance>,
        alpha: f64,
        enhanced: bool,
    ) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(instance.clone(), alpha, self.horizon);
        cfg.comm_cost = self.comm_cost;
        cfg.schedule = self.schedule;
        cfg.enhanced = enhanced;
        cfg.seed = self.seed;
        cfg.noise_std = self.noise_std;
        cfg.trace_resolution = TraceResolution::LogSpaced(self.trace_points);
        cfg
    }
}

fn parse_field<T: FromStr>(key: &'static str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::InvalidField {
        key,
        value: value.to_string(),
        message: e.to_string(),
    })
}

/// Rayon pool sized by `PFMAB_THREADS`, or the default size when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| CliError::Threads(value.clone()))?;
        if n == 0 {
            return Err(CliError::Threads(value));
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build().expect("thread pool builds"))
}

pub const REGRET_HEADER: &str = "t,regret_mean,regret_std,Tc_mean,phase";
pub const REWARDS_HEADER: &str = "alpha,mixed,local,global,best_local,best_global";

pub fn regret_csv(reps: &Replications) -> String {
    let mut s = format!("{REGRET_HEADER}\n");
    for p in reps.curve() {
        writeln!(
            s,
            "{},{},{},{},{}",
            p.t, p.regret_mean, p.regret_std, p.comm_slots_mean, p.phase
        )
        .unwrap();
    }
    s
}

/// Per-client optimum benchmarks: mean over clients of the best local mean,
/// and the best global mean.
pub fn reward_benchmarks(instance: &BanditInstance) -> (f64, f64) {
    let m = instance.num_clients();
    let best_local = (0..m)
        .map(|c| {
            instance
                .row(c)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / m as f64;
    let best_global = global_means(instance)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    (best_local, best_global)
}

pub fn rewards_row(alpha: f64, reps: &Replications, instance: &BanditInstance) -> String {
    let r = reps.mean_tail_rates();
    let (best_local, best_global) = reward_benchmarks(instance);
    format!(
        "{alpha},{},{},{},{best_local},{best_global}\n",
        r.mixed, r.local, r.global
    )
}

/// Files written by one experiment, relative to the spec's output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    fn push(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Computes every artifact of `spec` in memory.
pub fn build_artifacts(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut out = Artifacts::default();
    out.push("spec.txt", spec.to_text());

    if spec.command == Command::Ingest {
        let path = spec
            .ingest
            .ratings
            .as_ref()
            .ok_or(CliError::MissingField("ratings"))?;
        let file = fs::File::open(path).map_err(io_err(path))?;
        let instance = ingest_ratings(std::io::BufReader::new(file), &spec.ingest.config)?;
        out.push("instance.csv", instance.to_csv_string());
        return Ok(out);
    }

    let instance = Arc::new(spec.model.load()?);
    match spec.command {
        Command::Run => {
            let reps = replicate(
                &spec.sim_config(&instance, spec.alphas[0], spec.enhanced),
                spec.seeds,
            )?;
            out.push("regret.csv", regret_csv(&reps));
            out.push("summary.txt", summary(&reps));
        }
        Command::Sweep => {
            let mut rewards = format!("{REWARDS_HEADER}\n");
            for &alpha in &spec.alphas {
                let reps = replicate(
                    &spec.sim_config(&instance, alpha, spec.enhanced),
                    spec.seeds,
                )?;
                out.push(format!("regret_alpha_{alpha}.csv"), regret_csv(&reps));
                rewards.push_str(&rewards_row(alpha, &reps, &instance));
            }
            out.push("rewards.csv", rewards);
        }
        Command::CompareEnhanced => {
            let mut paired = String::from("alpha,replication,base_regret,enhanced_regret\n");
            for &alpha in &spec.alphas {
                let base = replicate(&spec.sim_config(&instance, alpha, false), spec.seeds)?;
                let enhanced = replicate(&spec.sim_config(&instance, alpha, true), spec.seeds)?;
                let suffix = if spec.alphas.len() == 1 {
                    String::new()
                } else {
                    format!("_alpha_{alpha}")
                };
                out.push(format!("regret_base{suffix}.csv"), regret_csv(&base));
                out.push(
                    format!("regret_enhanced{suffix}.csv"),
                    regret_csv(&enhanced),
                );
                for (i, (b, e)) in base
                    .final_regrets()
                    .iter()
                    .zip(enhanced.final_regrets())
                    .enumerate()
                {
                    writeln!(paired, "{alpha},{i},{b},{e}").unwrap();
                }
            }
            out.push("compare.csv", paired);
        }
        Command::Bounds => {
            let mut text = String::new();
            for &alpha in &spec.alphas {
                let cfg = spec.sim_config(&instance, alpha, false);
                let report =
                    regret_upper_bound(&cfg.view()?, &cfg.exploration_schedule()?, spec.comm_cost)?;
                if !text.is_empty() {
                    text.push('\n');
                }
                writeln!(text, "alpha={alpha}").unwrap();
                text.push_str(&report.to_key_values());
            }
            out.push("bounds.txt", text);
        }
        Command::Ingest => unreachable!("handled above"),
    }
    Ok(out)
}

fn summary(reps: &Replications) -> String {
    let (mean, std) = reps.final_regret_stats();
    format!(
        "final_regret_mean={mean}\nfinal_regret_std={std}\ncomm_slots_mean={}\nsuccess_rate={}\n",
        reps.mean_comm_slots(),
        reps.success_rate()
    )
}

/// Builds the artifacts inside the `PFMAB_THREADS` pool and writes them.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    let artifacts = thread_pool()?.install(|| build_artifacts(spec))?;
    artifacts.write_to(&spec.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let mut spec = ExperimentSpec::new(Command::CompareEnhanced);
        spec.model = "random:3:5:7:0.1:0.9".parse().unwrap();
        spec.alphas = vec![0.0, 0.25, 1.0];
        spec.schedule = ScheduleKind::LogScaled(2.5);
        spec.ingest.ratings = Some("r.csv".into());
        assert_eq!(ExperimentSpec::parse(&spec.to_text()).unwrap(), spec);
        let csv = ExperimentSpec {
            model: ModelSource::Csv("m.csv".into()),
            ..spec
        };
        assert_eq!(ExperimentSpec::parse(&csv.to_text()).unwrap(), csv);
    }

    #[test]
    fn spec_parse_errors() {
        assert!(matches!(
            ExperimentSpec::parse("model=paper9\n"),
            Err(CliError::MissingField("command"))
        ));
        assert!(matches!(
            ExperimentSpec::parse("command=run\n\nhorizon\n"),
            Err(CliError::SpecSyntax { line: 3, .. })
        ));
        assert!(matches!(
            ExperimentSpec::parse("command=run\nhorizons=5\n"),
            Err(CliError::SpecSyntax { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentSpec::parse("command=run\nhorizon=-5\n"),
            Err(CliError::InvalidField { key: "horizon", .. })
        ));
        assert!(ExperimentSpec::parse("command=walk\n").is_err());
    }

    #[test]
    fn model_sources() {
        assert_eq!(
            "paper9".parse::<ModelSource>().unwrap(),
            ModelSource::NineArm
        );
        assert_eq!(
            "random:2:3:4".parse::<ModelSource>().unwrap(),
            ModelSource::Random {
                clients: 2,
                arms: 3,
                seed: 4,
                lo: 0.0,
                hi: 1.0
            }
        );
        assert!("random:2:3".parse::<ModelSource>().is_err());
        assert!("random:0:3:1".parse::<ModelSource>().is_err());
        assert_eq!(
            "a/b.csv".parse::<ModelSource>().unwrap(),
            ModelSource::Csv("a/b.csv".into())
        );
    }

    #[test]
    fn benchmarks_on_nine_arm_game() {
        let (local, global) = reward_benchmarks(&nine_arm_game());
        assert_eq!(local, 1.0);
        assert_eq!(global, 0.5);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(Command::Run);
        spec.alphas = vec![0.2, 0.4];
        assert!(matches!(
            build_artifacts(&spec),
            Err(CliError::InvalidField { key: "alphas", .. })
        ));
        spec.alphas = vec![1.5];
        assert!(build_artifacts(&spec).is_err());
        let ingest = ExperimentSpec::new(Command::Ingest);
        assert!(matches!(
            build_artifacts(&ingest),
            Err(CliError::MissingField("ratings"))
        ));
    }
}
