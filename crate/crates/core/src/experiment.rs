//! Experiment driver: run configuration, on-disk layout, and the generate,
//! train, evaluate, τ-ablation and comparison pipelines.
//!
//! Layout under the output directory:
//!
//! ```text
//! <out>/<task>/data/seed<k>/{expert,behavior,preferences,heldout}.jsonl
//! <out>/<task>/<method>/seed<k>/{model.json,train_log.json,metrics.json,credit.csv}
//! <out>/<task>/<method>/{metrics.csv,summary.csv}
//! <out>/<task>/ablate-tau/{table.csv,summary.csv}
//! <out>/<task>/compare/{metrics.csv,summary.csv,comparison.json,credit_seed<k>.csv}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{drex_augment, mr_train, rd_train, seabo_reward, SeaboConfig};
use crate::dataset::{
    build_expert_transition_set, generate_synthetic_mdp_data, load_preferences, load_trajectories,
    sample_preference_pairs, sample_segments, save_preferences, save_trajectories, ExpertTransitionSet,
    PreferencePair, Segment, Trajectory, Transition,
};
use crate::error::{Result, SpwError};
use crate::evaluation::{
    kl_divergence, mean_std, pearson_spearman, preference_accuracy, reward_histogram, CreditProfile,
};
use crate::exec;
use crate::policy::{make_task, success_rate, value_iteration, RewardSource, SyntheticTask, TabularPolicy};
use crate::reward_model::{
    prepare_pairs, train_reward, Activation, Optimizer, OutputSquash, RewardModel, TrainConfig, TrainingLog,
    WeightMode,
};
use crate::rng::derive_seed;
use crate::search::{build_index, Metric, NearestNeighborIndex};
use crate::weighting::Temperature;

pub const VERSION: &str = concat!("spw ", env!("CARGO_PKG_VERSION"));

// Independent random streams derived from each run seed.
const STREAM_DATA: u64 = 1;
const STREAM_PREFS: u64 = 2;
const STREAM_HELDOUT: u64 = 3;
const STREAM_EVAL_SEGMENTS: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_SHUFFLE: u64 = 6;
const STREAM_DREX: u64 = 7;
const STREAM_EPISODES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spw,
    Mr,
    Seabo,
    Drex,
    Rd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Spw, Method::Mr, Method::Seabo, Method::Drex, Method::Rd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Spw => "spw",
            Method::Mr => "mr",
            Method::Seabo => "seabo",
            Method::Drex => "drex",
            Method::Rd => "rd",
        }
    }

    pub fn is_learned(self) -> bool {
        self != Method::Seabo
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SpwError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| SpwError::Config(format!("unknown method `{s}`; expected one of spw, mr, seabo, drex, rd")))
    }
}

/// Everything a run depends on. Built from defaults, then a config file,
/// then command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub task_params: BTreeMap<String, String>,
    pub n_expert: usize,
    pub n_behavior: usize,
    pub noise: f64,
    pub n_preferences: usize,
    pub segment_length: usize,
    pub tie_epsilon: f64,
    pub heldout: usize,
    pub method: Method,
    pub tau: Temperature,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_squash: OutputSquash,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub legacy_sum_scale: bool,
    pub rd_lambda: f64,
    pub input_norm: bool,
    pub seabo: SeaboConfig,
    pub drex_pairs: usize,
    pub eval_segments: usize,
    pub eval_episodes: usize,
    pub eval_bins: usize,
    pub vi_tolerance: f64,
    pub tau_grid: Vec<Temperature>,
    pub compare_methods: Vec<Method>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "grid-nav".into(),
            task_params: BTreeMap::new(),
            n_expert: 1,
            n_behavior: 100,
            noise: 0.5,
            n_preferences: 200,
            segment_length: 25,
            tie_epsilon: 0.0,
            heldout: 200,
            method: Method::Spw,
            tau: Temperature::default(),
            seeds: (0..5).collect(),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            output_squash: OutputSquash::Tanh,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            optimizer: Optimizer::default(),
            legacy_sum_scale: false,
            rd_lambda: 1.0,
            input_norm: true,
            seabo: SeaboConfig::default(),
            drex_pairs: 200,
            eval_segments: 100,
            eval_episodes: 200,
            eval_bins: 20,
            vi_tolerance: 1e-6,
            tau_grid: [0.5, 0.7, 1.0, 2.0]
                .into_iter()
                .map(Temperature::Finite)
                .chain([Temperature::Infinite])
                .collect(),
            compare_methods: Method::ALL.to_vec(),
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SpwError::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(SpwError::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

/// `0,1,2` or the half-open range `0..5`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = match value.trim().split_once("..") {
        Some((a, b)) => (parse::<u64>("seeds", a)?..parse::<u64>("seeds", b)?).collect(),
        None => parse_list("seeds", value)?,
    };
    if seeds.is_empty() {
        return Err(SpwError::Config("seeds must not be empty".into()));
    }
    Ok(seeds)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task = v.to_string(),
            k if k.starts_with("task.") => {
                self.task_params.insert(k["task.".len()..].to_string(), v.to_string());
            }
            "data.n_expert" => self.n_expert = parse(key, v)?,
            "data.n_behavior" => self.n_behavior = parse(key, v)?,
            "data.noise" => self.noise = parse(key, v)?,
            "data.n_preferences" => self.n_preferences = parse(key, v)?,
            "data.segment_length" => self.segment_length = parse(key, v)?,
            "data.tie_epsilon" => self.tie_epsilon = parse(key, v)?,
            "data.heldout" => self.heldout = parse(key, v)?,
            "method" => self.method = v.parse()?,
            "tau" => self.tau = v.parse()?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.activation" => {
                self.activation = match v {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => return Err(SpwError::Config(format!("{key}: expected tanh or relu"))),
                }
            }
            "model.output_squash" => {
                self.output_squash = match v {
                    "tanh" => OutputSquash::Tanh,
                    "none" => OutputSquash::None,
                    _ => return Err(SpwError::Config(format!("{key}: expected tanh or none"))),
                }
            }
            "train.learning_rate" => self.learning_rate = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.optimizer" => {
                self.optimizer = match v {
                    "adam" => Optimizer::default(),
                    "sgd" => Optimizer::Sgd,
                    _ => return Err(SpwError::Config(format!("{key}: expected adam or sgd"))),
                }
            }
            "train.legacy_sum_scale" => self.legacy_sum_scale = parse_bool(key, v)?,
            "train.rd_lambda" => self.rd_lambda = parse(key, v)?,
            "train.input_norm" => self.input_norm = parse_bool(key, v)?,
            "seabo.beta" => self.seabo.beta = parse(key, v)?,
            "seabo.amplitude" => self.seabo.amplitude = parse(key, v)?,
            "drex.pairs" => self.drex_pairs = parse(key, v)?,
            "eval.segments" => self.eval_segments = parse(key, v)?,
            "eval.episodes" => self.eval_episodes = parse(key, v)?,
            "eval.bins" => self.eval_bins = parse(key, v)?,
            "eval.tolerance" => self.vi_tolerance = parse(key, v)?,
            "ablate.taus" => self.tau_grid = parse_list(key, v)?,
            "compare.methods" => self.compare_methods = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(SpwError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| SpwError::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SpwError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k, v).map_err(|e| SpwError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task()?;
        self.seabo.validate()?;
        let positive = [
            ("data.n_expert", self.n_expert),
            ("data.n_preferences", self.n_preferences),
            ("data.segment_length", self.segment_length),
            ("train.batch_size", self.batch_size),
            ("eval.segments", self.eval_segments),
            ("eval.episodes", self.eval_episodes),
            ("eval.bins", self.eval_bins),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SpwError::Config(format!("{k} must be at least 1")));
        }
        if self.seeds.is_empty() {
            return Err(SpwError::Config("seeds must not be empty".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(SpwError::Config("model.hidden must list positive layer widths".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(SpwError::Config("data.noise must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SpwError::Config("train.learning_rate must be positive".into()));
        }
        if !(self.vi_tolerance > 0.0) {
            return Err(SpwError::Config("eval.tolerance must be positive".into()));
        }
        if self.tau_grid.is_empty() || self.compare_methods.is_empty() {
            return Err(SpwError::Config("ablate.taus and compare.methods must not be empty".into()));
        }
        Ok(())
    }

    pub fn task(&self) -> Result<SyntheticTask> {
        make_task(&self.task, &self.task_params)
    }

    /// Every setting as sorted `key → value` strings.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.clone());
        for (k, v) in &self.task_params {
            put(&format!("task.{k}"), v.clone());
        }
        put("data.n_expert", self.n_expert.to_string());
        put("data.n_behavior", self.n_behavior.to_string());
        put("data.noise", self.noise.to_string());
        put("data.n_preferences", self.n_preferences.to_string());
        put("data.segment_length", self.segment_length.to_string());
        put("data.tie_epsilon", self.tie_epsilon.to_string());
        put("data.heldout", self.heldout.to_string());
        put("method", self.method.to_string());
        put("tau", self.tau.to_string());
        put("seeds", join(&self.seeds));
        put("model.hidden", join(&self.hidden));
        put(
            "model.activation",
            match self.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            }
            .into(),
        );
        put(
            "model.output_squash",
            match self.output_squash {
                OutputSquash::Tanh => "tanh",
                OutputSquash::None => "none",
            }
            .into(),
        );
        put("train.learning_rate", self.learning_rate.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.epochs", self.epochs.to_string());
        put(
            "train.optimizer",
            match self.optimizer {
                Optimizer::Adam { .. } => "adam",
                Optimizer::Sgd => "sgd",
            }
            .into(),
        );
        put("train.legacy_sum_scale", self.legacy_sum_scale.to_string());
        put("train.rd_lambda", self.rd_lambda.to_string());
        put("train.input_norm", self.input_norm.to_string());
        put("seabo.beta", self.seabo.beta.to_string());
        put("seabo.amplitude", self.seabo.amplitude.to_string());
        put("drex.pairs", self.drex_pairs.to_string());
        put("eval.segments", self.eval_segments.to_string());
        put("eval.episodes", self.eval_episodes.to_string());
        put("eval.bins", self.eval_bins.to_string());
        put("eval.tolerance", self.vi_tolerance.to_string());
        put("ablate.taus", join(&self.tau_grid));
        put("compare.methods", join(&self.compare_methods));
        put("out", self.out.display().to_string());
        m
    }

    /// Resolved configuration as `key = value` lines, loadable by
    /// [`RunConfig::apply_file`].
    pub fn to_config_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Version and every setting except the output location.
    pub fn provenance(&self) -> Value {
        let mut entries = self.entries();
        entries.remove("out");
        json!({ "version": VERSION, "config": entries })
    }

    /// Single-line provenance for `#` headers of line-oriented files.
    fn header(&self) -> String {
        self.provenance().to_string()
    }

    fn train_config(&self, seed: u64, mode: WeightMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: derive_seed(seed, STREAM_SHUFFLE),
            optimizer: self.optimizer,
            weight_mode: mode,
            legacy_sum_scale: self.legacy_sum_scale,
            rd_lambda: self.rd_lambda,
            fit_input_norm: self.input_norm,
        }
    }

    fn task_dir(&self) -> PathBuf {
        self.out.join(&self.task)
    }

    pub fn data_dir(&self, seed: u64) -> PathBuf {
        self.task_dir().join("data").join(format!("seed{seed}"))
    }

    /// Directory name of the configured method; SPW runs at a non-default
    /// temperature get their own.
    pub fn method_label(&self) -> String {
        match self.method {
            Method::Spw if self.tau != Temperature::default() => format!("spw-tau{}", self.tau),
            m => m.to_string(),
        }
    }

    pub fn method_dir(&self) -> PathBuf {
        self.task_dir().join(self.method_label())
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.method_dir().join(format!("seed{seed}"))
    }

    fn with_method(&self, method: Method, tau: Temperature) -> RunConfig {
        RunConfig {
            method,
            tau,
            ..self.clone()
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| SpwError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SpwError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SpwError::Config(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SpwError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SpwError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// generate

/// Data of one seed as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedData {
    pub expert: Vec<Trajectory>,
    pub behavior: Vec<Trajectory>,
    pub preferences: Vec<PreferencePair>,
    pub heldout: Vec<PreferencePair>,
}

impl SeedData {
    pub fn build(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let task = cfg.task()?;
        let (expert, behavior) = generate_synthetic_mdp_data(
            &task,
            cfg.n_expert,
            cfg.n_behavior,
            cfg.noise,
            derive_seed(seed, STREAM_DATA),
        )?;
        let h = cfg.segment_length;
        let preferences = sample_preference_pairs(
            &behavior,
            h,
            cfg.n_preferences,
            cfg.tie_epsilon,
            derive_seed(seed, STREAM_PREFS),
        )?;
        let heldout = sample_preference_pairs(
            &behavior,
            h,
            cfg.heldout,
            cfg.tie_epsilon,
            derive_seed(seed, STREAM_HELDOUT),
        )?;
        Ok(SeedData {
            expert,
            behavior,
            preferences,
            heldout,
        })
    }

    pub fn load(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let dir = cfg.data_dir(seed);
        Ok(SeedData {
            expert: load_trajectories(dir.join("expert.jsonl"))?,
            behavior: load_trajectories(dir.join("behavior.jsonl"))?,
            preferences: load_preferences(dir.join("preferences.jsonl"))?,
            heldout: load_preferences(dir.join("heldout.jsonl"))?,
        })
    }

    fn save(&self, cfg: &RunConfig, seed: u64) -> Result<Vec<PathBuf>> {
        let dir = cfg.data_dir(seed);
        create_dir(&dir)?;
        let header = cfg.header();
        let paths = ["expert", "behavior", "preferences", "heldout"].map(|n| dir.join(format!("{n}.jsonl")));
        save_trajectories(&paths[0], &self.expert, Some(&header))?;
        save_trajectories(&paths[1], &self.behavior, Some(&header))?;
        save_preferences(&paths[2], &self.preferences, Some(&header))?;
        save_preferences(&paths[3], &self.heldout, Some(&header))?;
        Ok(paths.to_vec())
    }

    fn expert_set(&self) -> Result<ExpertTransitionSet> {
        build_expert_transition_set(&self.expert)
    }
}

/// Writes expert, behaviour, training-preference and held-out-preference
/// files for every seed. Returns the written paths.
pub fn generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let per_seed = exec::try_map(&cfg.seeds, |&seed| SeedData::build(cfg, seed)?.save(cfg, seed))?;
    Ok(per_seed.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// train

/// Result of training one seed.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Model(RewardModel, TrainingLog),
    Seabo(SeaboConfig),
}

/// Trains the configured method on one seed's data.
pub fn train_seed(cfg: &RunConfig, data: &SeedData, seed: u64) -> Result<Trained> {
    let task = cfg.task()?;
    let expert = data.expert_set()?;
    let model = RewardModel::init(
        task.state_dim(),
        task.action_dim(),
        &cfg.hidden,
        cfg.activation,
        cfg.output_squash,
        derive_seed(seed, STREAM_INIT),
    )?;
    let (model, log) = match cfg.method {
        Method::Seabo => return Ok(Trained::Seabo(cfg.seabo)),
        Method::Spw => train_reward(
            model,
            &data.preferences,
            &expert,
            cfg.tau,
            &cfg.train_config(seed, WeightMode::Spw),
        )?,
        Method::Mr => mr_train(model, &data.preferences, &cfg.train_config(seed, WeightMode::Uniform))?,
        Method::Rd => rd_train(
            model,
            &data.preferences,
            &expert,
            cfg.tau,
            &cfg.train_config(seed, WeightMode::Uniform),
        )?,
        Method::Drex => {
            let h = cfg.segment_length;
            let stream = derive_seed(seed, STREAM_DREX);
            let expert_segs = sample_segments(&data.expert, h, cfg.drex_pairs, derive_seed(stream, 0))?;
            let behavior_segs = sample_segments(&data.behavior, h, cfg.drex_pairs, derive_seed(stream, 1))?;
            let mut pairs = data.preferences.clone();
            pairs.extend(drex_augment(&expert_segs, &behavior_segs, cfg.drex_pairs, derive_seed(stream, 2))?);
            mr_train(model, &pairs, &cfg.train_config(seed, WeightMode::Uniform))?
        }
    };
    Ok(Trained::Model(model, log))
}

#[derive(Serialize, Deserialize)]
struct LogFile {
    provenance: Value,
    log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
struct SeaboFile {
    provenance: Value,
    seabo: SeaboConfig,
}

/// Trains the configured method for every seed, writing a checkpoint and a
/// training log per seed. Returns the run directories.
pub fn train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    exec::try_map(&cfg.seeds, |&seed| {
        let data = SeedData::load(cfg, seed)?;
        let trained = train_seed(cfg, &data, seed)?;
        let dir = cfg.run_dir(seed);
        create_dir(&dir)?;
        match trained {
            Trained::Model(model, log) => {
                model.save(dir.join("model.json"), Some(cfg.provenance()))?;
                write_json(
                    &dir.join("train_log.json"),
                    &LogFile {
                        provenance: cfg.provenance(),
                        log,
                    },
                )?;
            }
            Trained::Seabo(seabo) => write_json(
                &dir.join("seabo.json"),
                &SeaboFile {
                    provenance: cfg.provenance(),
                    seabo,
                },
            )?,
        }
        Ok(dir)
    })
}

/// Reads a training log written by [`train`].
pub fn load_training_log(path: &Path) -> Result<TrainingLog> {
    Ok(read_json::<LogFile>(path)?.log)
}

fn load_trained(cfg: &RunConfig, seed: u64) -> Result<Trained> {
    let dir = cfg.run_dir(seed);
    if cfg.method == Method::Seabo {
        return Ok(Trained::Seabo(read_json::<SeaboFile>(&dir.join("seabo.json"))?.seabo));
    }
    let model = RewardModel::load(dir.join("model.json"))?;
    let log = load_training_log(&dir.join("train_log.json"))?;
    Ok(Trained::Model(model, log))
}

// ---------------------------------------------------------------------------
// evaluate

/// Per-step reward of a trained method.
struct Scorer<'a> {
    trained: &'a Trained,
    index: NearestNeighborIndex,
}

impl Scorer<'_> {
    fn reward(&self, t: &Transition) -> Result<f64> {
        match self.trained {
            Trained::Model(m, _) => m.predict_reward(t),
            Trained::Seabo(cfg) => seabo_reward(&self.index, t, *cfg),
        }
    }

    fn rewards(&self, ts: &[Transition]) -> Result<Vec<f64>> {
        exec::try_map(ts, |t| self.reward(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Goal-reaching rate of the greedy policy planned on the learned reward.
    pub success_rate: f64,
    /// `KL(GT ‖ learned)` between pooled per-step reward histograms.
    pub kl_gt: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Ranking accuracy on held-out pairs under the method's own weighting.
    pub preference_accuracy: Option<f64>,
    /// Mean `|R₀ − R₁|` over held-out pairs.
    pub mean_abs_margin: Option<f64>,
    /// Mean within-segment standard deviation of learned per-step rewards.
    pub within_segment_std: f64,
}

impl SeedMetrics {
    pub const NAMES: [&'static str; 7] = [
        "success_rate",
        "kl_gt",
        "pearson",
        "spearman",
        "preference_accuracy",
        "mean_abs_margin",
        "within_segment_std",
    ];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.success_rate),
            Some(self.kl_gt),
            self.pearson,
            self.spearman,
            self.preference_accuracy,
            self.mean_abs_margin,
            Some(self.within_segment_std),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.values()[i])
    }
}

/// Evaluation segments shared by every method of one seed.
pub fn evaluation_segments(cfg: &RunConfig, data: &SeedData, seed: u64) -> Result<Vec<Segment>> {
    sample_segments(
        &data.behavior,
        cfg.segment_length,
        cfg.eval_segments,
        derive_seed(seed, STREAM_EVAL_SEGMENTS),
    )
}

/// The first evaluation segment whose ground-truth profile is not flat.
fn credit_segment(segments: &[Segment]) -> &Segment {
    segments
        .iter()
        .find(|s| {
            let r = s.gt_rewards.as_deref().unwrap_or(&[]);
            r.iter().any(|&x| x != r[0])
        })
        .unwrap_or(&segments[0])
}

pub struct SeedEvaluation {
    pub metrics: SeedMetrics,
    pub policy: TabularPolicy,
    /// `(gt, learned)` credit profile of the shared credit segment.
    pub credit: (Vec<f64>, Vec<f64>),
}

pub fn evaluate_seed(cfg: &RunConfig, data: &SeedData, trained: &Trained, seed: u64) -> Result<SeedEvaluation> {
    let task = cfg.task()?;
    let expert = data.expert_set()?;
    let index = build_index(&expert, Metric::Euclidean)?;
    let scorer = Scorer { trained, index };

    let reward_fn = |t: &Transition| scorer.reward(t);
    let source = match trained {
        Trained::Model(m, _) => RewardSource::Model(m),
        Trained::Seabo(_) => RewardSource::Custom(&reward_fn),
    };
    let policy = value_iteration(&task, &source, cfg.vi_tolerance)?;
    let success = success_rate(&policy, &task, cfg.eval_episodes, derive_seed(seed, STREAM_EPISODES));

    let segments = evaluation_segments(cfg, data, seed)?;
    let mut gt = Vec::new();
    let mut learned = Vec::new();
    let mut spread = 0.0;
    for s in &segments {
        gt.extend(s.gt_rewards.as_ref().ok_or(SpwError::UnlabeledSegment)?);
        let r = scorer.rewards(&s.transitions)?;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        spread += (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r.len() as f64).sqrt();
        learned.extend(r);
    }
    let kl = kl_divergence(
        &reward_histogram(&gt, cfg.eval_bins)?,
        &reward_histogram(&learned, cfg.eval_bins)?,
    )?;
    let (pearson, spearman) = match pearson_spearman(&learned, &gt) {
        Ok((r, rho)) => (Some(r), Some(rho)),
        Err(SpwError::UndefinedCorrelation) => (None, None),
        Err(e) => return Err(e),
    };

    let (accuracy, margin) = heldout_scores(cfg, data, &scorer)?;
    let cs = credit_segment(&segments);
    let credit = (
        CreditProfile::from_rewards(cs.gt_rewards.as_ref().ok_or(SpwError::UnlabeledSegment)?).0,
        CreditProfile::from_rewards(&scorer.rewards(&cs.transitions)?).0,
    );
    Ok(SeedEvaluation {
        metrics: SeedMetrics {
            seed,
            success_rate: success,
            kl_gt: kl,
            pearson,
            spearman,
            preference_accuracy: accuracy,
            mean_abs_margin: margin,
            within_segment_std: spread / segments.len() as f64,
        },
        policy,
        credit,
    })
}

/// Held-out accuracy and mean absolute margin. SPW is scored with its own
/// weights; every other method with uniform weights.
fn heldout_scores(cfg: &RunConfig, data: &SeedData, scorer: &Scorer<'_>) -> Result<(Option<f64>, Option<f64>)> {
    if data.heldout.is_empty() {
        return Ok((None, None));
    }
    let (tau, mode) = match cfg.method {
        Method::Spw => (cfg.tau, WeightMode::Spw),
        _ => (Temperature::Infinite, WeightMode::Uniform),
    };
    let prepared = prepare_pairs(&data.heldout, Some(&scorer.index), tau, mode, false)?;
    let margins = exec::try_map(&prepared, |p| {
        let ret = |ws: &crate::weighting::WeightedSegment| -> Result<f64> {
            Ok(scorer
                .rewards(&ws.segment.transitions)?
                .iter()
                .zip(&ws.weights)
                .map(|(r, w)| r * w)
                .sum())
        };
        Ok(ret(&p.pair.seg0)? - ret(&p.pair.seg1)?)
    })?;
    let mean_abs = margins.iter().map(|m| m.abs()).sum::<f64>() / margins.len() as f64;
    let accuracy = match scorer.trained {
        Trained::Model(m, _) => match preference_accuracy(m, &data.heldout, Some(&scorer.index), tau, mode) {
            Ok(a) => Some(a),
            Err(SpwError::EmptyInput(_)) => None,
            Err(e) => return Err(e),
        },
        Trained::Seabo(_) => {
            let mut credit = 0.0;
            let mut n = 0usize;
            for (p, m) in prepared.iter().zip(&margins) {
                if let Some(c) = crate::reward_model::train::ranking_credit(*m, p.pair.label) {
                    credit += c;
                    n += 1;
                }
            }
            (n > 0).then(|| credit / n as f64)
        }
    };
    Ok((accuracy, Some(mean_abs)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_header(cfg: &RunConfig) -> String {
    format!("# {}\n", cfg.header())
}

/// Mean and standard deviation of one metric over seeds, skipping seeds
/// where it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate(metrics: &[SeedMetrics]) -> Vec<Aggregate> {
    SeedMetrics::NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let xs: Vec<f64> = metrics.iter().filter_map(|m| m.values()[i]).collect();
            let (mean, std) = if xs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&xs);
                (Some(m), Some(s))
            };
            Aggregate {
                metric: name.to_string(),
                mean,
                std,
                n: xs.len(),
            }
        })
        .collect()
}

fn metrics_rows(task: &str, label: &str, metrics: &[SeedMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        for (name, v) in SeedMetrics::NAMES.iter().zip(m.values()) {
            out += &format!("{task},{label},{},{name},{}\n", m.seed, fmt_opt(v));
        }
    }
    out
}

fn summary_rows(task: &str, label: &str, metrics: &[SeedMetrics]) -> String {
    aggregate(metrics)
        .into_iter()
        .map(|a| format!("{task},{label},{},{},{},{}\n", a.metric, fmt_opt(a.mean), fmt_opt(a.std), a.n))
        .collect()
}

const METRICS_CSV_HEADER: &str = "task,method,seed,metric,value\n";
const SUMMARY_CSV_HEADER: &str = "task,method,metric,mean,std,n\n";

/// Result of evaluating one method over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEvaluation {
    pub label: String,
    pub per_seed: Vec<SeedMetrics>,
    /// Credit profiles `(gt, learned)` per seed.
    pub credit: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MethodEvaluation {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        aggregate(&self.per_seed)
            .into_iter()
            .find(|a| a.metric == metric)
            .and_then(|a| a.mean)
    }
}

/// Evaluates the configured method for every seed from its checkpoints,
/// writing per-seed metrics, credit profiles and the aggregated tables.
pub fn evaluate(cfg: &RunConfig) -> Result<MethodEvaluation> {
    let results = exec::try_map(&cfg.seeds, |&seed| {
        let data = SeedData::load(cfg, seed)?;
        let trained = load_trained(cfg, seed)?;
        let ev = evaluate_seed(cfg, &data, &trained, seed)?;
        let dir = cfg.run_dir(seed);
        write_json(
            &dir.join("metrics.json"),
            &json!({ "provenance": cfg.provenance(), "metrics": ev.metrics }),
        )?;
        let mut csv = csv_header(cfg);
        csv += &format!("step,gt,{}\n", cfg.method_label());
        for (i, (g, l)) in ev.credit.0.iter().zip(&ev.credit.1).enumerate() {
            csv += &format!("{i},{g},{l}\n");
        }
        write_text(&dir.join("credit.csv"), &csv)?;
        Ok((ev.metrics, ev.credit))
    })?;
    let (per_seed, credit): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let label = cfg.method_label();
    let dir = cfg.method_dir();
    write_text(
        &dir.join("metrics.csv"),
        &(csv_header(cfg) + METRICS_CSV_HEADER + &metrics_rows(&cfg.task, &label, &per_seed)),
    )?;
    write_text(
        &dir.join("summary.csv"),
        &(csv_header(cfg) + SUMMARY_CSV_HEADER + &summary_rows(&cfg.task, &label, &per_seed)),
    )?;
    Ok(MethodEvaluation {
        label,
        per_seed,
        credit,
    })
}

/// Generates data if it is missing, then trains and evaluates.
pub fn run_method(cfg: &RunConfig) -> Result<MethodEvaluation> {
    if cfg.seeds.iter().any(|&s| !cfg.data_dir(s).join("heldout.jsonl").exists()) {
        generate(cfg)?;
    }
    train(cfg)?;
    evaluate(cfg)
}

// ---------------------------------------------------------------------------
// ablation and comparison

#[derive(Debug, Clone, PartialEq)]
pub struct TauRow {
    pub tau: Temperature,
    pub evaluation: MethodEvaluation,
}

/// Trains and evaluates SPW at every temperature of `cfg.tau_grid` on the
/// same data, and writes the success-rate-vs-τ tables.
pub fn ablate_tau(cfg: &RunConfig) -> Result<Vec<TauRow>> {
    generate(cfg)?;
    let mut rows = Vec::new();
    for &tau in &cfg.tau_grid {
        let run = cfg.with_method(Method::Spw, tau);
        rows.push(TauRow {
            tau,
            evaluation: run_method(&run)?,
        });
    }
    let dir = cfg.task_dir().join("ablate-tau");
    create_dir(&dir)?;
    let mut table = csv_header(cfg) + "tau,seed,success_rate,kl_gt,spearman,preference_accuracy\n";
    let mut summary = csv_header(cfg) + "tau,success_mean,success_std,kl_gt_mean,spearman_mean\n";
    for row in &rows {
        for m in &row.evaluation.per_seed {
            table += &format!(
                "{},{},{},{},{},{}\n",
                row.tau,
                m.seed,
                m.success_rate,
                m.kl_gt,
                fmt_opt(m.spearman),
                fmt_opt(m.preference_accuracy)
            );
        }
        let agg = aggregate(&row.evaluation.per_seed);
        let get = |name: &str| agg.iter().find(|a| a.metric == name).unwrap();
        summary += &format!(
            "{},{},{},{},{}\n",
            row.tau,
            fmt_opt(get("success_rate").mean),
            fmt_opt(get("success_rate").std),
            fmt_opt(get("kl_gt").mean),
            fmt_opt(get("spearman").mean)
        );
    }
    write_text(&dir.join("table.csv"), &table)?;
    write_text(&dir.join("summary.csv"), &summary)?;
    Ok(rows)
}

/// Runs every method of `cfg.compare_methods` on shared data and writes a
/// comparison table and per-seed credit profiles.
pub fn compare(cfg: &RunConfig) -> Result<Vec<MethodEvaluation>> {
    generate(cfg)?;
    let evaluations = cfg
        .compare_methods
        .iter()
        .map(|&m| run_method(&cfg.with_method(m, cfg.tau)))
        .collect::<Result<Vec<_>>>()?;

    let dir = cfg.task_dir().join("compare");
    create_dir(&dir)?;
    let mut metrics = csv_header(cfg) + METRICS_CSV_HEADER;
    let mut summary = csv_header(cfg) + SUMMARY_CSV_HEADER;
    let mut table = serde_json::Map::new();
    for ev in &evaluations {
        metrics += &metrics_rows(&cfg.task, &ev.label, &ev.per_seed);
        summary += &summary_rows(&cfg.task, &ev.label, &ev.per_seed);
        table.insert(
            ev.label.clone(),
            json!({ "per_seed": ev.per_seed, "aggregate": aggregate(&ev.per_seed) }),
        );
    }
    write_text(&dir.join("metrics.csv"), &metrics)?;
    write_text(&dir.join("summary.csv"), &summary)?;
    write_json(
        &dir.join("comparison.json"),
        &json!({ "provenance": cfg.provenance(), "methods": table }),
    )?;

    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let Some(first) = evaluations.first() else { break };
        let gt = &first.credit[i].0;
        let mut csv = csv_header(cfg) + "step,gt";
        for ev in &evaluations {
            csv += &format!(",{}", ev.label);
        }
        csv += "\n";
        for (t, g) in gt.iter().enumerate() {
            csv += &format!("{t},{g}");
            for ev in &evaluations {
                csv += &format!(",{}", ev.credit[i].1[t]);
            }
            csv += "\n";
        }
        write_text(&dir.join(format!("credit_seed{seed}.csv")), &csv)?;
    }
    Ok(evaluations)
}

/// Success rate of the uniform-random policy under the evaluation protocol
/// of seed `seed`.
pub fn random_policy_success(cfg: &RunConfig, seed: u64) -> Result<f64> {
    let task = cfg.task()?;
    Ok(success_rate(
        &TabularPolicy::uniform_random(&task),
        &task,
        cfg.eval_episodes,
        derive_seed(seed, STREAM_EPISODES),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            out: out.to_path_buf(),
            seeds: vec![0, 1],
            n_behavior: 20,
            n_preferences: 30,
            heldout: 30,
            epochs: 3,
            hidden: vec![8],
            eval_segments: 10,
            eval_episodes: 20,
            ..RunConfig::default()
        };
        cfg.set("task.size", "6").unwrap();
        cfg.set("task.horizon", "20").unwrap();
        cfg.set("data.segment_length", "5").unwrap();
        cfg
    }

    #[test]
    fn config_round_trips_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.set("tau", "inf").unwrap();
        cfg.set("compare.methods", "mr,rd").unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, cfg.to_config_text()).unwrap();
        let back = RunConfig::resolve(Some(&path), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn precedence_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\ntau = 2\ndata.n_preferences = 100\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[("tau".into(), "0.5".into())]).unwrap();
        assert_eq!(cfg.tau, Temperature::Finite(0.5));
        assert_eq!(cfg.n_preferences, 100);
        assert!(RunConfig::resolve(None, &[("colour".into(), "red".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("method".into(), "ppo".into())]).is_err());
        fs::write(&path, "tau 2\n").unwrap();
        assert!(matches!(RunConfig::resolve(Some(&path), &[]), Err(SpwError::Parse { line: 1, .. })));
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn generate_is_byte_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate(&small(a.path())).unwrap();
        let pb = generate(&small(b.path())).unwrap();
        assert_eq!(pa.len(), 8);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let prefs = load_preferences(&pa[2]).unwrap();
        assert_eq!(prefs.len(), 30);
    }

    #[test]
    fn mr_and_infinite_temperature_logs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        generate(&cfg).unwrap();
        let mr = cfg.with_method(Method::Mr, cfg.tau);
        let spw = cfg.with_method(Method::Spw, Temperature::Infinite);
        train(&mr).unwrap();
        train(&spw).unwrap();
        for &s in &cfg.seeds {
            let a = load_training_log(&mr.run_dir(s).join("train_log.json")).unwrap();
            let b = load_training_log(&spw.run_dir(s).join("train_log.json")).unwrap();
            assert_eq!(a, b);
        }
        assert!(spw.run_dir(0).ends_with("spw-tauinf/seed0"));
    }

    #[test]
    fn evaluate_requires_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        generate(&cfg).unwrap();
        assert!(matches!(evaluate(&cfg), Err(SpwError::Io { .. })));
    }

    #[test]
    fn single_seed_has_zero_std() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seeds: vec![3],
            ..small(dir.path())
        };
        let ev = run_method(&cfg).unwrap();
        let agg = aggregate(&ev.per_seed);
        assert!(agg.iter().all(|a| a.std.is_none() || a.std == Some(0.0)));
        let text = fs::read_to_string(cfg.method_dir().join("summary.csv")).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("task,method,metric,mean,std"));
    }
}
