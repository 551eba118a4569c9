//! Experiment runner: config resolution, single runs, the transfer grid and
//! report/plot emission.
//!
//! Configuration is TOML. A value is taken from the command-line flag if
//! given, else from the config file, else from the selected profile preset.
//! Every run writes `manifest.toml` holding the fully resolved config;
//! running again from it reproduces the run's curve and report files.
//!
//! Grid seeds are derived per cell as
//! `splitmix64(master ^ splitmix64(fnv1a(key)))` with a key such as
//! `cell/Gaussian_AS/OU_AS`, so any cell's seed depends only on the master
//! seed and that cell's labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycles::{builtin, load_cycle, CycleError, DrivingCycle, SpeedUnit};
use crate::ddpg::{stream, stream_rng, train, Agent, Hyperparams, TrainError, STATE_DIM};
use crate::env::{rollout as env_rollout, Action, EpisodeLog, HevEnv, RewardParams};
use crate::explore::{NoiseKind, NoiseSpec};
use crate::powertrain::{BatteryParams, DrivelineParams, EfficiencyMap, Powertrain, PowertrainError, VehicleParams};
use crate::transfer::{
    build_report, load_checkpoint, save_checkpoint, transfer_init, AdaptationReport, CheckpointError, MetricConfig,
    MetricError, Provenance, ReinitScope, TransferError, REPORT_HEADER,
};

pub const MANIFEST: &str = "manifest.toml";
pub const CURVE: &str = "curve.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const REPORT: &str = "report.csv";
pub const SUMMARY: &str = "summary.csv";
pub const PLOT_DATA: &str = "plot_data.csv";
pub const PLOT_SVG: &str = "learning_curves.svg";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cycle: {0}")]
    Cycle(#[from] CycleError),
    #[error("powertrain: {0}")]
    Powertrain(#[from] PowertrainError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("transfer: {0}")]
    Transfer(#[from] TransferError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
}

impl RunError {
    /// Short machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Io { .. } => "io",
            RunError::Cycle(_) | RunError::Powertrain(_) => "data",
            RunError::Checkpoint { .. } => "checkpoint",
            RunError::Transfer(_) => "transfer",
            RunError::Train(_) => "training",
            RunError::Metric(_) => "metrics",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io { .. } => 3,
            RunError::Cycle(_) | RunError::Powertrain(_) => 4,
            RunError::Checkpoint { .. } => 5,
            RunError::Transfer(_) => 6,
            RunError::Train(_) => 7,
            RunError::Metric(_) => 8,
        }
    }
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    TrainSource,
    TrainTarget,
    Grid,
    Rollout,
    Report,
    Plots,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings.
    #[default]
    Paper,
    /// Short cycles and episode counts; minutes instead of hours.
    Desk,
}

impl FromStr for Profile {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(config_err(format!("unknown profile `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Source-domain noise configurations; a from-scratch row is always added.
    pub sources: Vec<NoiseSpec>,
    pub target_noises: Vec<NoiseSpec>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { sources: NoiseSpec::family_defaults().to_vec(), target_noises: NoiseSpec::target_grid().to_vec() }
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub profile: Profile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Unit of speed columns in cycle files; builtin cycles are already m/s.
    pub speed_unit: SpeedUnit,
    /// `builtin:<name>` or a path to a `time,speed` file.
    pub source_cycles: Vec<String>,
    pub target_cycles: Vec<String>,
    pub source_noise: NoiseSpec,
    pub target_noise: NoiseSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub reinit: ReinitScope,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_map: Option<PathBuf>,
    /// Run directories read by the report and plots modes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    pub source: Hyperparams,
    pub target: Hyperparams,
    pub metrics: MetricConfig,
    pub grid: GridConfig,
    pub reward: RewardParams,
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub driveline: DrivelineParams,
}

impl ExperimentConfig {
    pub fn preset(profile: Profile) -> Self {
        let base = Self {
            mode: Mode::TrainSource,
            profile,
            seed: None,
            out: PathBuf::from("runs"),
            speed_unit: SpeedUnit::Mps,
            source_cycles: vec!["builtin:udds".into(), "builtin:ftp75".into()],
            target_cycles: vec!["builtin:nedc".into()],
            source_noise: NoiseSpec::gaussian_action(0.06),
            target_noise: NoiseSpec::none(),
            checkpoint: None,
            reinit: ReinitScope::Both,
            engine_map: None,
            inputs: Vec::new(),
            source: Hyperparams::source(),
            target: Hyperparams::target(),
            metrics: MetricConfig::default(),
            grid: GridConfig::default(),
            reward: RewardParams::default(),
            vehicle: VehicleParams::default(),
            battery: BatteryParams::default(),
            driveline: DrivelineParams::default(),
        };
        match profile {
            Profile::Paper => base,
            Profile::Desk => Self {
                source_cycles: vec!["builtin:trapezoid".into(), "builtin:udds-excerpt".into()],
                target_cycles: vec!["builtin:ece15".into()],
                source: Hyperparams { episodes: 150, ..Hyperparams::source() },
                target: Hyperparams { episodes: 80, ..Hyperparams::target() },
                metrics: MetricConfig::desk(),
                ..base
            },
        }
    }

    pub fn seed(&self) -> Result<u64, RunError> {
        self.seed.ok_or_else(|| config_err("seed is required (set `seed` in the config or pass --seed)"))
    }

    /// Checks everything the mode needs before any compute starts.
    pub fn validate(&self) -> Result<(), RunError> {
        let seed = self.seed()?;
        if seed > i64::MAX as u64 {
            return Err(config_err(format!("seed {seed} exceeds {}", i64::MAX)));
        }
        let needs_source = matches!(self.mode, Mode::TrainSource | Mode::Grid);
        let needs_target = matches!(self.mode, Mode::TrainTarget | Mode::Grid | Mode::Rollout);
        if needs_source && self.source_cycles.is_empty() {
            return Err(config_err("source_cycles is empty"));
        }
        if needs_target && self.target_cycles.is_empty() {
            return Err(config_err("target_cycles is empty"));
        }
        if self.mode == Mode::Rollout && self.checkpoint.is_none() {
            return Err(config_err("rollout needs a checkpoint"));
        }
        if matches!(self.mode, Mode::Report | Mode::Plots) && self.inputs.is_empty() {
            return Err(config_err("no input run directories given"));
        }
        for (name, noise) in [("source_noise", &self.source_noise), ("target_noise", &self.target_noise)] {
            noise.validate().map_err(|e| config_err(format!("{name}: {e}")))?;
        }
        validate_hp("source", &self.source)?;
        validate_hp("target", &self.target)?;
        if self.source.hidden != self.target.hidden && self.mode == Mode::Grid {
            return Err(config_err("source.hidden and target.hidden differ; transfer needs equal hidden layers"));
        }
        if matches!(self.mode, Mode::TrainTarget | Mode::Grid) {
            let m = &self.metrics;
            if m.jp_window == 0 || m.tt_window == 0 || m.ap_start >= m.ap_end {
                return Err(config_err("metrics windows must be non-empty with ap_start < ap_end"));
            }
            let need = m.ap_end.max(m.jp_window).max(2 * m.tt_window).max(20);
            if self.target.episodes < need {
                return Err(config_err(format!(
                    "target.episodes = {} but the metrics need at least {need}",
                    self.target.episodes
                )));
            }
        }
        if self.mode == Mode::Grid {
            let mut labels: Vec<&str> = self.grid.sources.iter().map(|s| s.label()).collect();
            labels.push("TFS");
            check_unique("grid.sources", &labels)?;
            let targets: Vec<&str> = self.grid.target_noises.iter().map(|s| s.label()).collect();
            check_unique("grid.target_noises", &targets)?;
            if targets.is_empty() {
                return Err(config_err("grid.target_noises is empty"));
            }
            if self.grid.sources.iter().any(|s| s.kind == NoiseKind::None) {
                return Err(config_err("grid.sources: the from-scratch row is implicit; drop `None`"));
            }
        }
        if !(0.0..=1.0).contains(&self.reward.soc_ref) {
            return Err(config_err("reward.soc_ref must lie in [0, 1]"));
        }
        self.vehicle.validate()?;
        self.battery.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join(MANIFEST);
        fs::write(&path, self.to_toml()).map_err(io_err(&path))
    }

    pub fn powertrain(&self) -> Result<Powertrain, RunError> {
        let engine_map = match &self.engine_map {
            Some(p) => EfficiencyMap::load(p)?,
            None => EfficiencyMap::default_engine(),
        };
        Ok(Powertrain {
            vehicle: self.vehicle.clone(),
            battery: self.battery.clone(),
            driveline: self.driveline.clone(),
            engine_map,
            ..Powertrain::default()
        })
    }
}

fn validate_hp(name: &str, hp: &Hyperparams) -> Result<(), RunError> {
    let bad = |what: &str| Err(config_err(format!("{name}.{what}")));
    if hp.batch_size == 0 {
        return bad("batch_size must be positive");
    }
    if hp.replay_capacity < hp.batch_size {
        return bad("replay_capacity must be at least batch_size");
    }
    if !(0.0..=1.0).contains(&hp.gamma) || !(0.0..=1.0).contains(&hp.tau) {
        return bad("gamma and tau must lie in [0, 1]");
    }
    if !(hp.lr_actor > 0.0 && hp.lr_critic > 0.0) {
        return bad("learning rates must be positive");
    }
    if hp.hidden.is_empty() || hp.hidden.contains(&0) {
        return bad("hidden must list positive widths");
    }
    if hp.grad_clip.is_nan() || hp.grad_clip < 0.0 {
        return bad("grad_clip must be >= 0");
    }
    Ok(())
}

fn check_unique(what: &str, labels: &[&str]) -> Result<(), RunError> {
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if !seen.insert(*l) {
            return Err(config_err(format!("{what}: label `{l}` appears twice")));
        }
    }
    Ok(())
}

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Replaces the cycles the mode trains or rolls out on.
    pub cycles: Option<Vec<String>>,
    pub speed_unit: Option<SpeedUnit>,
    /// Replaces the noise the mode explores with.
    pub noise: Option<NoiseSpec>,
    pub sigma2_action: Option<f64>,
    pub sigma2_param: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
}

/// Builds the config for `mode`: profile preset, then the file, then flags.
pub fn resolve_config(mode: Mode, file: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig, RunError> {
    let file_table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            text.parse::<toml::Table>().map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let profile = match (flags.profile, file_table.get("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => v.as_str().ok_or_else(|| config_err("profile must be a string"))?.parse()?,
        (None, None) => Profile::default(),
    };
    let mut merged = toml::Table::try_from(ExperimentConfig::preset(profile)).expect("preset serializes");
    merge_tables(&mut merged, file_table);
    let mut cfg: ExperimentConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("config: {}", e.message())))?;
    cfg.mode = mode;
    cfg.profile = profile;
    apply_overrides(&mut cfg, flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), RunError> {
    if let Some(seed) = o.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(unit) = o.speed_unit {
        cfg.speed_unit = unit;
    }
    if let Some(ck) = &o.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    if !o.inputs.is_empty() {
        cfg.inputs = o.inputs.clone();
    }
    if let Some(cycles) = &o.cycles {
        match cfg.mode {
            Mode::TrainSource => cfg.source_cycles = cycles.clone(),
            _ => cfg.target_cycles = cycles.clone(),
        }
    }
    let noise = match cfg.mode {
        Mode::TrainSource => &mut cfg.source_noise,
        _ => &mut cfg.target_noise,
    };
    if let Some(n) = &o.noise {
        *noise = n.clone();
    }
    if let Some(s2) = o.sigma2_action {
        if noise.action_noise().is_none() {
            return Err(config_err(format!("--sigma2-action given but noise `{noise}` has no action noise")));
        }
        noise.sigma2_action = s2;
    }
    if let Some(s2) = o.sigma2_param {
        if !noise.uses_param_noise() {
            return Err(config_err(format!("--sigma2-param given but noise `{noise}` has no parameter noise")));
        }
        noise.sigma2_param = s2;
    }
    Ok(())
}

/// Resolves `builtin:<name>` or loads a cycle file in `unit`.
pub fn resolve_cycle(reference: &str, unit: SpeedUnit) -> Result<DrivingCycle, RunError> {
    match reference.strip_prefix("builtin:") {
        Some(name) => builtin::by_name(name).ok_or_else(|| {
            config_err(format!("unknown builtin cycle `{name}` (known: {})", builtin::NAMES.join(", ")))
        }),
        None => Ok(load_cycle(reference, unit)?),
    }
}

fn load_cycles(refs: &[String], unit: SpeedUnit) -> Result<Vec<Arc<DrivingCycle>>, RunError> {
    refs.iter().map(|r| resolve_cycle(r, unit).map(Arc::new)).collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for one job of a multi-run experiment; kept within 63 bits so it
/// survives a TOML round trip.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(key))) >> 1
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_curve(path: &Path, returns: &[f64]) -> Result<(), RunError> {
    let mut text = String::from("episode,return\n");
    for (k, r) in returns.iter().enumerate() {
        writeln!(text, "{k},{r}").expect("writing to a String");
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_curve(path: &Path) -> Result<Vec<f64>, RunError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| RunError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let bad = |what: &str| config_err(format!("{}: row {}: {what}", path.display(), line + 2));
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        let episode: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("bad episode"))?;
        if episode != out.len() {
            return Err(bad("episodes out of order"));
        }
        let r: f64 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("bad return"))?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SourceRun {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: Vec<f64>,
}

/// Trains on the source cycles and writes `checkpoint.bin`, `curve.csv` and
/// the manifest into `cfg.out`.
pub fn run_train_source(cfg: &ExperimentConfig) -> Result<SourceRun, RunError> {
    let cfg = ExperimentConfig { mode: Mode::TrainSource, ..cfg.clone() };
    cfg.validate()?;
    let seed = cfg.seed()?;
    let cycles = load_cycles(&cfg.source_cycles, cfg.speed_unit)?;
    let pt = Arc::new(cfg.powertrain()?);
    create_dir(&cfg.out)?;
    cfg.write_manifest(&cfg.out)?;

    let mut env = HevEnv::new(Arc::clone(&cycles[0]), pt, cfg.reward.clone()).map_err(TrainError::from)?;
    let mut agent = Agent::new(cfg.source.clone(), seed).map_err(TrainError::from)?;
    let mut rng = stream_rng(seed, stream::NOISE);
    let outcome = train(&mut agent, &mut env, &cycles, &cfg.source_noise, cfg.source.episodes, &mut rng)?;

    let curve_path = cfg.out.join(CURVE);
    write_curve(&curve_path, &outcome.returns)?;
    let provenance = Provenance {
        noise: cfg.source_noise.to_string(),
        source_cycles: cycles.iter().map(|c| c.name().to_string()).collect(),
        seed,
        episodes: cfg.source.episodes,
        extra: BTreeMap::from([("profile".to_string(), format!("{:?}", cfg.profile).to_lowercase())]),
    };
    let ck_path = cfg.out.join(CHECKPOINT);
    save_checkpoint(&agent, provenance, &ck_path)
        .map_err(|source| RunError::Checkpoint { path: ck_path.clone(), source })?;
    Ok(SourceRun { dir: cfg.out.clone(), checkpoint: ck_path, curve: outcome.returns })
}

#[derive(Clone, Debug)]
pub struct TargetRun {
    pub dir: PathBuf,
    pub source_init: String,
    pub target_noise: String,
    pub report: AdaptationReport,
}

impl TargetRun {
    pub fn csv_row(&self) -> String {
        self.report.csv_row(&self.target_noise, &self.source_init)
    }
}

fn source_label(provenance_noise: &str) -> String {
    provenance_noise.parse::<NoiseSpec>().map(|n| n.label().to_string()).unwrap_or_else(|_| provenance_noise.to_string())
}

/// Trains on the target cycles, from scratch or from `cfg.checkpoint`, and
/// writes `curve.csv`, `report.csv` and the manifest.
pub fn run_train_target(cfg: &ExperimentConfig) -> Result<TargetRun, RunError> {
    let cfg = ExperimentConfig { mode: Mode::TrainTarget, ..cfg.clone() };
    cfg.validate()?;
    let seed = cfg.seed()?;
    let cycles = load_cycles(&cfg.target_cycles, cfg.speed_unit)?;
    let pt = Arc::new(cfg.powertrain()?);
    let (mut agent, source_init) = match &cfg.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path).map_err(|source| RunError::Checkpoint { path: path.clone(), source })?;
            let mut rng = stream_rng(seed, stream::TRANSFER);
            let agent = transfer_init(&ck, cfg.target.clone(), cfg.reinit, seed, &mut rng)?;
            (agent, source_label(&ck.provenance.noise))
        }
        None => (Agent::new(cfg.target.clone(), seed).map_err(TrainError::from)?, "TFS".to_string()),
    };
    create_dir(&cfg.out)?;
    cfg.write_manifest(&cfg.out)?;

    let mut env = HevEnv::new(Arc::clone(&cycles[0]), pt, cfg.reward.clone()).map_err(TrainError::from)?;
    let mut rng = stream_rng(seed, stream::NOISE);
    let outcome = train(&mut agent, &mut env, &cycles, &cfg.target_noise, cfg.target.episodes, &mut rng)?;
    write_curve(&cfg.out.join(CURVE), &outcome.returns)?;
    let report = build_report(&outcome.returns, &cfg.metrics)?;
    let run = TargetRun {
        dir: cfg.out.clone(),
        source_init,
        target_noise: cfg.target_noise.label().to_string(),
        report,
    };
    let path = cfg.out.join(REPORT);
    fs::write(&path, format!("{REPORT_HEADER}\n{}\n", run.csv_row())).map_err(io_err(&path))?;
    Ok(run)
}

/// One grid cell's outcome.
#[derive(Clone, Debug)]
pub struct GridRow {
    pub target_noise: String,
    pub source_init: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub result: Result<AdaptationReport, String>,
}

#[derive(Clone, Debug)]
pub struct GridSummary {
    pub rows: Vec<GridRow>,
    pub path: PathBuf,
}

pub const SUMMARY_HEADER: &str = "target_noise,source_init,jp,ap,tt,status";

impl GridSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for row in &self.rows {
            match &row.result {
                Ok(r) => writeln!(out, "{},ok", r.csv_row(&row.target_noise, &row.source_init)),
                Err(e) => {
                    let msg: String = e.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                    writeln!(out, "{},{},,,,error: {msg}", row.target_noise, row.source_init)
                }
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn get(&self, target_noise: &str, source_init: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.target_noise == target_noise && r.source_init == source_init)
    }
}

/// Source training for every configured noise, then one target run per
/// (source init, target noise) pair including from-scratch. Cells run in
/// parallel; a failing cell is recorded and the rest continue.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridSummary, RunError> {
    let cfg = ExperimentConfig { mode: Mode::Grid, ..cfg.clone() };
    cfg.validate()?;
    let master = cfg.seed()?;
    create_dir(&cfg.out)?;
    cfg.write_manifest(&cfg.out)?;

    let sources: Vec<(String, Result<SourceRun, String>)> = cfg
        .grid
        .sources
        .par_iter()
        .map(|noise| {
            let label = noise.label().to_string();
            let run_cfg = ExperimentConfig {
                mode: Mode::TrainSource,
                seed: Some(derive_seed(master, &format!("source/{label}"))),
                source_noise: noise.clone(),
                out: cfg.out.join("sources").join(&label),
                ..cfg.clone()
            };
            (label, run_train_source(&run_cfg).map_err(|e| e.to_string()))
        })
        .collect();

    let mut jobs = Vec::new();
    for target in &cfg.grid.target_noises {
        jobs.push((target, "TFS".to_string(), None));
        for (label, run) in &sources {
            jobs.push((target, label.clone(), Some(run.as_ref().map(|r| r.checkpoint.clone()))));
        }
    }
    let rows: Vec<GridRow> = jobs
        .into_par_iter()
        .map(|(target, source_init, ck)| {
            let target_label = target.label().to_string();
            let seed = derive_seed(master, &format!("cell/{source_init}/{target_label}"));
            let dir = cfg.out.join("cells").join(format!("{source_init}__{target_label}"));
            let result = match ck {
                Some(Err(e)) => Err(format!("source run failed: {e}")),
                ck => {
                    let run_cfg = ExperimentConfig {
                        mode: Mode::TrainTarget,
                        seed: Some(seed),
                        target_noise: target.clone(),
                        checkpoint: ck.map(|c| c.expect("error case handled above")),
                        out: dir.clone(),
                        ..cfg.clone()
                    };
                    run_train_target(&run_cfg).map(|r| r.report).map_err(|e| e.to_string())
                }
            };
            GridRow { target_noise: target_label, source_init, seed, dir, result }
        })
        .collect();

    let summary = GridSummary { rows, path: cfg.out.join(SUMMARY) };
    fs::write(&summary.path, summary.to_csv()).map_err(io_err(&summary.path))?;
    Ok(summary)
}

/// Clean-policy rollouts of a checkpointed actor, one `trace_<cycle>.csv`
/// per target cycle.
pub fn run_rollout(cfg: &ExperimentConfig) -> Result<Vec<(String, EpisodeLog)>, RunError> {
    let cfg = ExperimentConfig { mode: Mode::Rollout, ..cfg.clone() };
    cfg.validate()?;
    let path = cfg.checkpoint.clone().expect("validated");
    let ck = load_checkpoint(&path).map_err(|source| RunError::Checkpoint { path: path.clone(), source })?;
    if ck.actor.input_dim() != STATE_DIM || ck.actor.output_dim() != 1 {
        return Err(config_err(format!("{}: actor is not a {STATE_DIM}-input policy", path.display())));
    }
    let cycles = load_cycles(&cfg.target_cycles, cfg.speed_unit)?;
    let pt = Arc::new(cfg.powertrain()?);
    create_dir(&cfg.out)?;
    cfg.write_manifest(&cfg.out)?;
    let mut logs = Vec::new();
    for cycle in cycles {
        let name = cycle.name().to_string();
        let mut env = HevEnv::new(cycle, Arc::clone(&pt), cfg.reward.clone()).map_err(TrainError::from)?;
        let actor = &ck.actor;
        let log = env_rollout(&mut env, |s| Action::new(actor.forward(&s.normalized()).expect("shape checked")[0]));
        let trace = cfg.out.join(format!("trace_{name}.csv"));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).expect("writing to memory");
        fs::write(&trace, buf).map_err(io_err(&trace))?;
        logs.push((name, log));
    }
    Ok(logs)
}

/// Run directories below `dir`: itself if it holds a curve, else the run
/// directories of a grid (`sources/*`, `cells/*`) or any direct children
/// holding curves.
pub fn discover_runs(dir: &Path) -> Vec<PathBuf> {
    if dir.join(CURVE).exists() {
        return vec![dir.to_path_buf()];
    }
    let mut out = Vec::new();
    for sub in [dir.join("sources"), dir.join("cells"), dir.to_path_buf()] {
        if let Ok(entries) = fs::read_dir(&sub) {
            let mut found: Vec<PathBuf> =
                entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(CURVE).exists()).collect();
            found.sort();
            out.extend(found);
        }
    }
    out
}

fn read_manifest(dir: &Path) -> Result<ExperimentConfig, RunError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))
}

#[derive(Clone, Debug, Default)]
pub struct ReportOutcome {
    pub rows: Vec<String>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Recomputes report rows for target runs under `cfg.inputs` with the
/// metric windows from each run's manifest, writing `report.csv` to `cfg.out`.
pub fn run_report(cfg: &ExperimentConfig) -> Result<ReportOutcome, RunError> {
    let mut outcome = ReportOutcome::default();
    for input in &cfg.inputs {
        let runs = discover_runs(input);
        if runs.is_empty() {
            outcome.skipped.push((input.clone(), "no curve.csv found".into()));
        }
        for dir in runs {
            let row = (|| {
                let m = read_manifest(&dir)?;
                if m.mode != Mode::TrainTarget {
                    return Err(config_err("not a target run"));
                }
                let curve = read_curve(&dir.join(CURVE))?;
                let report = build_report(&curve, &m.metrics)?;
                let source_init = match &m.checkpoint {
                    Some(p) => load_checkpoint(p)
                        .map(|ck| source_label(&ck.provenance.noise))
                        .map_err(|source| RunError::Checkpoint { path: p.clone(), source })?,
                    None => "TFS".to_string(),
                };
                Ok::<_, RunError>(report.csv_row(m.target_noise.label(), &source_init))
            })();
            match row {
                Ok(r) => outcome.rows.push(r),
                Err(e) => outcome.skipped.push((dir, e.to_string())),
            }
        }
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join(REPORT);
    let mut text = format!("{REPORT_HEADER}\n");
    for r in &outcome.rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(outcome)
}

#[derive(Clone, Debug, Default)]
pub struct PlotOutcome {
    /// Series names in output order.
    pub series: Vec<String>,
    pub missing: Vec<PathBuf>,
}

fn series_name(dir: &Path) -> String {
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    match dir.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()) {
        Some(parent) if parent == "sources" || parent == "cells" => format!("{parent}/{name}"),
        _ => name,
    }
}

/// Merges the learning curves under `inputs` into one long-format
/// `series,episode,return` file plus an SVG overlay. Missing curves are
/// listed; whatever was found is still written.
pub fn emit_plots(inputs: &[PathBuf], out: &Path) -> Result<PlotOutcome, RunError> {
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut missing = Vec::new();
    for input in inputs {
        let runs = discover_runs(input);
        if runs.is_empty() {
            missing.push(input.clone());
        }
        for dir in runs {
            match read_curve(&dir.join(CURVE)) {
                Ok(c) => {
                    series.insert(series_name(&dir), c);
                }
                Err(_) => missing.push(dir),
            }
        }
    }
    create_dir(out)?;
    let mut text = String::from("series,episode,return\n");
    for (name, curve) in &series {
        for (k, r) in curve.iter().enumerate() {
            writeln!(text, "{name},{k},{r}").expect("writing to a String");
        }
    }
    let data = out.join(PLOT_DATA);
    fs::write(&data, text).map_err(io_err(&data))?;
    let svg = out.join(PLOT_SVG);
    let mut f = fs::File::create(&svg).map_err(io_err(&svg))?;
    f.write_all(render_svg(&series).as_bytes()).map_err(io_err(&svg))?;
    Ok(PlotOutcome { series: series.into_keys().collect(), missing })
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn render_svg(series: &BTreeMap<String, Vec<f64>>) -> String {
    let (w, h, pad) = (800.0, 480.0, 60.0);
    let max_len = series.values().map(Vec::len).max().unwrap_or(0).max(2);
    let vals = series.values().flatten().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |k: usize| pad + (w - 2.0 * pad) * k as f64 / (max_len - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<path d=\"M{pad} {pad} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        h - pad,
        w - pad
    )
    .unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">episode</text>", w / 2.0, h - 20.0).unwrap();
    writeln!(s, "<text x=\"{pad}\" y=\"{}\" text-anchor=\"end\">{hi:.1}</text>", pad + 4.0).unwrap();
    writeln!(s, "<text x=\"{pad}\" y=\"{}\" text-anchor=\"end\">{lo:.1}</text>", h - pad).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", w - pad, h - pad + 16.0, max_len - 1).unwrap();
    for (i, (name, curve)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(k, &v)| format!("{:.1},{:.1}", x(k), y(v)))
            .collect();
        writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>", pts.join(" "))
            .unwrap();
        let ly = pad + 16.0 * i as f64;
        writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\">{}</text>", w - pad - 150.0, xml_escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(seed: u64) -> Overrides {
        Overrides { seed: Some(seed), ..Overrides::default() }
    }

    #[test]
    fn seed_is_mandatory() {
        let err = resolve_config(Mode::TrainSource, None, &Overrides::default()).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn precedence_flag_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "profile = \"desk\"\nseed = 3\n[source]\nepisodes = 7\n[target]\nlr_actor = 0.5\n").unwrap();
        let cfg = resolve_config(Mode::TrainSource, Some(&file), &Overrides::default()).unwrap();
        assert_eq!(cfg.profile, Profile::Desk);
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.source.episodes, 7);
        // untouched keys keep the preset value
        assert_eq!(cfg.source.lr_critic, 0.01);
        assert_eq!(cfg.target.lr_critic, 0.009);
        assert_eq!(cfg.target.episodes, 80);
        let o = Overrides { seed: Some(9), profile: Some(Profile::Paper), ..Overrides::default() };
        let cfg = resolve_config(Mode::TrainSource, Some(&file), &o).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.target.episodes, 300);
        assert_eq!(cfg.source.episodes, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "seed = 1\nepisodes = 5\n").unwrap();
        let err = resolve_config(Mode::TrainSource, Some(&file), &Overrides::default()).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn noise_flags_target_active_noise() {
        let o = Overrides { noise: Some("OU_AS".parse().unwrap()), sigma2_action: Some(0.11), ..flags(1) };
        let cfg = resolve_config(Mode::TrainSource, None, &o).unwrap();
        assert_eq!(cfg.source_noise.to_string(), "OU_AS(0.11)");
        assert_eq!(cfg.target_noise, NoiseSpec::none());
        let cfg = resolve_config(Mode::TrainTarget, None, &o).unwrap();
        assert_eq!(cfg.target_noise.to_string(), "OU_AS(0.11)");
        let o = Overrides { sigma2_param: Some(0.04), ..o };
        assert!(resolve_config(Mode::TrainSource, None, &o).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = resolve_config(Mode::Grid, None, &Overrides { profile: Some(Profile::Desk), ..flags(5) }).unwrap();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.to_toml().contains("lr_actor = 0.0009"));
    }

    #[test]
    fn short_target_runs_rejected_before_compute() {
        let o = Overrides { profile: Some(Profile::Desk), ..flags(1) };
        let mut cfg = resolve_config(Mode::TrainTarget, None, &o).unwrap();
        cfg.target.episodes = 40;
        let err = run_train_target(&cfg).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn seeds_depend_only_on_master_and_key() {
        let a = derive_seed(1, "cell/TFS/None");
        assert_eq!(a, derive_seed(1, "cell/TFS/None"));
        assert_ne!(a, derive_seed(2, "cell/TFS/None"));
        assert_ne!(a, derive_seed(1, "cell/TFS/OU_AS"));
        assert!(a <= i64::MAX as u64);
    }

    #[test]
    fn cycle_references() {
        assert_eq!(resolve_cycle("builtin:udds", SpeedUnit::Mps).unwrap().len(), 1370);
        assert_eq!(resolve_cycle("builtin:nope", SpeedUnit::Mps).unwrap_err().category(), "config");
        assert_eq!(resolve_cycle("/no/such/file.csv", SpeedUnit::Mps).unwrap_err().category(), "data");
    }

    #[test]
    fn plots_are_sorted_and_list_missing() {
        let dir = tempfile::tempdir().unwrap();
        for (name, c) in [("b", vec![-2.0, -1.0]), ("a", vec![-3.0])] {
            let d = dir.path().join(name);
            fs::create_dir_all(&d).unwrap();
            write_curve(&d.join(CURVE), &c).unwrap();
        }
        let out = dir.path().join("plots");
        let res = emit_plots(
            &[dir.path().join("b"), dir.path().join("a"), dir.path().join("missing")],
            &out,
        )
        .unwrap();
        assert_eq!(res.series, vec!["a", "b"]);
        assert_eq!(res.missing, vec![dir.path().join("missing")]);
        let text = fs::read_to_string(out.join(PLOT_DATA)).unwrap();
        assert_eq!(text, "series,episode,return\na,0,-3\nb,0,-2\nb,1,-1\n");
        assert!(fs::read_to_string(out.join(PLOT_SVG)).unwrap().contains("<polyline"));
    }

    #[test]
    fn curve_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CURVE);
        let c = vec![-1.25, -0.1 - 0.2, 3e-9];
        write_curve(&p, &c).unwrap();
        assert_eq!(read_curve(&p).unwrap(), c);
        write_curve(&p, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "episode,return\n");
    }
}
