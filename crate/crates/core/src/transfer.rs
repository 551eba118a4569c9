//! Checkpoints, transfer initialization and adaptation metrics.
//!
//! # Checkpoint layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes   "EMSCKPT\0"
//! version    u32       1
//! arch       u32 len + UTF-8   "actor=3x64:relu,64x32:relu,32x1:tanh\ncritic=…\n"
//! networks   4 × (u64 count + count × f64)   actor, critic, actor target, critic target
//! metadata   u32 len + UTF-8   key=value lines
//! trailer    8 bytes   "EMSCKEND"
//! ```
//!
//! Parameters are written in flatten order and read back bit-exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::ddpg::{Agent, Hyperparams};
use crate::net::{validate_specs, LayerSpec, NetError, NetworkParams};

const MAGIC: &[u8; 8] = b"EMSCKPT\0";
const TRAILER: &[u8; 8] = b"EMSCKEND";
pub const FORMAT_VERSION: u32 = 1;

const NETWORK_NAMES: [&str; 4] = ["actor", "critic", "actor_target", "critic_target"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed {field}: {reason}")]
    Malformed { field: &'static str, reason: String },
    #[error("{network}: expected {expected} parameters, file holds {found}")]
    ShapeMismatch { network: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("{network} layer {layer}: source {source_spec} vs target {target_spec}")]
    LayerMismatch { network: &'static str, layer: usize, source_spec: String, target_spec: String },
    #[error("{network}: source has {source_layers} layers, target {target_layers}")]
    DepthMismatch { network: &'static str, source_layers: usize, target_layers: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("curve has {len} episodes, metric needs {needed}")]
    ShortCurve { len: usize, needed: usize },
    #[error("empty interval [{start}, {end})")]
    EmptyInterval { start: usize, end: usize },
}

/// Where the checkpointed networks came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub noise: String,
    pub source_cycles: Vec<String>,
    pub seed: u64,
    pub episodes: usize,
    /// Free-form extras, written verbatim.
    pub extra: BTreeMap<String, String>,
}

impl Provenance {
    fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("noise={}\n", self.noise));
        out.push_str(&format!("source_cycles={}\n", self.source_cycles.join(",")));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("episodes={}\n", self.episodes));
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let bad = |reason: String| CheckpointError::Malformed { field: "metadata", reason };
        let mut p = Provenance::default();
        let mut seen = [false; 4];
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line `{line}` is not key=value")))?;
            match k {
                "noise" => {
                    p.noise = v.to_string();
                    seen[0] = true;
                }
                "source_cycles" => {
                    p.source_cycles = v.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
                    seen[1] = true;
                }
                "seed" => {
                    p.seed = v.parse().map_err(|_| bad(format!("seed `{v}`")))?;
                    seen[2] = true;
                }
                "episodes" => {
                    p.episodes = v.parse().map_err(|_| bad(format!("episodes `{v}`")))?;
                    seen[3] = true;
                }
                _ => {
                    p.extra.insert(k.to_string(), v.to_string());
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(bad(format!("missing key `{}`", ["noise", "source_cycles", "seed", "episodes"][i])));
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub actor: NetworkParams,
    pub critic: NetworkParams,
    pub actor_target: NetworkParams,
    pub critic_target: NetworkParams,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, provenance: Provenance) -> Self {
        Self {
            version: FORMAT_VERSION,
            actor: agent.actor.clone(),
            critic: agent.critic.clone(),
            actor_target: agent.actor_target.clone(),
            critic_target: agent.critic_target.clone(),
            provenance,
        }
    }

    pub fn actor_specs(&self) -> Vec<LayerSpec> {
        self.actor.specs()
    }

    pub fn critic_specs(&self) -> Vec<LayerSpec> {
        self.critic.specs()
    }

    fn networks(&self) -> [&NetworkParams; 4] {
        [&self.actor, &self.critic, &self.actor_target, &self.critic_target]
    }

    pub fn total_params(&self) -> usize {
        self.networks().iter().map(|n| n.num_params()).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let arch = format!("actor={}\ncritic={}\n", join_specs(&self.actor_specs()), join_specs(&self.critic_specs()));
        write_text(&mut w, &arch)?;
        for net in self.networks() {
            w.write_all(&(net.num_params() as u64).to_le_bytes())?;
            for v in net.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        write_text(&mut w, &self.provenance.to_text())?;
        w.write_all(TRAILER)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let arch = read_text(&mut r, "architecture")?;
        let (actor_specs, critic_specs) = parse_arch(&arch)?;
        let mut nets = Vec::with_capacity(4);
        for (k, name) in NETWORK_NAMES.iter().enumerate() {
            let specs = if k % 2 == 0 { &actor_specs } else { &critic_specs };
            let expected = crate::net::parameter_count(specs);
            let count = read_u64(&mut r, name)? as usize;
            if count != expected {
                return Err(CheckpointError::ShapeMismatch { network: name, expected, found: count });
            }
            let mut bytes = vec![0u8; count * 8];
            read_exact(&mut r, &mut bytes, name)?;
            let flat: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            nets.push(NetworkParams::unflatten(specs, &flat).map_err(|e| CheckpointError::Malformed {
                field: name,
                reason: e.to_string(),
            })?);
        }
        let provenance = Provenance::from_text(&read_text(&mut r, "metadata")?)?;
        let mut trailer = [0u8; 8];
        read_exact(&mut r, &mut trailer, "trailer")?;
        if &trailer != TRAILER {
            return Err(CheckpointError::Malformed { field: "trailer", reason: "bad end marker".into() });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Malformed { field: "trailer", reason: "trailing bytes after end marker".into() });
        }
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("four networks read");
        Ok(Self { version, actor: next(), critic: next(), actor_target: next(), critic_target: next(), provenance })
    }
}

fn join_specs(specs: &[LayerSpec]) -> String {
    specs.iter().map(LayerSpec::to_string).collect::<Vec<_>>().join(",")
}

fn parse_arch(text: &str) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>), CheckpointError> {
    let bad = |reason: String| CheckpointError::Malformed { field: "architecture", reason };
    let mut actor = None;
    let mut critic = None;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line `{line}`")))?;
        let specs: Vec<LayerSpec> = v
            .split(',')
            .map(|s| s.parse::<LayerSpec>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        validate_specs(&specs).map_err(|e| bad(e.to_string()))?;
        match k {
            "actor" => actor = Some(specs),
            "critic" => critic = Some(specs),
            _ => return Err(bad(format!("unknown network `{k}`"))),
        }
    }
    Ok((actor.ok_or_else(|| bad("missing actor".into()))?, critic.ok_or_else(|| bad("missing critic".into()))?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated(field),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, field: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, field)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, field: &'static str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    Ok(u64::from_le_bytes(b))
}

fn write_text<W: Write>(w: &mut W, text: &str) -> std::io::Result<()> {
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())
}

fn read_text<R: Read>(r: &mut R, field: &'static str) -> Result<String, CheckpointError> {
    let len = read_u32(r, field)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Malformed { field, reason: format!("implausible length {len}") });
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, field)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Malformed { field, reason: "not UTF-8".into() })
}

pub fn save_checkpoint(agent: &Agent, meta: Provenance, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    Checkpoint::from_agent(agent, meta).write_to(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    Checkpoint::read_from(bytes.as_slice())
}

/// Which networks get a fresh output layer on transfer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReinitScope {
    /// Actor and critic output layers are both re-drawn.
    #[default]
    Both,
    /// Only the actor's output layer is re-drawn; the critic is copied whole.
    ActorOnly,
}

/// Builds a target-domain agent: every layer but the last copied from the
/// source, the last freshly Glorot-initialized. Targets equal the new online
/// networks and optimizer moments start at zero.
pub fn transfer_init<R: Rng + ?Sized>(
    source: &Checkpoint,
    hp: Hyperparams,
    scope: ReinitScope,
    seed: u64,
    rng: &mut R,
) -> Result<Agent, TransferError> {
    let actor_specs = hp.actor_specs();
    let critic_specs = hp.critic_specs();
    let actor = transfer_network("actor", &source.actor, &actor_specs, true, rng)?;
    let critic = transfer_network("critic", &source.critic, &critic_specs, scope == ReinitScope::Both, rng)?;
    Ok(Agent::from_networks(hp, actor, critic, seed)?)
}

fn transfer_network<R: Rng + ?Sized>(
    network: &'static str,
    source: &NetworkParams,
    target_specs: &[LayerSpec],
    reinit_last: bool,
    rng: &mut R,
) -> Result<NetworkParams, TransferError> {
    validate_specs(target_specs)?;
    let src = source.specs();
    if src.len() != target_specs.len() {
        return Err(TransferError::DepthMismatch { network, source_layers: src.len(), target_layers: target_specs.len() });
    }
    let last = target_specs.len() - 1;
    let check_upto = if reinit_last { last } else { last + 1 };
    for (k, (a, b)) in src.iter().zip(target_specs).enumerate().take(check_upto) {
        if a != b {
            return Err(TransferError::LayerMismatch {
                network,
                layer: k,
                source_spec: a.to_string(),
                target_spec: b.to_string(),
            });
        }
    }
    let mut layers = source.layers().to_vec();
    if reinit_last {
        layers[last] = crate::net::Dense::glorot(target_specs[last], rng);
    }
    Ok(NetworkParams::from_layers(layers)?)
}

/// Episode windows and convergence detector settings.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub jp_window: usize,
    pub ap_start: usize,
    pub ap_end: usize,
    pub tt_window: usize,
    pub tt_rel_tol: f64,
    pub tt_abs_tol: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { jp_window: 50, ap_start: 50, ap_end: 300, tt_window: 10, tt_rel_tol: 0.05, tt_abs_tol: 0.05 }
    }
}

impl MetricConfig {
    pub fn desk() -> Self {
        Self { jp_window: 10, ap_start: 10, ap_end: 80, ..Self::default() }
    }
}

/// Mean of the first `window` returns.
pub fn jumpstart(curve: &[f64], window: usize) -> Result<f64, MetricError> {
    if window == 0 {
        return Err(MetricError::EmptyInterval { start: 0, end: 0 });
    }
    if curve.len() < window {
        return Err(MetricError::ShortCurve { len: curve.len(), needed: window });
    }
    Ok(mean(&curve[..window]))
}

/// Mean over episodes `[start, end)`.
pub fn asymptotic(curve: &[f64], start: usize, end: usize) -> Result<f64, MetricError> {
    if start >= end {
        return Err(MetricError::EmptyInterval { start, end });
    }
    if curve.len() < end {
        return Err(MetricError::ShortCurve { len: curve.len(), needed: end });
    }
    Ok(mean(&curve[start..end]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeToThreshold {
    Episode(usize),
    NotConverged,
}

impl TimeToThreshold {
    pub fn episode(self) -> Option<usize> {
        match self {
            TimeToThreshold::Episode(k) => Some(k),
            TimeToThreshold::NotConverged => None,
        }
    }
}

impl fmt::Display for TimeToThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeToThreshold::Episode(k) => write!(f, "{k}"),
            TimeToThreshold::NotConverged => f.write_str("NC"),
        }
    }
}

/// Smallest episode `k` such that every rolling-window mean starting at or
/// after `k` lies within the band around the asymptotic value. The band is
/// `tt_rel_tol·|AP|`, or `tt_abs_tol` when `|AP| < 1`.
pub fn time_to_threshold(curve: &[f64], cfg: &MetricConfig) -> Result<TimeToThreshold, MetricError> {
    let needed = (2 * cfg.tt_window).max(20);
    if curve.len() < needed {
        return Err(MetricError::ShortCurve { len: curve.len(), needed });
    }
    let ap = asymptotic(curve, cfg.ap_start, cfg.ap_end.min(curve.len()))?;
    let band = if ap.abs() < 1.0 { cfg.tt_abs_tol } else { cfg.tt_rel_tol * ap.abs() };
    let w = cfg.tt_window;
    let mut sum: f64 = curve[curve.len() - w..].iter().sum();
    let mut tt = TimeToThreshold::NotConverged;
    // scan window starts from the back; stop at the first window out of band
    let mut start = curve.len() - w;
    loop {
        if (sum / w as f64 - ap).abs() > band {
            break;
        }
        tt = TimeToThreshold::Episode(start);
        if start == 0 {
            break;
        }
        start -= 1;
        sum += curve[start] - curve[start + w];
    }
    Ok(tt)
}

/// One row of the adaptation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationReport {
    pub jumpstart: f64,
    pub asymptotic: f64,
    pub time_to_threshold: TimeToThreshold,
    pub curve: Vec<f64>,
}

pub fn build_report(curve: &[f64], cfg: &MetricConfig) -> Result<AdaptationReport, MetricError> {
    let needed = cfg.ap_end.max(cfg.jp_window);
    if curve.len() < needed {
        return Err(MetricError::ShortCurve { len: curve.len(), needed });
    }
    Ok(AdaptationReport {
        jumpstart: jumpstart(curve, cfg.jp_window)?,
        asymptotic: asymptotic(curve, cfg.ap_start, cfg.ap_end)?,
        time_to_threshold: time_to_threshold(curve, cfg)?,
        curve: curve.to_vec(),
    })
}

pub const REPORT_HEADER: &str = "target_noise,source_init,jp,ap,tt";

impl AdaptationReport {
    /// `target_noise,source_init,jp,ap,tt`
    pub fn csv_row(&self, target_noise: &str, source_init: &str) -> String {
        format!("{target_noise},{source_init},{},{},{}", self.jumpstart, self.asymptotic, self.time_to_threshold)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
