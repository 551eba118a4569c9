//! Exploration strategies: Gaussian or Ornstein-Uhlenbeck noise on the
//! action, Gaussian noise on the actor parameters, and their mixture.
//!
//! Parameter noise is drawn once per episode and held fixed, so within an
//! episode the same state always produces the same explored action.
//! Action noise is redrawn every step. All variances are variances, not
//! standard deviations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::net::NetworkParams;

pub const DEFAULT_OU_THETA: f64 = 0.15;
const OU_DT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
#[error("bad noise spec `{0}`")]
pub struct NoiseParseError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionNoise {
    Gaussian,
    Ou,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    None,
    GaussianAction,
    OuAction,
    GaussianParam,
    /// Perturbed actor plus action noise of the given type.
    Mixture(ActionNoise),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma2_action: f64,
    pub sigma2_param: f64,
    pub ou_theta: f64,
    /// Per-episode multiplicative variance decay; 1.0 disables it.
    pub decay: f64,
}

impl NoiseSpec {
    fn with(kind: NoiseKind, sigma2_action: f64, sigma2_param: f64) -> Self {
        Self { kind, sigma2_action, sigma2_param, ou_theta: DEFAULT_OU_THETA, decay: 1.0 }
    }

    pub fn none() -> Self {
        Self::with(NoiseKind::None, 0.0, 0.0)
    }

    pub fn gaussian_action(sigma2: f64) -> Self {
        Self::with(NoiseKind::GaussianAction, sigma2, 0.0)
    }

    pub fn ou_action(sigma2: f64) -> Self {
        Self::with(NoiseKind::OuAction, sigma2, 0.0)
    }

    pub fn gaussian_param(sigma2: f64) -> Self {
        Self::with(NoiseKind::GaussianParam, 0.0, sigma2)
    }

    pub fn mixture(action: ActionNoise, sigma2_action: f64, sigma2_param: f64) -> Self {
        Self::with(NoiseKind::Mixture(action), sigma2_action, sigma2_param)
    }

    /// Most stable source configuration per family: Gaussian action 0.06,
    /// OU action 0.09, Gaussian parameter 0.03, OU & Gaussian mixture
    /// 0.09 & 0.03.
    pub fn family_defaults() -> [NoiseSpec; 4] {
        [
            Self::gaussian_action(0.06),
            Self::ou_action(0.09),
            Self::gaussian_param(0.03),
            Self::mixture(ActionNoise::Ou, 0.09, 0.03),
        ]
    }

    /// The five target-domain exploration settings, in report order.
    pub fn target_grid() -> [NoiseSpec; 5] {
        let [g, ou, p, mix] = Self::family_defaults();
        [Self::none(), g, ou, p, mix]
    }

    /// Every source setting of the variance sweep.
    pub fn source_sweep() -> Vec<NoiseSpec> {
        let mut out: Vec<NoiseSpec> = [0.02, 0.03, 0.04, 0.05, 0.06].into_iter().map(Self::gaussian_action).collect();
        out.extend([0.08, 0.09, 0.10, 0.11, 0.13].into_iter().map(Self::ou_action));
        out.extend([0.03, 0.04].into_iter().map(Self::gaussian_param));
        out.push(Self::mixture(ActionNoise::Gaussian, 0.06, 0.03));
        out.push(Self::mixture(ActionNoise::Ou, 0.09, 0.03));
        out
    }

    pub fn validate(&self) -> Result<(), NoiseParseError> {
        let ok = self.sigma2_action >= 0.0
            && self.sigma2_param >= 0.0
            && self.ou_theta >= 0.0
            && self.decay > 0.0
            && self.decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(NoiseParseError(self.to_string()))
        }
    }

    /// Row label used in reports.
    pub fn label(&self) -> &'static str {
        match self.kind {
            NoiseKind::None => "None",
            NoiseKind::GaussianAction => "Gaussian_AS",
            NoiseKind::OuAction => "OU_AS",
            NoiseKind::GaussianParam => "Gaussian_PS",
            NoiseKind::Mixture(_) => "APS",
        }
    }

    pub fn action_noise(&self) -> Option<ActionNoise> {
        match self.kind {
            NoiseKind::GaussianAction => Some(ActionNoise::Gaussian),
            NoiseKind::OuAction => Some(ActionNoise::Ou),
            NoiseKind::Mixture(a) => Some(a),
            NoiseKind::None | NoiseKind::GaussianParam => None,
        }
    }

    pub fn uses_param_noise(&self) -> bool {
        matches!(self.kind, NoiseKind::GaussianParam | NoiseKind::Mixture(_))
    }

    pub fn is_decayed(&self) -> bool {
        self.decay != 1.0
    }

    fn decay_factor(&self, episode: usize) -> f64 {
        if self.decay == 1.0 {
            1.0
        } else {
            self.decay.powi(episode as i32)
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::None => return f.write_str("None"),
            NoiseKind::GaussianAction | NoiseKind::OuAction => write!(f, "{}({}", self.label(), self.sigma2_action)?,
            NoiseKind::GaussianParam => write!(f, "Gaussian_PS({}", self.sigma2_param)?,
            NoiseKind::Mixture(a) => {
                let tag = match a {
                    ActionNoise::Gaussian => "Gaussian",
                    ActionNoise::Ou => "OU",
                };
                write!(f, "APS({tag}:{}&{}", self.sigma2_action, self.sigma2_param)?
            }
        }
        if self.ou_theta != DEFAULT_OU_THETA {
            write!(f, ";theta={}", self.ou_theta)?;
        }
        if self.decay != 1.0 {
            write!(f, ";decay={}", self.decay)?;
        }
        f.write_str(")")
    }
}

/// Accepts the `Display` form, bare labels (family defaults) and
/// `none`/`TFS`.
impl FromStr for NoiseSpec {
    type Err = NoiseParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NoiseParseError(s.to_string());
        let s = s.trim();
        let (label, args) = match s.split_once('(') {
            Some((l, rest)) => (l, Some(rest.strip_suffix(')').ok_or_else(bad)?)),
            None => (s, None),
        };
        let [g, ou, p, mix] = Self::family_defaults();
        let mut spec = match label.to_ascii_lowercase().as_str() {
            "none" | "tfs" => return if args.is_none() { Ok(Self::none()) } else { Err(bad()) },
            "gaussian_as" => g,
            "ou_as" => ou,
            "gaussian_ps" => p,
            "aps" => mix,
            _ => return Err(bad()),
        };
        let Some(args) = args else { return Ok(spec) };
        let mut parts = args.split(';');
        let values = parts.next().ok_or_else(bad)?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        match spec.kind {
            NoiseKind::GaussianAction | NoiseKind::OuAction => spec.sigma2_action = num(values)?,
            NoiseKind::GaussianParam => spec.sigma2_param = num(values)?,
            NoiseKind::Mixture(_) => {
                let (tag, vals) = values.split_once(':').ok_or_else(bad)?;
                let action = match tag.trim().to_ascii_lowercase().as_str() {
                    "gaussian" => ActionNoise::Gaussian,
                    "ou" => ActionNoise::Ou,
                    _ => return Err(bad()),
                };
                let (a, p) = vals.split_once('&').ok_or_else(bad)?;
                spec.kind = NoiseKind::Mixture(action);
                spec.sigma2_action = num(a)?;
                spec.sigma2_param = num(p)?;
            }
            NoiseKind::None => unreachable!(),
        }
        for opt in parts {
            let (k, v) = opt.split_once('=').ok_or_else(bad)?;
            match k.trim() {
                "theta" => spec.ou_theta = num(v)?,
                "decay" => spec.decay = num(v)?,
                _ => return Err(bad()),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for NoiseSpec {
    type Error = NoiseParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NoiseSpec> for String {
    fn from(s: NoiseSpec) -> Self {
        s.to_string()
    }
}

/// Per-run exploration state.
#[derive(Clone, Debug, Default)]
pub struct NoiseState {
    pub ou_x: f64,
    pub perturbed: Option<NetworkParams>,
    pub episode: usize,
}

impl NoiseState {
    /// Resets the OU process and, for parameter noise, draws this episode's
    /// perturbed actor.
    pub fn begin_episode<R: Rng + ?Sized>(&mut self, spec: &NoiseSpec, actor: &NetworkParams, episode: usize, rng: &mut R) {
        self.episode = episode;
        self.ou_x = 0.0;
        self.perturbed = spec.uses_param_noise().then(|| perturb_actor(actor, spec, episode, rng));
    }
}

/// One draw of action noise; zero for strategies without action noise.
pub fn sample_action_noise<R: Rng + ?Sized>(spec: &NoiseSpec, state: &mut NoiseState, rng: &mut R) -> f64 {
    let sigma = (spec.sigma2_action * spec.decay_factor(state.episode)).sqrt();
    match spec.action_noise() {
        None => 0.0,
        Some(ActionNoise::Gaussian) => sigma * rng.sample::<f64, _>(StandardNormal),
        Some(ActionNoise::Ou) => {
            let z: f64 = rng.sample(StandardNormal);
            state.ou_x += spec.ou_theta * (0.0 - state.ou_x) * OU_DT + sigma * OU_DT.sqrt() * z;
            state.ou_x
        }
    }
}

/// Copy of `actor` with independent zero-mean Gaussian noise of variance
/// `sigma2_param` added to every parameter.
pub fn perturb_actor<R: Rng + ?Sized>(actor: &NetworkParams, spec: &NoiseSpec, episode: usize, rng: &mut R) -> NetworkParams {
    let sigma = (spec.sigma2_param * spec.decay_factor(episode)).sqrt();
    let mut out = actor.clone();
    for p in out.values_mut() {
        *p += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Explored action for a normalized state, clipped to [-1, 1].
pub fn explore_action<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    state: &mut NoiseState,
    actor: &NetworkParams,
    s: &[f64],
    rng: &mut R,
) -> Action {
    let policy = match (&state.perturbed, spec.uses_param_noise()) {
        (Some(p), true) => p,
        _ => actor,
    };
    let clean = policy.forward_unchecked(s)[0];
    if spec.action_noise().is_none() {
        return Action::new(clean);
    }
    Action::new(clean + sample_action_noise(spec, state, rng))
}
