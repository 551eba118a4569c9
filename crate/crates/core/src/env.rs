//! Episodic MDP over one pass of a driving cycle.
//!
//! State is `(soc, v, acc)`, the action is a normalized engine power command
//! `u ∈ [-1, 1]`, and the per-step reward penalizes fuel plus equivalent
//! electricity use and deviation of SoC from its reference.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycles::DrivingCycle;
use crate::powertrain::{step_powertrain, BatteryState, Powertrain, StepResult};

/// Fixed input scales shared by every cycle, so source and target domains
/// present the same input distribution to the networks.
pub const SPEED_SCALE: f64 = 40.0;
pub const ACC_SCALE: f64 = 3.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("cycle `{0}` needs at least two samples")]
    TooShort(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub soc: f64,
    pub v: f64,
    pub acc: f64,
}

impl State {
    /// Network input: soc mapped to [-1, 1], speed and acceleration scaled
    /// by fixed constants.
    pub fn normalized(&self) -> [f64; 3] {
        [2.0 * self.soc - 1.0, self.v / SPEED_SCALE, self.acc / ACC_SCALE]
    }
}

/// Normalized engine power command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action(f64);

impl Action {
    /// Clips into [-1, 1]; NaN maps to engine off.
    pub fn new(u: f64) -> Self {
        Self(if u.is_nan() { -1.0 } else { u.clamp(-1.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn engine_power(self, max_power: f64) -> f64 {
        0.5 * (self.0 + 1.0) * max_power
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub exponent: i32,
    pub soc_ref: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 350.0, exponent: 2, soc_ref: 0.6 }
    }
}

impl RewardParams {
    pub fn consumption_penalty(&self, fuel_g: f64, elec_g: f64) -> f64 {
        self.alpha * (fuel_g + elec_g)
    }

    pub fn soc_penalty(&self, soc: f64) -> f64 {
        self.beta * (self.soc_ref - soc).powi(self.exponent)
    }

    pub fn reward(&self, fuel_g: f64, elec_g: f64, soc: f64) -> f64 {
        -(self.consumption_penalty(fuel_g, elec_g) + self.soc_penalty(soc))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: State,
    pub reward: f64,
    pub done: bool,
    pub info: StepResult,
}

/// One environment instance; use from a single thread at a time.
#[derive(Clone, Debug)]
pub struct HevEnv {
    cycle: Arc<DrivingCycle>,
    powertrain: Arc<Powertrain>,
    reward: RewardParams,
    clock: usize,
    battery: BatteryState,
    done: bool,
}

impl HevEnv {
    pub fn new(cycle: Arc<DrivingCycle>, powertrain: Arc<Powertrain>, reward: RewardParams) -> Result<Self, EnvError> {
        if cycle.len() < 2 {
            return Err(EnvError::TooShort(cycle.name().to_string()));
        }
        let soc = reward.soc_ref;
        Ok(Self { cycle, powertrain, reward, clock: 0, battery: BatteryState::new(soc), done: false })
    }

    pub fn cycle(&self) -> &DrivingCycle {
        &self.cycle
    }

    pub fn powertrain(&self) -> &Powertrain {
        &self.powertrain
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    /// Swaps the driving cycle; takes effect at the next `reset`.
    pub fn set_cycle(&mut self, cycle: Arc<DrivingCycle>) -> Result<(), EnvError> {
        if cycle.len() < 2 {
            return Err(EnvError::TooShort(cycle.name().to_string()));
        }
        self.cycle = cycle;
        self.done = true;
        Ok(())
    }

    /// Number of steps in one episode.
    pub fn episode_len(&self) -> usize {
        self.cycle.len() - 1
    }

    pub fn reset(&mut self) -> State {
        self.clock = 0;
        self.battery = BatteryState::new(self.reward.soc_ref);
        self.done = false;
        self.state()
    }

    pub fn state(&self) -> State {
        let s = self.cycle.samples()[self.clock];
        State { soc: self.battery.soc, v: s.v, acc: s.acc }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: Action) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let sample = self.cycle.samples()[self.clock];
        let p_eng = action.engine_power(self.powertrain.vehicle.engine_max_power);
        let info = step_powertrain(&self.powertrain, self.battery, sample.v, sample.acc, p_eng, self.cycle.dt());
        self.battery = BatteryState { soc: info.soc, saturated: info.saturated };
        self.clock += 1;
        self.done = self.clock + 1 >= self.cycle.len();
        let reward = self.reward.reward(info.fuel_g, info.elec_g, info.soc);
        Ok(Step { state: self.state(), reward, done: self.done, info })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub state: State,
    pub action: f64,
    pub reward: f64,
    pub fuel_g: f64,
    pub elec_g: f64,
    pub soc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
    pub total_return: f64,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_fuel_g(&self) -> f64 {
        self.records.iter().map(|r| r.fuel_g).sum()
    }

    /// `step,soc,v,acc,u,reward,fuel_g,elec_g`, `soc` being the post-step value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,soc,v,acc,u,reward,fuel_g,elec_g")?;
        for (k, r) in self.records.iter().enumerate() {
            writeln!(
                out,
                "{k},{},{},{},{},{},{},{}",
                r.soc, r.state.v, r.state.acc, r.action, r.reward, r.fuel_g, r.elec_g
            )?;
        }
        Ok(())
    }
}

/// Runs one full episode from reset under `policy`.
pub fn rollout<P: FnMut(&State) -> Action>(env: &mut HevEnv, mut policy: P) -> EpisodeLog {
    let mut state = env.reset();
    let mut log = EpisodeLog { records: Vec::with_capacity(env.episode_len()), total_return: 0.0 };
    loop {
        let action = policy(&state);
        let step = env.step(action).expect("episode not finished");
        log.total_return += step.reward;
        log.records.push(StepRecord {
            state,
            action: action.value(),
            reward: step.reward,
            fuel_g: step.info.fuel_g,
            elec_g: step.info.elec_g,
            soc: step.info.soc,
        });
        state = step.state;
        if step.done {
            return log;
        }
    }
}
