//! Deep deterministic policy gradient: actor, critic, their target copies,
//! uniform replay and soft target tracking.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycles::DrivingCycle;
use crate::env::{EnvError, HevEnv};
use crate::explore::{explore_action, NoiseSpec, NoiseState};
use crate::net::{actor_specs, critic_specs, Adam, LayerSpec, NetError, NetworkParams};

pub const STATE_DIM: usize = 3;
pub const ACTION_DIM: usize = 1;

/// RNG streams carved out of one run seed.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const REPLAY: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const TRANSFER: u64 = 3;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite parameter in {network} after episode {episode}")]
    NonFinite { network: &'static str, episode: usize },
    #[error("no training cycles given")]
    NoCycles,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub episodes: usize,
    pub replay_capacity: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Transitions required before learning starts; never below the batch size.
    pub warmup: usize,
    /// Hidden widths shared by actor and critic.
    pub hidden: Vec<usize>,
    /// Global-norm gradient clip; 0 disables it.
    pub grad_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::source()
    }
}

impl Hyperparams {
    pub fn source() -> Self {
        Self {
            episodes: 1000,
            replay_capacity: 50_000,
            lr_actor: 0.001,
            lr_critic: 0.01,
            gamma: 0.9,
            tau: 0.01,
            batch_size: 64,
            warmup: 64,
            hidden: vec![64, 32],
            grad_clip: 0.0,
        }
    }

    pub fn target() -> Self {
        Self { episodes: 300, lr_actor: 0.0009, lr_critic: 0.009, ..Self::source() }
    }

    pub fn actor_specs(&self) -> Vec<LayerSpec> {
        actor_specs(STATE_DIM, &self.hidden)
    }

    pub fn critic_specs(&self) -> Vec<LayerSpec> {
        critic_specs(STATE_DIM, ACTION_DIM, &self.hidden)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub s: [f64; STATE_DIM],
    pub a: f64,
    pub r: f64,
    pub s_next: [f64; STATE_DIM],
    pub done: bool,
}

/// Fixed-capacity ring; the oldest transition is overwritten first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Storage slot `i` (not chronological).
    pub fn slot(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// `τ·online + (1 − τ)·target`, element-wise.
pub fn soft_update(online: &NetworkParams, target: &NetworkParams, tau: f64) -> Result<NetworkParams, NetError> {
    let mut out = target.clone();
    soft_update_in_place(online, &mut out, tau)?;
    Ok(out)
}

pub fn soft_update_in_place(online: &NetworkParams, target: &mut NetworkParams, tau: f64) -> Result<(), NetError> {
    if online.specs() != target.specs() {
        return Err(NetError::Shape { expected: online.num_params(), found: target.num_params() });
    }
    for (t, &o) in target.values_mut().zip(online.values()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LearnStats {
    pub performed: bool,
    pub critic_loss: f64,
    pub actor_objective: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: NetworkParams,
    pub critic: NetworkParams,
    pub actor_target: NetworkParams,
    pub critic_target: NetworkParams,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub buffer: ReplayBuffer,
    pub hp: Hyperparams,
    rng: ChaCha8Rng,
}

impl Agent {
    /// Fresh Glorot-initialized agent; all randomness derives from `seed`.
    pub fn new(hp: Hyperparams, seed: u64) -> Result<Self, NetError> {
        let mut init = stream_rng(seed, stream::INIT);
        let actor = NetworkParams::init(&hp.actor_specs(), &mut init)?;
        let critic = NetworkParams::init(&hp.critic_specs(), &mut init)?;
        Self::from_networks(hp, actor, critic, seed)
    }

    /// Agent around given online networks; targets start as exact copies and
    /// optimizer moments at zero.
    pub fn from_networks(hp: Hyperparams, actor: NetworkParams, critic: NetworkParams, seed: u64) -> Result<Self, NetError> {
        if actor.input_dim() != STATE_DIM || actor.output_dim() != ACTION_DIM {
            return Err(NetError::Shape { expected: STATE_DIM, found: actor.input_dim() });
        }
        if critic.input_dim() != STATE_DIM + ACTION_DIM || critic.output_dim() != 1 {
            return Err(NetError::Shape { expected: STATE_DIM + ACTION_DIM, found: critic.input_dim() });
        }
        Ok(Self {
            actor_opt: Adam::new(actor.num_params()),
            critic_opt: Adam::new(critic.num_params()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(hp.replay_capacity),
            hp,
            rng: stream_rng(seed, stream::REPLAY),
        })
    }

    /// Clean policy output for a normalized state.
    pub fn act(&self, s: &[f64; STATE_DIM]) -> f64 {
        self.actor.forward_unchecked(s)[0]
    }

    pub fn q_value(&self, s: &[f64; STATE_DIM], a: f64) -> f64 {
        self.critic.forward_unchecked(&critic_input(s, a))[0]
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn is_finite(&self) -> Result<(), &'static str> {
        for (name, net) in [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("actor target", &self.actor_target),
            ("critic target", &self.critic_target),
        ] {
            if !net.is_finite() {
                return Err(name);
            }
        }
        Ok(())
    }

    /// One critic and one actor update on a uniform mini-batch, then soft
    /// target tracking. A no-op until the buffer holds enough transitions.
    pub fn learn_step(&mut self) -> LearnStats {
        let needed = self.hp.batch_size.max(self.hp.warmup);
        if self.hp.batch_size == 0 || self.buffer.len() < needed {
            return LearnStats::default();
        }
        let idx = self.buffer.sample_indices(&mut self.rng, self.hp.batch_size);
        let batch: Vec<Transition> = idx.iter().map(|&i| *self.buffer.slot(i)).collect();
        let targets = self.td_targets(&batch);
        let n = batch.len();
        let inv_n = 1.0 / n as f64;

        let mut x = Vec::with_capacity(n * (STATE_DIM + ACTION_DIM));
        for t in &batch {
            x.extend_from_slice(&critic_input(&t.s, t.a));
        }
        let trace = self.critic.trace_batch_unchecked(&x, n);
        let mut critic_loss = 0.0;
        let grad_q: Vec<f64> = trace
            .output()
            .iter()
            .zip(&targets)
            .map(|(&q, &y)| {
                let err = y - q;
                critic_loss += err * err;
                -2.0 * err * inv_n
            })
            .collect();
        let mut critic_grads = self.critic.zeros_like();
        self.critic.accumulate_backward_batch(&trace, &grad_q, Some(&mut critic_grads));
        clip_global_norm(&mut critic_grads, self.hp.grad_clip);
        self.critic_opt.step(&mut self.critic, &critic_grads, self.hp.lr_critic);

        let states: Vec<f64> = batch.iter().flat_map(|t| t.s).collect();
        let a_trace = self.actor.trace_batch_unchecked(&states, n);
        x.clear();
        for (t, &a) in batch.iter().zip(a_trace.output()) {
            x.extend_from_slice(&critic_input(&t.s, a));
        }
        let c_trace = self.critic.trace_batch_unchecked(&x, n);
        let objective: f64 = c_trace.output().iter().sum();
        // ascend Q: descend −Q / n
        let grad_in = self.critic.accumulate_backward_batch(&c_trace, &vec![-inv_n; n], None);
        let grad_a: Vec<f64> = grad_in.chunks_exact(STATE_DIM + ACTION_DIM).map(|g| g[STATE_DIM]).collect();
        let mut actor_grads = self.actor.zeros_like();
        self.actor.accumulate_backward_batch(&a_trace, &grad_a, Some(&mut actor_grads));
        clip_global_norm(&mut actor_grads, self.hp.grad_clip);
        self.actor_opt.step(&mut self.actor, &actor_grads, self.hp.lr_actor);

        soft_update_in_place(&self.actor, &mut self.actor_target, self.hp.tau).expect("target shapes match");
        soft_update_in_place(&self.critic, &mut self.critic_target, self.hp.tau).expect("target shapes match");

        LearnStats { performed: true, critic_loss: critic_loss * inv_n, actor_objective: objective * inv_n }
    }

    /// `y = r + γ (1 − done) Q'(s', μ'(s'))` for each transition.
    pub fn td_targets(&self, batch: &[Transition]) -> Vec<f64> {
        if self.hp.gamma == 0.0 {
            return batch.iter().map(|t| t.r).collect();
        }
        let n = batch.len();
        let next: Vec<f64> = batch.iter().flat_map(|t| t.s_next).collect();
        let a_next = self.actor_target.trace_batch_unchecked(&next, n);
        let mut x = Vec::with_capacity(n * (STATE_DIM + ACTION_DIM));
        for (t, &a) in batch.iter().zip(a_next.output()) {
            x.extend_from_slice(&critic_input(&t.s_next, a));
        }
        let q_next = self.critic_target.trace_batch_unchecked(&x, n);
        batch
            .iter()
            .zip(q_next.output())
            .map(|(t, &q)| if t.done { t.r } else { t.r + self.hp.gamma * q })
            .collect()
    }

    /// Mean squared TD error of the online critic on `batch`.
    pub fn critic_loss(&self, batch: &[Transition]) -> f64 {
        let targets = self.td_targets(batch);
        let sum: f64 = batch
            .iter()
            .zip(&targets)
            .map(|(t, y)| {
                let e = y - self.q_value(&t.s, t.a);
                e * e
            })
            .sum();
        sum / batch.len() as f64
    }
}

pub fn critic_input(s: &[f64; STATE_DIM], a: f64) -> [f64; STATE_DIM + ACTION_DIM] {
    [s[0], s[1], s[2], a]
}

fn clip_global_norm(grads: &mut NetworkParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.values().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    /// Undiscounted return of each episode, in order.
    pub returns: Vec<f64>,
}

/// Standard DDPG loop over `episodes` episodes, visiting `cycles`
/// round-robin. Exploration randomness comes from `rng`.
pub fn train<R: Rng + ?Sized>(
    agent: &mut Agent,
    env: &mut HevEnv,
    cycles: &[Arc<DrivingCycle>],
    noise: &NoiseSpec,
    episodes: usize,
    rng: &mut R,
) -> Result<TrainOutcome, TrainError> {
    train_observed(agent, env, cycles, noise, episodes, rng, |_, _| {})
}

/// As [`train`], calling `observe(episode, return)` after every episode.
pub fn train_observed<R: Rng + ?Sized, F: FnMut(usize, f64)>(
    agent: &mut Agent,
    env: &mut HevEnv,
    cycles: &[Arc<DrivingCycle>],
    noise: &NoiseSpec,
    episodes: usize,
    rng: &mut R,
    mut observe: F,
) -> Result<TrainOutcome, TrainError> {
    if cycles.is_empty() {
        return Err(TrainError::NoCycles);
    }
    let mut noise_state = NoiseState::default();
    let mut returns = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        env.set_cycle(Arc::clone(&cycles[episode % cycles.len()]))?;
        let mut state = env.reset();
        noise_state.begin_episode(noise, &agent.actor, episode, rng);
        let mut total = 0.0;
        loop {
            let s = state.normalized();
            let action = explore_action(noise, &mut noise_state, &agent.actor, &s, rng);
            let step = env.step(action)?;
            total += step.reward;
            agent.remember(Transition {
                s,
                a: action.value(),
                r: step.reward,
                s_next: step.state.normalized(),
                done: step.done,
            });
            agent.learn_step();
            state = step.state;
            if step.done {
                break;
            }
        }
        if let Err(network) = agent.is_finite() {
            return Err(TrainError::NonFinite { network, episode });
        }
        observe(episode, total);
        returns.push(total);
    }
    Ok(TrainOutcome { returns })
}
