//! Clarification policies: a dueling double-Q learner with experience
//! replay and a periodically copied target network, and the execute-only
//! baseline.
//!
//! The learner works against the [`Environment`] trait so that it can be
//! checked on small tabular MDPs as well as on the dialog environment.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialog_env::{self, Action, DialogEnv, StateEncoder};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Network input before embedding lookup. Each categorical entry is
/// `(table, id)`; `None` ids embed to zeros (padding).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub categorical: Vec<(usize, Option<usize>)>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub reward: f64,
    pub done: bool,
    /// Whether a finished episode reached its goal, when the notion exists.
    pub success: Option<bool>,
}

pub trait Environment {
    type Episode;

    fn n_actions(&self) -> usize;
    /// Vocabulary size of every embedding table.
    fn embedding_tables(&self) -> Vec<usize>;
    fn reset(&self, rng: &mut Stream) -> Result<Self::Episode>;
    fn observe(&self, episode: &Self::Episode) -> Observation;
    fn step(&self, episode: &mut Self::Episode, action: usize, rng: &mut Stream) -> Result<StepInfo>;
}

impl Environment for DialogEnv {
    type Episode = dialog_env::Episode;

    fn n_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn embedding_tables(&self) -> Vec<usize> {
        let c = &self.config.catalog;
        vec![c.intents.len() + 1, c.slots.len() + 1]
    }

    fn reset(&self, rng: &mut Stream) -> Result<Self::Episode> {
        DialogEnv::reset(self, rng)
    }

    fn observe(&self, episode: &Self::Episode) -> Observation {
        let enc = StateEncoder {
            window: self.config.window,
            embedding_size: 0,
        };
        let e = enc.encode(&episode.history, &self.config.catalog);
        let mut categorical = Vec::with_capacity(2 * enc.window);
        for (i, s) in e.intent_ids.iter().zip(&e.slot_ids) {
            categorical.push((0, *i));
            categorical.push((1, *s));
        }
        Observation {
            categorical,
            numeric: e.numeric,
        }
    }

    fn step(&self, episode: &mut Self::Episode, action: usize, rng: &mut Stream) -> Result<StepInfo> {
        let out = DialogEnv::step(self, episode, Action::from_index(action)?, rng)?;
        Ok(StepInfo {
            reward: out.reward,
            done: out.done,
            success: out.done.then(|| out.next_state.matches(&episode.goal)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
pub fn epsilon_at(schedule: &EpsilonSchedule, step: u64) -> f64 {
    if step >= schedule.decay_steps {
        return schedule.end;
    }
    let t = step as f64 / schedule.decay_steps as f64;
    schedule.start + (schedule.end - schedule.start) * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden_layers: usize,
    pub hidden_nodes: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub replay_size: usize,
    pub embedding_size: usize,
    pub target_update_interval: u64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub batch_size: usize,
    /// Transitions collected before the first gradient step.
    pub warmup_steps: u64,
    pub optimizer: Optimizer,
    /// Episodes longer than this are cut off (and bootstrapped).
    pub max_episode_steps: usize,
}

impl PolicyConfig {
    /// Full-scale settings: 150k steps, evaluation every 10k.
    pub fn full() -> Self {
        Self {
            hidden_layers: 2,
            hidden_nodes: 128,
            learning_rate: 1e-4,
            dropout: 0.5,
            replay_size: 15_000,
            embedding_size: 20,
            target_update_interval: 9_000,
            gamma: 0.97,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.1,
                decay_steps: 100_000,
            },
            total_steps: 150_000,
            eval_every: 10_000,
            eval_episodes: 100,
            batch_size: 32,
            warmup_steps: 1_000,
            optimizer: Optimizer::Adam,
            max_episode_steps: 50,
        }
    }

    /// A 30k-step run that fits a laptop budget.
    pub fn desk() -> Self {
        Self {
            learning_rate: 5e-4,
            dropout: 0.1,
            target_update_interval: 1_000,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.1,
                decay_steps: 15_000,
            },
            total_steps: 30_000,
            eval_every: 2_000,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.epsilon;
        let ok = self.hidden_nodes > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.replay_size > 0
            && self.embedding_size > 0
            && self.target_update_interval > 0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&e.start)
            && (0.0..=1.0).contains(&e.end)
            && e.start >= e.end
            && self.eval_every > 0
            && self.batch_size > 0
            && self.max_episode_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid policy configuration".into()))
        }
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut Stream) -> Self {
        let bound = (6.0 / n_in.max(1) as f64).sqrt();
        Self {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
            b: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| self.b[o] + self.w[o * self.n_in..(o + 1) * self.n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for (o, d) in dz.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            grad.b[o] += d;
            let row = o * self.n_in;
            for i in 0..self.n_in {
                grad.w[row + i] += d * x[i];
                dx[i] += d * self.w[row + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    pub w: Vec<f64>,
}

/// MLP trunk with ReLU and dropout, then value and advantage heads combined
/// as `Q = V + A − mean(A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub embeddings: Vec<Embedding>,
    pub trunk: Vec<Dense>,
    pub value: Dense,
    pub advantage: Dense,
    pub dropout: f64,
}

struct Cache {
    input: Vec<f64>,
    /// Input of every trunk layer plus the trunk output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    advantages: Vec<f64>,
}

impl QNetwork {
    pub fn new(
        tables: &[usize],
        n_categorical: usize,
        n_numeric: usize,
        n_actions: usize,
        cfg: &PolicyConfig,
        rng: &mut Stream,
    ) -> Self {
        let embeddings = tables
            .iter()
            .map(|&vocab| Embedding {
                vocab,
                dim: cfg.embedding_size,
                w: (0..vocab * cfg.embedding_size).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
            .collect();
        let mut n_in = n_categorical * cfg.embedding_size + n_numeric;
        let mut trunk = Vec::with_capacity(cfg.hidden_layers);
        for _ in 0..cfg.hidden_layers {
            trunk.push(Dense::new(n_in, cfg.hidden_nodes, rng));
            n_in = cfg.hidden_nodes;
        }
        Self {
            embeddings,
            trunk,
            value: Dense::new(n_in, 1, rng),
            advantage: Dense::new(n_in, n_actions, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.advantage.n_out
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().unwrap_or(&self.value).n_in
    }

    /// Embedding lookups followed by the numeric features.
    pub fn embed(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.input_dim());
        for &(table, id) in &obs.categorical {
            let e = self
                .embeddings
                .get(table)
                .ok_or_else(|| Error::Domain(format!("no embedding table {table}")))?;
            match id {
                Some(i) if i < e.vocab => x.extend_from_slice(&e.w[i * e.dim..(i + 1) * e.dim]),
                Some(i) => return Err(Error::Domain(format!("id {i} outside table {table}"))),
                None => x.extend(std::iter::repeat_n(0.0, e.dim)),
            }
        }
        x.extend_from_slice(&obs.numeric);
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!("observation has {} inputs, network expects {}", x.len(), self.input_dim())));
        }
        Ok(x)
    }

    fn forward_cached(&self, obs: &Observation, dropout_rng: Option<&mut Stream>) -> Result<(Vec<f64>, Cache)> {
        let input = self.embed(obs)?;
        let mut acts = vec![input.clone()];
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut masks = Vec::with_capacity(self.trunk.len());
        let mut rng = dropout_rng;
        let keep = 1.0 - self.dropout;
        for layer in &self.trunk {
            let z = layer.forward(acts.last().expect("input present"));
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => (0..z.len()).map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect(),
                _ => vec![1.0; z.len()],
            };
            let a = z.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
            pre.push(z);
            masks.push(mask);
            acts.push(a);
        }
        let h = acts.last().expect("trunk output");
        let v = self.value.forward(h)[0];
        let advantages = self.advantage.forward(h);
        let q = dueling(v, &advantages);
        Ok((q, Cache { input, acts, pre, masks, advantages }))
    }

    /// Q-values with dropout disabled.
    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.forward_cached(obs, None)?.0)
    }

    /// Advantage stream output, before aggregation.
    pub fn advantages(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.forward_cached(obs, None)?.1.advantages)
    }

    pub fn greedy(&self, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for p in g.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        g
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = self.embeddings.iter_mut().map(|e| &mut e.w).collect();
        for l in self.trunk.iter_mut().chain([&mut self.value, &mut self.advantage]) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    fn params(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = self.embeddings.iter().map(|e| &e.w).collect();
        for l in self.trunk.iter().chain([&self.value, &self.advantage]) {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    /// Backpropagates `∂L/∂Q` through a cached forward pass.
    fn backward(&self, obs: &Observation, cache: &Cache, dq: &[f64], grad: &mut QNetwork) {
        let n = dq.len() as f64;
        let dv = dq.iter().sum::<f64>();
        let mean = dv / n;
        let da: Vec<f64> = dq.iter().map(|d| d - mean).collect();
        let h = cache.acts.last().expect("trunk output");
        let mut dh = self.value.backward(h, &[dv], &mut grad.value);
        for (x, y) in dh.iter_mut().zip(self.advantage.backward(h, &da, &mut grad.advantage)) {
            *x += y;
        }
        for (k, layer) in self.trunk.iter().enumerate().rev() {
            let dz: Vec<f64> = dh
                .iter()
                .zip(&cache.masks[k])
                .zip(&cache.pre[k])
                .map(|((d, m), z)| if *z > 0.0 { d * m } else { 0.0 })
                .collect();
            dh = layer.backward(&cache.acts[k], &dz, &mut grad.trunk[k]);
        }
        debug_assert_eq!(dh.len(), cache.input.len());
        let mut offset = 0;
        for &(table, id) in &obs.categorical {
            let dim = self.embeddings[table].dim;
            if let Some(i) = id {
                let g = &mut grad.embeddings[table].w[i * dim..(i + 1) * dim];
                for (a, b) in g.iter_mut().zip(&dh[offset..offset + dim]) {
                    *a += b;
                }
            }
            offset += dim;
        }
    }

    /// `½(Q(s,a) − y)²` and its gradient for one sample, with an optional
    /// dropout stream.
    pub fn loss_and_grad(&self, obs: &Observation, action: usize, target: f64, dropout_rng: Option<&mut Stream>) -> Result<(f64, QNetwork)> {
        let mut grad = self.zeros_like();
        let (q, cache) = self.forward_cached(obs, dropout_rng)?;
        let err = q[action] - target;
        let mut dq = vec![0.0; q.len()];
        dq[action] = err;
        self.backward(obs, &cache, &dq, &mut grad);
        Ok((0.5 * err * err, grad))
    }

    pub fn loss(&self, obs: &Observation, action: usize, target: f64) -> Result<f64> {
        let q = self.q_values(obs)?;
        Ok(0.5 * (q[action] - target).powi(2))
    }

    /// Largest relative gap between the analytic gradient of
    /// `½(Q(s,a) − y)²` and central finite differences with step `h`, over
    /// every parameter.
    pub fn gradient_check(&self, obs: &Observation, action: usize, target: f64, h: f64) -> Result<f64> {
        let (_, grad) = self.loss_and_grad(obs, action, target, None)?;
        let analytic: Vec<f64> = grad.params().into_iter().flatten().copied().collect();
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        let mut k = 0;
        for gi in 0..self.params().len() {
            for pi in 0..self.params()[gi].len() {
                let orig = self.params()[gi][pi];
                probe.params_mut()[gi][pi] = orig + h;
                let up = probe.loss(obs, action, target)?;
                probe.params_mut()[gi][pi] = orig - h;
                let down = probe.loss(obs, action, target)?;
                probe.params_mut()[gi][pi] = orig;
                let numeric = (up - down) / (2.0 * h);
                let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic[k] - numeric).abs() / scale);
                k += 1;
            }
        }
        Ok(worst)
    }
}

pub fn dueling(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    crate::learners::argmax(values)
}

/// `r + γ·Q_target(s', argmax_a Q_online(s', a))`, or `r` at episode end.
pub fn double_q_target(reward: f64, done: bool, gamma: f64, online_next: &[f64], target_next: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * target_next[argmax(online_next)]
    }
}

/// `r + γ·max_a Q_target(s', a)`; kept for comparison with the double-Q form.
pub fn single_q_target(reward: f64, done: bool, gamma: f64, target_next: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * target_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Stream) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

struct AdamState {
    m: QNetwork,
    v: QNetwork,
    t: i32,
}

/// Applies one optimizer step with gradient `grad`.
fn apply_update(net: &mut QNetwork, grad: &QNetwork, cfg: &PolicyConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in net.params_mut().into_iter().zip(grad.params()) {
                for (x, d) in p.iter_mut().zip(g) {
                    *x -= lr * d;
                }
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            let params = net.params_mut();
            let ms = adam.m.params_mut();
            let vs = adam.v.params_mut();
            for (((p, g), m), v) in params.into_iter().zip(grad.params()).zip(ms).zip(vs) {
                for i in 0..p.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Always takes one action.
    Constant { action: usize },
    Learned {
        network: Box<QNetwork>,
        config: PolicyConfig,
        steps: u64,
    },
}

impl Policy {
    pub fn act(&self, obs: &Observation) -> Result<usize> {
        match self {
            Policy::Constant { action } => Ok(*action),
            Policy::Learned { network, .. } => network.greedy(obs),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn execute_only_policy() -> Policy {
    Policy::Constant {
        action: Action::Execute.index(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub episodes: usize,
    pub average_reward: f64,
    /// Agent turns until the episode ended; 1 means an immediate execute.
    pub average_turns_to_execute: f64,
    pub success_rate: f64,
}

/// Seed of evaluation episode `i`; episode `i` replays identically for
/// every policy evaluated with the same `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    rng::child_seed(seed, &format!("episode-{i}"))
}

/// Greedy rollouts over `n_episodes` fixed-seed episodes.
pub fn eval_policy<E: Environment>(env: &E, policy: &Policy, n_episodes: usize, seed: u64, max_steps: usize) -> Result<PolicyReport> {
    if n_episodes == 0 {
        return Err(Error::Domain("evaluation needs at least one episode".into()));
    }
    let (mut reward, mut turns, mut successes) = (0.0, 0usize, 0usize);
    for i in 0..n_episodes {
        let mut r = rng::stream(episode_seed(seed, i));
        let mut ep = env.reset(&mut r)?;
        for _ in 0..max_steps {
            let a = policy.act(&env.observe(&ep))?;
            let info = env.step(&mut ep, a, &mut r)?;
            reward += info.reward;
            turns += 1;
            if info.done {
                successes += usize::from(info.success == Some(true));
                break;
            }
        }
    }
    let n = n_episodes as f64;
    Ok(PolicyReport {
        episodes: n_episodes,
        average_reward: reward / n,
        average_turns_to_execute: turns as f64 / n,
        success_rate: successes as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub report: PolicyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub policy: Policy,
    /// Greedy evaluations at step 0 and after every `eval_every` steps.
    pub curve: Vec<CurvePoint>,
}

/// Trains a dueling double-Q network. Every random choice (initial weights,
/// exploration, environment, replay sampling, dropout) comes from named
/// child streams of `seed`, and the periodic evaluations use a fixed
/// episode stream so that curve points are comparable.
pub fn train_policy<E: Environment>(env: &E, cfg: &PolicyConfig, seed: u64) -> Result<TrainResult> {
    cfg.validate()?;
    let mut init_rng = rng::child_stream(seed, "init");
    let mut env_rng = rng::child_stream(seed, "env");
    let mut explore_rng = rng::child_stream(seed, "explore");
    let mut replay_rng = rng::child_stream(seed, "replay");
    let mut dropout_rng = rng::child_stream(seed, "dropout");
    let eval_seed = rng::child_seed(seed, "eval");

    let mut episode = env.reset(&mut env_rng)?;
    let probe = env.observe(&episode);
    let mut online = QNetwork::new(
        &env.embedding_tables(),
        probe.categorical.len(),
        probe.numeric.len(),
        env.n_actions(),
        cfg,
        &mut init_rng,
    );
    let mut target = online.clone();
    let mut adam = AdamState {
        m: online.zeros_like(),
        v: online.zeros_like(),
        t: 0,
    };
    let mut replay = ReplayBuffer::new(cfg.replay_size);
    let snapshot = |net: &QNetwork, steps| Policy::Learned {
        network: Box::new(net.clone()),
        config: *cfg,
        steps,
    };
    let mut curve = vec![CurvePoint {
        step: 0,
        report: eval_policy(env, &snapshot(&online, 0), cfg.eval_episodes, eval_seed, cfg.max_episode_steps)?,
    }];

    let mut episode_steps = 0usize;
    for step in 0..cfg.total_steps {
        let obs = env.observe(&episode);
        let action = if explore_rng.random::<f64>() < epsilon_at(&cfg.epsilon, step) {
            explore_rng.random_range(0..env.n_actions())
        } else {
            online.greedy(&obs)?
        };
        let info = env.step(&mut episode, action, &mut env_rng)?;
        episode_steps += 1;
        replay.push(Transition {
            obs,
            action,
            reward: info.reward,
            next_obs: env.observe(&episode),
            done: info.done,
        });
        if info.done || episode_steps >= cfg.max_episode_steps {
            episode = env.reset(&mut env_rng)?;
            episode_steps = 0;
        }

        if step >= cfg.warmup_steps && replay.len() >= cfg.batch_size {
            let mut grad = online.zeros_like();
            for i in replay.sample_indices(cfg.batch_size, &mut replay_rng) {
                let t = replay.get(i);
                let y = if t.done {
                    t.reward
                } else {
                    double_q_target(t.reward, false, cfg.gamma, &online.q_values(&t.next_obs)?, &target.q_values(&t.next_obs)?)
                };
                let (_, g) = online.loss_and_grad(&t.obs, t.action, y, Some(&mut dropout_rng))?;
                for (acc, part) in grad.params_mut().into_iter().zip(g.params()) {
                    for (a, b) in acc.iter_mut().zip(part) {
                        *a += b / cfg.batch_size as f64;
                    }
                }
            }
            apply_update(&mut online, &grad, cfg, &mut adam);
        }
        if (step + 1) % cfg.target_update_interval == 0 {
            target = online.clone();
        }
        if (step + 1) % cfg.eval_every == 0 {
            curve.push(CurvePoint {
                step: step + 1,
                report: eval_policy(env, &snapshot(&online, step + 1), cfg.eval_episodes, eval_seed, cfg.max_episode_steps)?,
            });
        }
    }
    Ok(TrainResult {
        policy: snapshot(&online, cfg.total_steps),
        curve,
    })
}

/// Small tabular MDPs for checking the learner against exact solutions.
pub mod toy {
    use super::*;

    /// Deterministic chain: states 0..N, action 0 stops with reward
    /// `stop[s]`, action 1 advances with reward −0.05 (the last advance
    /// pays 1 and ends the episode). Episodes start in a random state.
    pub struct Chain {
        pub stop: Vec<f64>,
    }

    impl Chain {
        pub fn n(&self) -> usize {
            self.stop.len()
        }

        /// Greedy actions of the value-iteration optimum, per state.
        pub fn value_iteration(&self, gamma: f64) -> Vec<usize> {
            let n = self.n();
            let mut v = vec![0.0; n];
            for _ in 0..1000 {
                for s in (0..n).rev() {
                    let adv = if s + 1 == n { 1.0 } else { -0.05 + gamma * v[s + 1] };
                    v[s] = self.stop[s].max(adv);
                }
            }
            (0..n)
                .map(|s| {
                    let adv = if s + 1 == n { 1.0 } else { -0.05 + gamma * v[s + 1] };
                    usize::from(adv > self.stop[s])
                })
                .collect()
        }

        pub fn obs(&self, s: usize) -> Observation {
            let mut numeric = vec![0.0; self.n()];
            numeric[s] = 1.0;
            Observation { categorical: vec![], numeric }
        }
    }

    impl Environment for Chain {
        type Episode = usize;

        fn n_actions(&self) -> usize {
            2
        }

        fn embedding_tables(&self) -> Vec<usize> {
            vec![]
        }

        fn reset(&self, rng: &mut Stream) -> Result<usize> {
            Ok(rng.random_range(0..self.n()))
        }

        fn observe(&self, s: &usize) -> Observation {
            self.obs(*s)
        }

        fn step(&self, s: &mut usize, action: usize, _: &mut Stream) -> Result<StepInfo> {
            Ok(if action == 0 {
                StepInfo { reward: self.stop[*s], done: true, success: None }
            } else if *s + 1 == self.n() {
                StepInfo { reward: 1.0, done: true, success: None }
            } else {
                *s += 1;
                StepInfo { reward: -0.05, done: false, success: None }
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::Chain;
    use super::*;

    fn tiny_cfg() -> PolicyConfig {
        PolicyConfig {
            hidden_layers: 2,
            hidden_nodes: 5,
            embedding_size: 2,
            dropout: 0.0,
            ..PolicyConfig::desk()
        }
    }

    fn random_obs(r: &mut Stream) -> Observation {
        Observation {
            categorical: vec![(0, Some(r.random_range(0..4))), (1, Some(r.random_range(0..3))), (1, None)],
            numeric: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn epsilon_schedule_points() {
        let s = PolicyConfig::full().epsilon;
        assert_eq!(epsilon_at(&s, 0), 1.0);
        assert!((epsilon_at(&s, 50_000) - 0.55).abs() < 1e-12);
        assert_eq!(epsilon_at(&s, 200_000), 0.1);
    }

    #[test]
    fn dueling_advantages_have_zero_mean() {
        let mut r = rng::stream(1);
        let net = QNetwork::new(&[4, 3], 3, 3, 3, &tiny_cfg(), &mut r);
        for _ in 0..50 {
            let obs = random_obs(&mut r);
            let q = net.q_values(&obs).unwrap();
            let a = net.advantages(&obs).unwrap();
            let mean_a = a.iter().sum::<f64>() / 3.0;
            let centred: Vec<f64> = a.iter().map(|x| x - mean_a).collect();
            assert!(centred.iter().sum::<f64>().abs() < 1e-6);
            let v = q.iter().sum::<f64>() / 3.0;
            for (qi, ci) in q.iter().zip(&centred) {
                assert!((qi - v - ci).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut r = rng::stream(2);
        for trial in 0..5 {
            let net = QNetwork::new(&[4, 3], 3, 3, 3, &tiny_cfg(), &mut r);
            let obs = random_obs(&mut r);
            let action = trial % 3;
            let target = r.random_range(-1.0..1.0);
            let worst = net.gradient_check(&obs, action, target, 1e-6).unwrap();
            assert!(worst < 1e-4, "trial {trial}: {worst}");
        }
    }

    #[test]
    fn replay_is_bounded_and_uniform() {
        let obs = Observation { categorical: vec![], numeric: vec![0.0] };
        let mut buf = ReplayBuffer::new(10);
        for i in 0..25 {
            buf.push(Transition { obs: obs.clone(), action: i, reward: 0.0, next_obs: obs.clone(), done: false });
        }
        assert_eq!(buf.len(), 10);
        let kept: Vec<usize> = (0..10).map(|i| buf.get(i).action).collect();
        assert!(kept.iter().all(|a| *a >= 15));
        let mut counts = [0usize; 10];
        for i in buf.sample_indices(100_000, &mut rng::stream(3)) {
            counts[i] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() <= 500.0, "{c}");
        }
    }

    /// s0 --a0--> s1 (reward 0); the online and target networks disagree
    /// about the best action in s1.
    #[test]
    fn double_q_uses_online_argmax_and_target_value() {
        let cfg = PolicyConfig { hidden_layers: 0, embedding_size: 1, dropout: 0.0, ..PolicyConfig::desk() };
        let mut r = rng::stream(4);
        let mut online = QNetwork::new(&[], 0, 2, 2, &cfg, &mut r);
        let mut target = online.clone();
        // Inputs are one-hot states; V = 0 and A(s, a) = w[a][s].
        for net in [&mut online, &mut target] {
            net.value.w = vec![0.0, 0.0];
            net.value.b = vec![0.0];
            net.advantage.b = vec![0.0, 0.0];
        }
        online.advantage.w = vec![0.0, 1.0, 0.0, 2.0];
        target.advantage.w = vec![0.0, 3.0, 0.0, 0.0];
        let s1 = Observation { categorical: vec![], numeric: vec![0.0, 1.0] };
        let qo = online.q_values(&s1).unwrap();
        let qt = target.q_values(&s1).unwrap();
        assert_eq!(argmax(&qo), 1);
        assert_eq!(argmax(&qt), 0);
        let gamma = 0.9;
        let double = double_q_target(0.0, false, gamma, &qo, &qt);
        let single = single_q_target(0.0, false, gamma, &qt);
        assert!((double - gamma * qt[1]).abs() < 1e-12);
        assert!((single - gamma * qt[0]).abs() < 1e-12);
        assert!(double < single);
        assert_eq!(double_q_target(0.5, true, gamma, &qo, &qt), 0.5);
    }

    #[test]
    fn recovers_value_iteration_policy_on_chain() {
        let chain = Chain { stop: vec![0.1, 0.2, 0.9, 0.3, 0.5, 0.2] };
        let cfg = PolicyConfig {
            hidden_layers: 1,
            hidden_nodes: 32,
            learning_rate: 1e-3,
            dropout: 0.0,
            replay_size: 5_000,
            target_update_interval: 200,
            gamma: 0.9,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 2_000 },
            total_steps: 6_000,
            eval_every: 3_000,
            eval_episodes: 10,
            warmup_steps: 200,
            ..PolicyConfig::desk()
        };
        let optimal = chain.value_iteration(cfg.gamma);
        assert_eq!(optimal, vec![1, 1, 0, 1, 1, 1]);
        let trained = train_policy(&chain, &cfg, 7).unwrap();
        let learned: Vec<usize> = (0..chain.n()).map(|s| trained.policy.act(&chain.obs(s)).unwrap()).collect();
        assert_eq!(learned, optimal);
    }

    #[test]
    fn execute_only_always_executes() {
        let p = execute_only_policy();
        let mut r = rng::stream(5);
        for _ in 0..10 {
            assert_eq!(p.act(&random_obs(&mut r)).unwrap(), Action::Execute.index());
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut r = rng::stream(6);
        let cfg = tiny_cfg();
        let p = Policy::Learned { network: Box::new(QNetwork::new(&[4, 3], 3, 3, 3, &cfg, &mut r)), config: cfg, steps: 12 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        p.save(&path).unwrap();
        assert_eq!(Policy::load(&path).unwrap(), p);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut r = rng::stream(8);
        let net = QNetwork::new(&[4, 3], 3, 3, 3, &tiny_cfg(), &mut r);
        let bad = Observation { categorical: vec![(0, Some(1))], numeric: vec![0.0] };
        assert!(net.q_values(&bad).is_err());
    }
}
