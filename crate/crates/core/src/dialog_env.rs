//! Clarification dialog environment: a user simulator that speaks through
//! the simulated ASR channel, the keyword NLU, rewards and state encoding.
//!
//! Every episode is one user request. The agent may confirm or ask for a
//! repeat before it executes; executing ends the episode.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::catalog::{toy_nlu, Interpretation};
use crate::alignment;
use crate::catalog::Catalog;
use crate::confusion::{simulate_hypothesis, ConfusionModel};
use crate::corpus::ScoreRule;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::score_model::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Execute,
    Confirm,
    Repeat,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Execute, Action::Confirm, Action::Repeat];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Domain(format!("no action with index {i}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevAction {
    #[default]
    None,
    Execute,
    Confirm,
    Repeat,
}

impl From<Action> for PrevAction {
    fn from(a: Action) -> Self {
        match a {
            Action::Execute => Self::Execute,
            Action::Confirm => Self::Confirm,
            Action::Repeat => Self::Repeat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserEvent {
    #[default]
    None,
    PositiveSentiment,
    NegativeSentiment,
    BargeIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserGoal {
    pub intent: String,
    pub slot: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogState {
    /// `None` when the NLU found no intent (out of domain).
    pub hyp_intent: Option<String>,
    pub hyp_slot: Option<String>,
    pub score: f64,
    pub prev_action: PrevAction,
    pub total_clarifications: u32,
    pub request_clarifications: u32,
}

impl DialogState {
    pub fn matches(&self, goal: &UserGoal) -> bool {
        self.hyp_intent.as_deref() == Some(goal.intent.as_str()) && self.hyp_slot.as_deref() == Some(goal.slot.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub execute_correct: f64,
    pub execute_wrong: f64,
    pub confirm: f64,
    pub repeat: f64,
    pub positive_sentiment: f64,
    pub negative_sentiment: f64,
    pub barge_in: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            execute_correct: 1.0,
            execute_wrong: -1.0,
            confirm: -0.33,
            repeat: -0.50,
            positive_sentiment: 0.17,
            negative_sentiment: -0.17,
            barge_in: -0.17,
        }
    }
}

/// Per-step probabilities of user events; at most one event fires per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    /// When the hypothesis after the step matches the goal.
    pub positive_sentiment: f64,
    /// From the second clarification of a request on, including the
    /// execute that follows it.
    pub negative_sentiment: f64,
    pub barge_in: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            positive_sentiment: 0.05,
            negative_sentiment: 0.05,
            barge_in: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub catalog: Catalog,
    pub rewards: RewardConfig,
    pub events: EventConfig,
    /// Chance that the agent mishears the user's yes/no answer to a confirm.
    pub yes_no_flip: f64,
    /// Clarifications allowed per request before execute is forced.
    pub max_clarifications: u32,
    /// Number of recent turns in the encoded state.
    pub window: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            catalog: Catalog::default(),
            rewards: RewardConfig::default(),
            events: EventConfig::default(),
            yes_no_flip: 0.05,
            max_clarifications: 4,
            window: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        let e = self.events;
        let probs = [e.positive_sentiment, e.negative_sentiment, e.barge_in, self.yes_no_flip];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || e.negative_sentiment + e.barge_in + e.positive_sentiment > 1.0 {
            return Err(Error::Config("event and flip probabilities must lie in [0, 1] and sum to at most 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Where hypothesis scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Model(Box<ScoreModel>),
    /// The synthetic score rule applied to the measured WER.
    Rule(ScoreRule),
    Constant(f64),
}

impl Scorer {
    fn score(&self, reference: &[String], hypothesis: &[String], rng: &mut Stream) -> Result<f64> {
        match self {
            Scorer::Model(m) => m.predict(reference, hypothesis, rng),
            Scorer::Rule(rule) => {
                let wer = alignment::pair_features(reference, hypothesis)?.wer;
                Ok(rule.sample(wer, reference, rng))
            }
            Scorer::Constant(c) => Ok(*c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub goal: UserGoal,
    pub utterance: Vec<String>,
    pub hypothesis: Vec<String>,
    pub state: DialogState,
    /// Every state of the episode, oldest first; the last is `state`.
    pub history: Vec<DialogState>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: DialogState,
    pub reward: f64,
    pub done: bool,
    pub user_event: UserEvent,
    /// The action actually taken; differs from the requested one when the
    /// clarification cap forced an execute.
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct DialogEnv {
    pub config: EnvConfig,
    pub channel: ConfusionModel,
    pub scorer: Scorer,
}

impl DialogEnv {
    pub fn new(config: EnvConfig, channel: ConfusionModel, scorer: Scorer) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, channel, scorer })
    }

    fn utter(&self, goal: &UserGoal, rng: &mut Stream) -> Vec<String> {
        let c = &self.config.catalog;
        let intent = &c.intents[c.intent_index(&goal.intent).expect("goal drawn from catalog")];
        let template = &intent.templates[rng.random_range(0..intent.templates.len())];
        Catalog::render(template, &goal.slot)
    }

    /// Speaks `utterance` through the channel and reads it back.
    fn hear(&self, utterance: &[String], rng: &mut Stream) -> Result<(Vec<String>, Interpretation, f64)> {
        let hypothesis = simulate_hypothesis(utterance, &self.channel, rng)?;
        let reading = toy_nlu(&hypothesis, &self.config.catalog);
        let score = self.scorer.score(utterance, &hypothesis, rng)?;
        Ok((hypothesis, reading, score))
    }

    pub fn reset(&self, rng: &mut Stream) -> Result<Episode> {
        let c = &self.config.catalog;
        let goal = UserGoal {
            intent: c.intents[rng.random_range(0..c.intents.len())].name.clone(),
            slot: c.slots[rng.random_range(0..c.slots.len())].clone(),
        };
        let utterance = self.utter(&goal, rng);
        let (hypothesis, reading, score) = self.hear(&utterance, rng)?;
        let state = DialogState {
            hyp_intent: reading.intent,
            hyp_slot: reading.slot,
            score: score.clamp(0.0, 1.0),
            ..DialogState::default()
        };
        Ok(Episode {
            goal,
            utterance,
            hypothesis,
            history: vec![state.clone()],
            state,
            done: false,
        })
    }

    pub fn step(&self, episode: &mut Episode, action: Action, rng: &mut Stream) -> Result<StepOutcome> {
        if episode.done {
            return Err(Error::Domain("episode already finished".into()));
        }
        let cfg = &self.config;
        let r = cfg.rewards;
        let action = if action != Action::Execute && episode.state.request_clarifications >= cfg.max_clarifications {
            Action::Execute
        } else {
            action
        };
        let mut next = episode.state.clone();
        next.prev_action = action.into();
        let mut reward;
        match action {
            Action::Execute => {
                reward = if next.matches(&episode.goal) { r.execute_correct } else { r.execute_wrong };
            }
            Action::Confirm | Action::Repeat => {
                next.total_clarifications += 1;
                next.request_clarifications += 1;
                let restate = if action == Action::Confirm {
                    reward = r.confirm;
                    let truthful_yes = episode.state.matches(&episode.goal);
                    let heard_yes = truthful_yes != (rng.random::<f64>() < cfg.yes_no_flip);
                    if heard_yes {
                        next.score = 1.0;
                    }
                    !heard_yes
                } else {
                    reward = r.repeat;
                    true
                };
                if restate {
                    let utterance = self.utter(&episode.goal, rng);
                    let (hypothesis, reading, score) = self.hear(&utterance, rng)?;
                    next.hyp_intent = reading.intent;
                    next.hyp_slot = reading.slot;
                    next.score = score.clamp(0.0, 1.0);
                    episode.utterance = utterance;
                    episode.hypothesis = hypothesis;
                }
            }
        }

        let e = cfg.events;
        let mut eligible: Vec<(UserEvent, f64, f64)> = Vec::with_capacity(3);
        if next.request_clarifications >= 2 {
            eligible.push((UserEvent::NegativeSentiment, e.negative_sentiment, r.negative_sentiment));
            eligible.push((UserEvent::BargeIn, e.barge_in, r.barge_in));
        }
        if next.matches(&episode.goal) {
            eligible.push((UserEvent::PositiveSentiment, e.positive_sentiment, r.positive_sentiment));
        }
        let mut user_event = UserEvent::None;
        if !eligible.is_empty() {
            let mut u = rng.random::<f64>();
            for (event, p, bonus) in eligible {
                if u < p {
                    user_event = event;
                    reward += bonus;
                    break;
                }
                u -= p;
            }
        }

        let done = action == Action::Execute;
        episode.done = done;
        episode.state = next.clone();
        episode.history.push(next.clone());
        Ok(StepOutcome {
            next_state: next,
            reward,
            done,
            user_event,
            action,
        })
    }
}

/// Numeric features per turn: score, prev-action one-hot (4), two counters.
pub const NUMERIC_PER_TURN: usize = 7;

/// Categorical ids and numeric features of the last `window` turns, most
/// recent first. Intent id 0 and slot id 0 mean "none"; catalog entries
/// start at 1. Padding turns have no ids and all-zero numeric features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub intent_ids: Vec<Option<usize>>,
    pub slot_ids: Vec<Option<usize>>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub window: usize,
    pub embedding_size: usize,
}

impl StateEncoder {
    /// Length of the network input after embedding lookup.
    pub fn dim(&self) -> usize {
        self.window * (2 * self.embedding_size + NUMERIC_PER_TURN)
    }

    pub fn encode(&self, history: &[DialogState], catalog: &Catalog) -> EncodedState {
        let mut out = EncodedState {
            intent_ids: Vec::with_capacity(self.window),
            slot_ids: Vec::with_capacity(self.window),
            numeric: Vec::with_capacity(self.window * NUMERIC_PER_TURN),
        };
        for k in 0..self.window {
            match history.len().checked_sub(k + 1).map(|i| &history[i]) {
                Some(s) => {
                    out.intent_ids.push(Some(s.hyp_intent.as_deref().and_then(|i| catalog.intent_index(i)).map_or(0, |i| i + 1)));
                    out.slot_ids.push(Some(s.hyp_slot.as_deref().and_then(|x| catalog.slot_index(x)).map_or(0, |i| i + 1)));
                    out.numeric.push(s.score);
                    let mut onehot = [0.0; 4];
                    onehot[s.prev_action as usize] = 1.0;
                    out.numeric.extend(onehot);
                    out.numeric.push(f64::from(s.total_clarifications));
                    out.numeric.push(f64::from(s.request_clarifications));
                }
                None => {
                    out.intent_ids.push(None);
                    out.slot_ids.push(None);
                    out.numeric.extend([0.0; NUMERIC_PER_TURN]);
                }
            }
        }
        out
    }
}

/// Encodes a single state with no history.
pub fn encode_state(state: &DialogState, encoder: &StateEncoder, catalog: &Catalog) -> EncodedState {
    encoder.encode(std::slice::from_ref(state), catalog)
}

/// Share of `n` fresh episodes whose first hypothesis misreads the goal.
pub fn measure_ser(env: &DialogEnv, n: usize, rng: &mut Stream) -> Result<f64> {
    let mut wrong = 0usize;
    for _ in 0..n {
        let ep = env.reset(rng)?;
        wrong += usize::from(!ep.state.matches(&ep.goal));
    }
    Ok(wrong as f64 / n as f64)
}
