//! Acceptance criteria 1–9. Each criterion prints one PASS/FAIL line with
//! the measured values; the target exits nonzero if any criterion fails.
//!
//! Criteria 1–5 and 8 read the summary of one default-config pipeline run;
//! 6 and 7 exercise the metric and learner checks directly; 9 reruns the
//! quick pipeline.

use std::time::Duration;

use noisy_channel::alignment::{align, wer_features};
use noisy_channel::confusion::{adjust_self_frequency, build_confusion};
use noisy_channel::corpus::{synth_corpus, SynthConfig};
use noisy_channel::dialog_env::{Action, DialogEnv, EnvConfig, EventConfig, RewardConfig, Scorer};
use noisy_channel::evalstats::kl_from_weights;
use noisy_channel::pipeline::{full_pipeline, PipelineConfig, PipelineRun};
use noisy_channel::policy::toy::Chain;
use noisy_channel::policy::{
    argmax, double_q_target, single_q_target, train_policy, EpsilonSchedule, Observation, PolicyConfig, QNetwork,
};
use noisy_channel::rng;
use rand::Rng;

const SEED: u64 = 20_190_813;

// Criterion tolerances.
const WER_REL_TOL: f64 = 0.10;
const WER_STAGE_BUDGET: Duration = Duration::from_secs(30);
const SHARE_TOL_POINTS: f64 = 10.0;
const CORR_MARGIN: f64 = 0.15;
const MAE_REDUCTION: f64 = 0.25;
const SCORE_STAGE_BUDGET: Duration = Duration::from_secs(120);
const KL_HAND_CASE: f64 = 0.143841;
const KL_HAND_TOL: f64 = 1e-6;
const REWARD_TOL: f64 = 1e-12;
const DUELING_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const SER_TARGET: f64 = 0.30;
const SER_TOL: f64 = 0.05;
const POLICY_GAIN_POINTS: f64 = 5.0;
const MIN_EVAL_EPISODES: usize = 500;
const MIN_WINNING_SEEDS: usize = 2;
const EXEC_VS_SER_POINTS: f64 = 3.0;
const POLICY_BUDGET: Duration = Duration::from_secs(300);

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.failed += usize::from(!pass);
    }
}

fn stage(run: &PipelineRun, prefix: &str) -> Duration {
    run.timings.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, d)| *d).sum()
}

fn oracle_distance(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn alignment_matches_oracle() -> (usize, usize) {
    let mut r = rng::stream(SEED);
    let alphabet = ["a", "b", "c", "d", "e"];
    let mut words = |min: usize| -> Vec<String> {
        let n = r.random_range(min..=6);
        (0..n).map(|_| alphabet[r.random_range(0..5)].to_string()).collect()
    };
    let mut agree = 0;
    for _ in 0..1000 {
        let (a, b) = (words(1), words(0));
        let f = wer_features(&align(&a, &b).unwrap());
        agree += usize::from(f.edits() == oracle_distance(&a, &b));
    }
    (agree, 1000)
}

/// Step rewards on a noiseless channel with events forced on or off.
fn reward_compositions() -> Vec<(&'static str, f64, f64)> {
    let corpus = synth_corpus(&SynthConfig { n_turns: 400, ..SynthConfig::default() }, 1).unwrap();
    let clean = adjust_self_frequency(&build_confusion(&corpus, 3).unwrap(), 0.0).unwrap();
    let env_with = |positive: f64, negative: f64, barge_in: f64| {
        let config = EnvConfig {
            events: EventConfig { positive_sentiment: positive, negative_sentiment: negative, barge_in },
            yes_no_flip: 0.0,
            ..EnvConfig::default()
        };
        DialogEnv::new(config, clean.clone(), Scorer::Constant(0.5)).unwrap()
    };
    let mut r = rng::stream(3);
    let mut steps = |env: &DialogEnv, wrong: bool, actions: &[Action]| -> f64 {
        let mut ep = env.reset(&mut r).unwrap();
        let mut last = 0.0;
        for a in actions {
            if wrong {
                ep.state.hyp_intent = None;
            }
            last = env.step(&mut ep, *a, &mut r).unwrap().reward;
        }
        last
    };
    let quiet = env_with(0.0, 0.0, 0.0);
    let t = RewardConfig::default();
    vec![
        ("execute correct", steps(&quiet, false, &[Action::Execute]), 1.0),
        ("execute wrong", steps(&quiet, true, &[Action::Execute]), -1.0),
        ("confirm", steps(&quiet, true, &[Action::Confirm]), -0.33),
        ("repeat", steps(&quiet, false, &[Action::Repeat]), -0.50),
        ("execute correct + positive", steps(&env_with(1.0, 0.0, 0.0), false, &[Action::Execute]), 1.0 + 0.17),
        ("confirm + positive", steps(&env_with(1.0, 0.0, 0.0), false, &[Action::Confirm]), -0.33 + 0.17),
        ("second repeat + negative", steps(&env_with(0.0, 1.0, 0.0), true, &[Action::Repeat, Action::Repeat]), -0.50 - 0.17),
        ("second confirm + barge-in", steps(&env_with(0.0, 0.0, 1.0), true, &[Action::Confirm, Action::Confirm]), -0.33 - 0.17),
        (
            "execute wrong after two repeats + negative",
            steps(&env_with(0.0, 1.0, 0.0), true, &[Action::Repeat, Action::Repeat, Action::Execute]),
            -1.0 - 0.17,
        ),
        ("table: execute correct", t.execute_correct, 1.0),
        ("table: execute wrong", t.execute_wrong, -1.0),
        ("table: confirm", t.confirm, -0.33),
        ("table: repeat", t.repeat, -0.50),
        ("table: positive sentiment", t.positive_sentiment, 0.17),
        ("table: negative sentiment", t.negative_sentiment, -0.17),
        ("table: barge-in", t.barge_in, -0.17),
    ]
}

fn criterion_7() -> (bool, String) {
    let cfg = PolicyConfig { hidden_layers: 2, hidden_nodes: 8, embedding_size: 3, dropout: 0.0, ..PolicyConfig::desk() };
    let mut r = rng::stream(SEED);
    let mut dueling_worst = 0.0f64;
    let mut grad_worst = 0.0f64;
    for trial in 0..20 {
        let net = QNetwork::new(&[5, 4], 2, 3, 3, &cfg, &mut r);
        let obs = Observation {
            categorical: vec![(0, Some(r.random_range(0..5))), (1, Some(r.random_range(0..4)))],
            numeric: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let a = net.advantages(&obs).unwrap();
        let q = net.q_values(&obs).unwrap();
        let v = q.iter().sum::<f64>() / q.len() as f64;
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        let centred: f64 = q.iter().map(|x| x - v).sum();
        dueling_worst = dueling_worst.max(centred.abs());
        for (qi, ai) in q.iter().zip(&a) {
            dueling_worst = dueling_worst.max((qi - v - (ai - mean_a)).abs());
        }
        grad_worst = grad_worst.max(net.gradient_check(&obs, trial % 3, r.random_range(-1.0..1.0), 1e-6).unwrap());
    }

    // Two states: in s1 the online net prefers action 1, the target net action 0.
    let lin = PolicyConfig { hidden_layers: 0, embedding_size: 1, dropout: 0.0, ..PolicyConfig::desk() };
    let mut online = QNetwork::new(&[], 0, 2, 2, &lin, &mut r);
    let mut target = online.clone();
    for net in [&mut online, &mut target] {
        net.value.w = vec![0.0, 0.0];
        net.value.b = vec![0.0];
        net.advantage.b = vec![0.0, 0.0];
    }
    online.advantage.w = vec![0.0, 1.0, 0.0, 2.0];
    target.advantage.w = vec![0.0, 3.0, 0.0, 0.0];
    let s1 = Observation { categorical: vec![], numeric: vec![0.0, 1.0] };
    let (qo, qt) = (online.q_values(&s1).unwrap(), target.q_values(&s1).unwrap());
    let gamma = 0.9;
    let double = double_q_target(0.0, false, gamma, &qo, &qt);
    let single = single_q_target(0.0, false, gamma, &qt);
    let double_ok = argmax(&qo) == 1 && (double - gamma * qt[1]).abs() < 1e-12 && (single - gamma * qt[0]).abs() < 1e-12 && double != single;

    let chain = Chain { stop: vec![0.1, 0.2, 0.9, 0.3, 0.5, 0.2] };
    let toy_cfg = PolicyConfig {
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
    let optimal = chain.value_iteration(toy_cfg.gamma);
    let trained = train_policy(&chain, &toy_cfg, SEED).unwrap();
    let learned: Vec<usize> = (0..chain.n()).map(|s| trained.policy.act(&chain.obs(s)).unwrap()).collect();

    let pass = dueling_worst < DUELING_TOL && grad_worst < GRAD_REL_TOL && double_ok && learned == optimal;
    (
        pass,
        format!(
            "dueling_dev={dueling_worst:.2e} grad_rel={grad_worst:.2e} double_q={double_ok} optimal={optimal:?} learned={learned:?}"
        ),
    )
}

fn main() {
    let mut out = Outcome { failed: 0 };
    let cfg = PipelineConfig::default();
    let run = full_pipeline(&cfg, SEED, None).unwrap();
    let s = &run.summary;

    // 1. WER matching.
    let wer_time = stage(&run, "synth") + stage(&run, "simulate");
    out.record(
        1,
        cfg.synth.n_turns == 5_000
            && cfg.synth.target_wer == 0.2
            && s.wer.relative_change.abs() <= WER_REL_TOL
            && wer_time < WER_STAGE_BUDGET,
        format!(
            "train_wer={:.4} sim_wer={:.4} rel_change={:+.4} (tol ±{WER_REL_TOL}) time={:.1}s",
            s.wer.train.corpus_wer,
            s.wer.simulated_test.corpus_wer,
            s.wer.relative_change,
            wer_time.as_secs_f64()
        ),
    );

    // 2. Error-type shares.
    out.record(
        2,
        s.wer.max_share_gap_points <= SHARE_TOL_POINTS,
        format!(
            "train_shares={:.3?} sim_shares={:.3?} max_gap={:.2}pt (tol {SHARE_TOL_POINTS}pt)",
            s.wer.train.shares(),
            s.wer.simulated_test.shares(),
            s.wer.max_share_gap_points
        ),
    );

    // 3. Score models beat the baseline.
    let sc = &s.score;
    let beats = |m: &noisy_channel::score_model::ScoreEval| {
        m.linear_correlation >= sc.baseline.linear_correlation + CORR_MARGIN
            && m.mean_abs_error <= (1.0 - MAE_REDUCTION) * sc.baseline.mean_abs_error
    };
    let score_time = stage(&run, "train-score");
    out.record(
        3,
        beats(&sc.regression) && beats(&sc.classification) && score_time < SCORE_STAGE_BUDGET,
        format!(
            "corr reg={:.3} cls={:.3} base={:.3}; mae reg={:.3} cls={:.3} base={:.3}; time={:.1}s",
            sc.regression.linear_correlation,
            sc.classification.linear_correlation,
            sc.baseline.linear_correlation,
            sc.regression.mean_abs_error,
            sc.classification.mean_abs_error,
            sc.baseline.mean_abs_error,
            score_time.as_secs_f64()
        ),
    );

    // 4. Score distribution realism.
    out.record(
        4,
        sc.kl_classification < sc.kl_regression,
        format!("kl cls={:.4} reg={:.4}", sc.kl_classification, sc.kl_regression),
    );

    // 5. Discriminator ordering and the duplicate mechanism.
    let acc = |scores: &str, dedup: bool| s.discriminator_accuracy(scores, dedup).unwrap();
    let (reg, cls, none) = (acc("regression", false), acc("classification", false), acc("none", false));
    let gap = cls - none;
    let gap_dedup = acc("classification", true) - acc("none", true);
    out.record(
        5,
        reg > cls && cls > none && gap_dedup < gap,
        format!("acc reg={reg:.4} cls={cls:.4} none={none:.4}; cls-none gap={gap:.4} dedup gap={gap_dedup:.4}"),
    );

    // 6. Metric unit checks.
    let (agree, total) = alignment_matches_oracle();
    let kl = kl_from_weights(&[0.5, 0.5], &[0.75, 0.25], 0.0).unwrap();
    let rewards = reward_compositions();
    let bad_rewards: Vec<_> = rewards.iter().filter(|(_, got, want)| (got - want).abs() > REWARD_TOL).collect();
    out.record(
        6,
        agree == total && (kl - KL_HAND_CASE).abs() < KL_HAND_TOL && bad_rewards.is_empty(),
        format!(
            "alignment {agree}/{total} agree; kl={kl:.6}; reward cases {}/{} exact{}",
            rewards.len() - bad_rewards.len(),
            rewards.len(),
            if bad_rewards.is_empty() { String::new() } else { format!(" mismatches={bad_rewards:?}") }
        ),
    );

    // 7. Q-learner correctness.
    let (pass7, detail7) = criterion_7();
    out.record(7, pass7, detail7);

    // 8. Policy end to end.
    let winning = s.policy.iter().filter(|p| p.success_gain_points >= POLICY_GAIN_POINTS).count();
    let exec = s.policy[0].execute_only.success_rate;
    let exec_gap = (exec - (1.0 - s.measured_ser)).abs() * 100.0;
    let slowest = (0..s.policy.len())
        .map(|i| stage(&run, &format!("train-policy-{i}")))
        .max()
        .unwrap_or_default();
    let gains: Vec<String> = s.policy.iter().map(|p| format!("{:+.1}", p.success_gain_points)).collect();
    out.record(
        8,
        s.policy.len() == 3
            && cfg.eval_episodes >= MIN_EVAL_EPISODES
            && (s.measured_ser - SER_TARGET).abs() <= SER_TOL
            && winning >= MIN_WINNING_SEEDS
            && exec_gap <= EXEC_VS_SER_POINTS
            && slowest <= POLICY_BUDGET,
        format!(
            "ser={:.3} exec_success={exec:.3} |exec-(1-ser)|={exec_gap:.2}pt gains={gains:?}pt over {} episodes, {winning}/3 seeds >= {POLICY_GAIN_POINTS}pt; slowest seed {:.0}s",
            s.measured_ser,
            cfg.eval_episodes,
            slowest.as_secs_f64()
        ),
    );

    // 9. Determinism.
    let quick = PipelineConfig::quick();
    let a = full_pipeline(&quick, SEED, None).unwrap().summary.to_json().unwrap();
    let b = full_pipeline(&quick, SEED, None).unwrap().summary.to_json().unwrap();
    out.record(9, a == b, format!("summary bytes {} == {}", a.len(), b.len()));

    println!("acceptance: {} of 9 criteria passed", 9 - out.failed);
    if out.failed > 0 {
        std::process::exit(1);
    }
}
