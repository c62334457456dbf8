//! The end-to-end experiment: synthesize, split, learn the channel,
//! simulate, fit score models, discriminate, compare distributions, then
//! train and evaluate clarification policies on the noisy environment.
//!
//! The summary holds only seeded quantities, so two runs with one seed
//! serialize to identical bytes. Wall-clock timings go to the run manifest.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::alignment::ErrorStats;
use crate::catalog::toy_nlu;
use crate::confusion::{adjust_self_frequency, build_confusion, simulate_corpus};
use crate::corpus::{split_corpus, synth_corpus, Corpus, Format, SynthConfig};
use crate::dialog_env::{measure_ser, DialogEnv, EnvConfig, Scorer};
use crate::discriminator::{run_variant, DiscriminatorReport};
use crate::error::{Error, Result};
use crate::evalstats::{
    error_distribution_table, histogram_table, kl_divergence, score_histogram, semantic_error_rates, semantic_table,
    SemanticRecord, SemanticReport, DEFAULT_KL_SMOOTHING,
};
use crate::learners::GbtConfig;
use crate::policy::{eval_policy, execute_only_policy, train_policy, CurvePoint, PolicyConfig, PolicyReport};
use crate::rng;
use crate::score_model::{eval_baseline, eval_score_model, train_score_model, ScoreBaseline, ScoreConfig, ScoreEval, ScoreMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub train_fraction: f64,
    pub max_fragment_len: usize,
    pub score: ScoreConfig,
    pub discriminator: GbtConfig,
    pub env: EnvConfig,
    /// Channel WER for the dialog environment; `None` keeps the learned rate.
    pub channel_target_wer: Option<f64>,
    /// Resets used to measure the environment's semantic error rate.
    pub ser_episodes: usize,
    pub policy: PolicyConfig,
    /// Independent policy trainings, each on its own child seed.
    pub policy_seeds: usize,
    /// Paired episodes for the final trained vs execute-only comparison.
    pub eval_episodes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train_fraction: 0.75,
            max_fragment_len: 3,
            score: ScoreConfig::default(),
            discriminator: GbtConfig::default(),
            env: EnvConfig::default(),
            channel_target_wer: Some(0.15),
            ser_episodes: 5_000,
            policy: PolicyConfig::desk(),
            policy_seeds: 3,
            eval_episodes: 500,
        }
    }
}

impl PipelineConfig {
    /// A small run for smoke tests: every stage, a fraction of the work.
    pub fn quick() -> Self {
        let gbt = GbtConfig {
            n_trees: 20,
            ..GbtConfig::default()
        };
        Self {
            synth: SynthConfig {
                n_turns: 800,
                ..SynthConfig::default()
            },
            score: ScoreConfig { max_terms: 500, gbt },
            discriminator: gbt,
            ser_episodes: 300,
            policy: PolicyConfig {
                total_steps: 1_500,
                eval_every: 500,
                eval_episodes: 20,
                warmup_steps: 200,
                hidden_nodes: 32,
                ..PolicyConfig::desk()
            },
            policy_seeds: 1,
            eval_episodes: 50,
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.ser_episodes == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("episode counts must be positive".into()));
        }
        self.env.validate()?;
        self.policy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerSummary {
    pub train: ErrorStats,
    pub real_test: ErrorStats,
    pub simulated_test: ErrorStats,
    /// `(simulated − train)/train` corpus WER.
    pub relative_change: f64,
    /// Largest absolute gap, in percentage points, between the training and
    /// simulated (sub, ins, del) shares.
    pub max_share_gap_points: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub regression: ScoreEval,
    pub classification: ScoreEval,
    pub baseline: ScoreEval,
    pub kl_regression: f64,
    pub kl_classification: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorVariant {
    /// `none`, `regression` or `classification`: where simulated scores came from.
    pub scores: String,
    pub dedup: bool,
    pub report: DiscriminatorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub trained: PolicyReport,
    pub execute_only: PolicyReport,
    /// Trained minus execute-only success rate, in percentage points.
    pub success_gain_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub train_turns: usize,
    pub test_turns: usize,
    pub wer: WerSummary,
    pub semantic_real: SemanticReport,
    pub semantic_simulated: SemanticReport,
    pub score: ScoreSummary,
    pub discriminator: Vec<DiscriminatorVariant>,
    pub channel_target_wer: Option<f64>,
    pub measured_ser: f64,
    pub policy: Vec<PolicyRun>,
}

impl PipelineSummary {
    pub fn discriminator_accuracy(&self, scores: &str, dedup: bool) -> Option<f64> {
        self.discriminator
            .iter()
            .find(|v| v.scores == scores && v.dedup == dedup)
            .map(|v| v.report.accuracy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub summary: PipelineSummary,
    /// Wall-clock time per stage, in execution order.
    pub timings: Vec<(String, Duration)>,
}

fn semantic_records(corpus: &Corpus, catalog: &crate::catalog::Catalog) -> Vec<SemanticRecord> {
    corpus
        .iter()
        .map(|t| {
            let reference = toy_nlu(&t.reference, catalog);
            SemanticRecord {
                system: toy_nlu(&t.hypothesis, catalog),
                gold_ood: t.out_of_domain.unwrap_or(reference.ood),
                reference,
            }
        })
        .collect()
}

struct Timer {
    last: Instant,
    laps: Vec<(String, Duration)>,
}

impl Timer {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.laps.push((stage.to_string(), now - self.last));
        self.last = now;
    }
}

/// Runs every stage under `seed`. When `out_dir` is given, intermediate
/// artifacts, report tables and `summary.json` are written there.
pub fn full_pipeline(cfg: &PipelineConfig, seed: u64, out_dir: Option<&Path>) -> Result<PipelineRun> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let write = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        match out_dir {
            Some(dir) => f(&dir.join(name)),
            None => Ok(()),
        }
    };
    let mut timer = Timer {
        last: Instant::now(),
        laps: Vec::new(),
    };
    let child = |name: &str| rng::child_seed(seed, name);

    let corpus = synth_corpus(&cfg.synth, child("synth"))?;
    let (train, test) = split_corpus(&corpus, cfg.train_fraction, child("split"))?;
    write("train.jsonl", &|p| train.save(p, Format::Jsonl))?;
    write("test.jsonl", &|p| test.save(p, Format::Jsonl))?;
    timer.lap("synth");

    let channel = build_confusion(&train, cfg.max_fragment_len)?;
    write("confusion.json", &|p| channel.save(p))?;
    let sim_train = simulate_corpus(&train, &channel, &mut rng::child_stream(seed, "simulate-train"))?;
    let sim_test = simulate_corpus(&test, &channel, &mut rng::child_stream(seed, "simulate-test"))?;
    write("simulated_test.jsonl", &|p| sim_test.save(p, Format::Jsonl))?;
    timer.lap("simulate");

    let train_stats = train.error_stats()?;
    let sim_stats = sim_test.error_stats()?;
    let real_stats = test.error_stats()?;
    let max_share_gap_points = train_stats
        .shares()
        .iter()
        .zip(sim_stats.shares())
        .map(|(a, b)| (a - b).abs() * 100.0)
        .fold(0.0, f64::max);
    let wer = WerSummary {
        train: train_stats,
        real_test: real_stats,
        simulated_test: sim_stats,
        relative_change: (sim_stats.corpus_wer - train_stats.corpus_wer) / train_stats.corpus_wer,
        max_share_gap_points,
    };
    let catalog = &cfg.synth.catalog;
    let semantic_real = semantic_records(&test, catalog);
    let semantic_sim = semantic_records(&sim_test, catalog);
    let semantic_real = semantic_error_rates(&semantic_real)?;
    let semantic_simulated = semantic_error_rates(&semantic_sim)?;
    write("error_distribution.csv", &|p| {
        error_distribution_table(&[("train", train_stats), ("real_test", real_stats), ("simulated_test", sim_stats)]).write(p)
    })?;
    write("semantic.csv", &|p| semantic_table(&[("real", semantic_real), ("simulated", semantic_simulated)]).write(p))?;
    timer.lap("eval-dist");

    let reg = train_score_model(&train, ScoreMode::Regression, &cfg.score)?;
    let cls = train_score_model(&train, ScoreMode::Classification, &cfg.score)?;
    let baseline = ScoreBaseline::fit(&train)?;
    write("score_regression.json", &|p| reg.save(p))?;
    write("score_classification.json", &|p| cls.save(p))?;
    timer.lap("train-score");

    let real_hist = score_histogram(&test.scores())?;
    let reg_pred = reg.predict_corpus(&test, &mut rng::child_stream(seed, "predict-regression"))?;
    let cls_pred = cls.predict_corpus(&test, &mut rng::child_stream(seed, "predict-classification"))?;
    let cls_hist = score_histogram(&cls_pred)?;
    let score = ScoreSummary {
        regression: eval_score_model(&reg, &test, &mut rng::child_stream(seed, "eval-regression"))?,
        classification: eval_score_model(&cls, &test, &mut rng::child_stream(seed, "eval-classification"))?,
        baseline: eval_baseline(&baseline, &test, &mut rng::child_stream(seed, "eval-baseline"))?,
        kl_regression: kl_divergence(&score_histogram(&reg_pred)?, &real_hist, DEFAULT_KL_SMOOTHING)?,
        kl_classification: kl_divergence(&cls_hist, &real_hist, DEFAULT_KL_SMOOTHING)?,
    };
    write("score_histogram.csv", &|p| histogram_table(&real_hist, &cls_hist).write(p))?;
    timer.lap("eval-score");

    let mut discriminator = Vec::new();
    let rescored = [
        ("none", None),
        ("regression", Some(&reg)),
        ("classification", Some(&cls)),
    ];
    for (name, model) in rescored {
        let (st, ss) = match model {
            Some(m) => (
                m.rescore(&sim_train, &mut rng::child_stream(seed, &format!("rescore-train-{name}")))?,
                m.rescore(&sim_test, &mut rng::child_stream(seed, &format!("rescore-test-{name}")))?,
            ),
            None => (sim_train.clone(), sim_test.clone()),
        };
        for dedup in [false, true] {
            let report = run_variant(&train, &st, &test, &ss, model.is_some(), dedup, &cfg.discriminator)?;
            discriminator.push(DiscriminatorVariant {
                scores: name.to_string(),
                dedup,
                report,
            });
        }
    }
    timer.lap("discriminate");

    let env_channel = match cfg.channel_target_wer {
        Some(t) => adjust_self_frequency(&channel, t)?,
        None => channel.clone(),
    };
    let env = DialogEnv::new(cfg.env.clone(), env_channel, Scorer::Model(Box::new(cls.clone())))?;
    let measured_ser = measure_ser(&env, cfg.ser_episodes, &mut rng::child_stream(seed, "ser"))?;
    let eval_seed = child("policy-eval");
    let execute_only = eval_policy(&env, &execute_only_policy(), cfg.eval_episodes, eval_seed, cfg.policy.max_episode_steps)?;
    let mut policy = Vec::with_capacity(cfg.policy_seeds);
    for i in 0..cfg.policy_seeds {
        let run_seed = child(&format!("policy-{i}"));
        let trained = train_policy(&env, &cfg.policy, run_seed)?;
        let report = eval_policy(&env, &trained.policy, cfg.eval_episodes, eval_seed, cfg.policy.max_episode_steps)?;
        write(&format!("policy_{i}.json"), &|p| trained.policy.save(p))?;
        policy.push(PolicyRun {
            seed: run_seed,
            curve: trained.curve,
            trained: report,
            execute_only,
            success_gain_points: (report.success_rate - execute_only.success_rate) * 100.0,
        });
        timer.lap(&format!("train-policy-{i}"));
    }

    let summary = PipelineSummary {
        seed,
        train_turns: train.len(),
        test_turns: test.len(),
        wer,
        semantic_real,
        semantic_simulated,
        score,
        discriminator,
        channel_target_wer: cfg.channel_target_wer,
        measured_ser,
        policy,
    };
    let json = summary.to_json()?;
    write("summary.json", &|p| std::fs::write(p, &json).map_err(|e| Error::io(p, e)))?;
    Ok(PipelineRun {
        summary,
        timings: timer.laps,
    })
}
