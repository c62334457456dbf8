//! Command-line adapters over the library. Each subcommand loads its
//! inputs, calls the matching library function, and writes the outputs
//! plus a [`RunManifest`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::confusion::{adjust_self_frequency, build_confusion, simulate_corpus, ConfusionModel};
use crate::corpus::{synth_corpus, Corpus, Format, SynthConfig};
use crate::dialog_env::{measure_ser, DialogEnv, EnvConfig, Scorer};
use crate::discriminator::run_variant;
use crate::error::{Error, Result};
use crate::evalstats::{error_distribution_table, semantic_error_rates, semantic_table, SemanticRecord};
use crate::learners::GbtConfig;
use crate::pipeline::{full_pipeline, PipelineConfig};
use crate::policy::{eval_policy, execute_only_policy, train_policy, Policy, PolicyConfig};
use crate::rng;
use crate::score_model::{eval_baseline, eval_score_model, train_score_model, ScoreBaseline, ScoreConfig, ScoreModel, ScoreMode};

#[derive(Debug, Parser)]
#[command(name = "noisy-channel", version, about = "Text-level ASR error simulation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Root seed; defaults to $NOISY_CHANNEL_SEED, then a built-in value.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> u64 {
        self.seed.unwrap_or_else(|| rng::seed_from_env(rng::DEFAULT_SEED))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic transcribed corpus.
    SynthCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_turns: Option<usize>,
        #[arg(long)]
        target_wer: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Learn a confusion model from a transcribed corpus.
    TrainConfusion {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_len: usize,
        /// Rescale self-mappings to reach this expected WER.
        #[arg(long)]
        target_wer: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace hypotheses with simulated ones.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fit a confidence-score model.
    TrainScore {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "classification")]
        mode: ScoreMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation and MAE of a score model, or of the baseline fitted on --train.
    EvalScore {
        #[arg(long, conflicts_with = "baseline_train", required_unless_present = "baseline_train")]
        model: Option<PathBuf>,
        #[arg(long = "baseline-train")]
        baseline_train: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train and evaluate a real-vs-simulated discriminator.
    Discriminate {
        #[arg(long)]
        real_train: PathBuf,
        #[arg(long)]
        sim_train: PathBuf,
        #[arg(long)]
        real_test: PathBuf,
        #[arg(long)]
        sim_test: PathBuf,
        #[arg(long)]
        with_score: bool,
        #[arg(long)]
        dedup: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare error-type and semantic error distributions.
    EvalDist {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        semantic_out: Option<PathBuf>,
    },
    /// Train a clarification policy on the noisy dialog environment.
    TrainPolicy {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a trained policy, or the execute-only baseline.
    EvalPolicy {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, conflicts_with = "execute_only", required_unless_present = "execute_only")]
        policy: Option<PathBuf>,
        #[arg(long)]
        execute_only: bool,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Debug, Args)]
pub struct EnvArgs {
    /// Confusion model used as the user's channel.
    #[arg(long)]
    pub channel: PathBuf,
    #[arg(long)]
    pub channel_target_wer: Option<f64>,
    /// Score model for hypotheses; constant 0.5 when absent.
    #[arg(long)]
    pub score_model: Option<PathBuf>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
}

impl EnvArgs {
    fn build(&self) -> Result<DialogEnv> {
        let config = match &self.env_config {
            Some(p) => EnvConfig::load(p)?,
            None => EnvConfig::default(),
        };
        let mut channel = ConfusionModel::load(&self.channel)?;
        if let Some(t) = self.channel_target_wer {
            channel = adjust_self_frequency(&channel, t)?;
        }
        let scorer = match &self.score_model {
            Some(p) => Scorer::Model(Box::new(ScoreModel::load(p)?)),
            None => Scorer::Constant(0.5),
        };
        DialogEnv::new(config, channel, scorer)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [Some(&self.channel), self.score_model.as_ref(), self.env_config.as_ref()]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    /// Per-stage wall-clock time, for multi-stage commands.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<(String, f64)>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
            stages: Vec::new(),
        }
    }

    /// `<output>.manifest.json`, or `manifest.json` inside a directory.
    pub fn path_for(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }

    fn write(&self, output: &Path) -> Result<()> {
        let path = Self::path_for(output);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path, Format::from_path(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn execute(command: Command, m: &mut RunManifest) -> Result<PathBuf> {
    match command {
        Command::SynthCorpus { config, n_turns, target_wer, out, seed } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if let Some(n) = n_turns {
                cfg.n_turns = n;
            }
            if let Some(w) = target_wer {
                cfg.target_wer = w;
            }
            let s = seed.resolve();
            m.config_path = config;
            m.seed = Some(s);
            synth_corpus(&cfg, s)?.save(&out, Format::from_path(&out))?;
            Ok(out)
        }
        Command::TrainConfusion { train, max_len, target_wer, out } => {
            let mut model = build_confusion(&load_corpus(&train)?, max_len)?;
            if let Some(t) = target_wer {
                model = adjust_self_frequency(&model, t)?;
            }
            model.save(&out)?;
            m.inputs.push(train);
            Ok(out)
        }
        Command::Simulate { model, input, out, seed } => {
            let s = seed.resolve();
            let channel = ConfusionModel::load(&model)?;
            let refs = load_corpus(&input)?;
            simulate_corpus(&refs, &channel, &mut rng::stream(s))?.save(&out, Format::from_path(&out))?;
            m.seed = Some(s);
            m.inputs = vec![model, input];
            Ok(out)
        }
        Command::TrainScore { train, mode, config, out } => {
            let cfg: ScoreConfig = match &config {
                Some(p) => read_json(p)?,
                None => ScoreConfig::default(),
            };
            train_score_model(&load_corpus(&train)?, mode, &cfg)?.save(&out)?;
            m.config_path = config;
            m.inputs.push(train);
            Ok(out)
        }
        Command::EvalScore { model, baseline_train, test, out, seed } => {
            let s = seed.resolve();
            let test_corpus = load_corpus(&test)?;
            let report = match (&model, &baseline_train) {
                (Some(p), _) => eval_score_model(&ScoreModel::load(p)?, &test_corpus, &mut rng::stream(s))?,
                (None, Some(p)) => eval_baseline(&ScoreBaseline::fit(&load_corpus(p)?)?, &test_corpus, &mut rng::stream(s))?,
                (None, None) => return Err(Error::Config("need --model or --baseline-train".into())),
            };
            write_json(&out, &report)?;
            m.seed = Some(s);
            m.inputs = model.into_iter().chain(baseline_train).chain([test]).collect();
            Ok(out)
        }
        Command::Discriminate { real_train, sim_train, real_test, sim_test, with_score, dedup, out } => {
            let report = run_variant(
                &load_corpus(&real_train)?,
                &load_corpus(&sim_train)?,
                &load_corpus(&real_test)?,
                &load_corpus(&sim_test)?,
                with_score,
                dedup,
                &GbtConfig::default(),
            )?;
            write_json(&out, &report)?;
            m.inputs = vec![real_train, sim_train, real_test, sim_test];
            Ok(out)
        }
        Command::EvalDist { real, sim, out, semantic_out } => {
            let (r, s) = (load_corpus(&real)?, load_corpus(&sim)?);
            let table = error_distribution_table(&[("real", r.error_stats()?), ("simulated", s.error_stats()?)]);
            m.inputs = vec![real, sim];
            if let Some(p) = &semantic_out {
                let catalog = crate::catalog::Catalog::default();
                let records = |c: &Corpus| -> Vec<SemanticRecord> {
                    c.iter()
                        .map(|t| {
                            let reference = crate::catalog::toy_nlu(&t.reference, &catalog);
                            SemanticRecord {
                                system: crate::catalog::toy_nlu(&t.hypothesis, &catalog),
                                gold_ood: t.out_of_domain.unwrap_or(reference.ood),
                                reference,
                            }
                        })
                        .collect()
                };
                semantic_table(&[("real", semantic_error_rates(&records(&r))?), ("simulated", semantic_error_rates(&records(&s))?)]).write(p)?;
                m.outputs.push(p.clone());
            }
            match out {
                Some(p) => {
                    table.write(&p)?;
                    Ok(p)
                }
                None => {
                    print!("{}", table.to_csv()?);
                    Ok(semantic_out.unwrap_or_default())
                }
            }
        }
        Command::TrainPolicy { env, config, steps, out, seed } => {
            let s = seed.resolve();
            let mut cfg = match &config {
                Some(p) => read_json(p)?,
                None => PolicyConfig::desk(),
            };
            if let Some(n) = steps {
                cfg.total_steps = n;
            }
            let e = env.build()?;
            let trained = train_policy(&e, &cfg, s)?;
            trained.policy.save(&out)?;
            let mut curve = out.clone().into_os_string();
            curve.push(".curve.json");
            let curve = PathBuf::from(curve);
            write_json(&curve, &trained.curve)?;
            m.outputs.push(curve);
            m.seed = Some(s);
            m.config_path = config;
            m.inputs = env.inputs();
            Ok(out)
        }
        Command::EvalPolicy { env, policy, execute_only, episodes, out, seed } => {
            let s = seed.resolve();
            let e = env.build()?;
            let p = match (&policy, execute_only) {
                (_, true) => execute_only_policy(),
                (Some(path), false) => Policy::load(path)?,
                (None, false) => return Err(Error::Config("need --policy or --execute-only".into())),
            };
            let max_steps = match &p {
                Policy::Learned { config, .. } => config.max_episode_steps,
                Policy::Constant { .. } => PolicyConfig::desk().max_episode_steps,
            };
            let report = eval_policy(&e, &p, episodes, s, max_steps)?;
            let ser = measure_ser(&e, episodes, &mut rng::child_stream(s, "ser"))?;
            write_json(&out, &serde_json::json!({ "report": report, "measured_ser": ser }))?;
            m.seed = Some(s);
            m.inputs = env.inputs().into_iter().chain(policy).collect();
            Ok(out)
        }
        Command::Pipeline { config, quick, out_dir, seed } => {
            let s = seed.resolve();
            let cfg = match (&config, quick) {
                (Some(p), _) => PipelineConfig::load(p)?,
                (None, true) => PipelineConfig::quick(),
                (None, false) => PipelineConfig::default(),
            };
            let run = full_pipeline(&cfg, s, Some(&out_dir))?;
            m.stages = run.timings.iter().map(|(n, d)| (n.clone(), d.as_secs_f64())).collect();
            m.seed = Some(s);
            m.config_path = config;
            m.outputs.push(out_dir.join("summary.json"));
            Ok(out_dir)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthCorpus { .. } => "synth-corpus",
        Command::TrainConfusion { .. } => "train-confusion",
        Command::Simulate { .. } => "simulate",
        Command::TrainScore { .. } => "train-score",
        Command::EvalScore { .. } => "eval-score",
        Command::Discriminate { .. } => "discriminate",
        Command::EvalDist { .. } => "eval-dist",
        Command::TrainPolicy { .. } => "train-policy",
        Command::EvalPolicy { .. } => "eval-policy",
        Command::Pipeline { .. } => "pipeline",
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 on any other error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let mut manifest = RunManifest::new(command_name(&cli.command));
    match execute(cli.command, &mut manifest) {
        Ok(primary) => {
            manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
            if primary.as_os_str().is_empty() {
                return 0;
            }
            manifest.outputs.insert(0, primary.clone());
            match manifest.write(&primary) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
