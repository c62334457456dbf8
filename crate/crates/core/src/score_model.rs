//! Confidence-score prediction from (reference, hypothesis) text, and the
//! pool-sampling baseline it is compared against.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment;
use crate::corpus::{Corpus, TranscribedTurn};
use crate::error::{Error, Result};
use crate::evalstats::{self, CorrelationMae, N_BINS};
use crate::learners::{self, GbtConfig, GbtEnsemble};
use crate::rng::Stream;

pub const BUNDLE_VERSION: u32 = 1;
pub const DEFAULT_MAX_TERMS: usize = 2_000;
pub const MIN_TRAIN_TURNS: usize = 100;

/// Term-to-column map with smoothed idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocab {
    /// term → (column, idf)
    pub terms: BTreeMap<String, (usize, f64)>,
    pub max_terms: usize,
}

impl TfidfVocab {
    /// Keeps the `max_terms` terms with the highest document frequency
    /// (alphabetical among equals); columns follow alphabetical order.
    /// `idf = ln((1+N)/(1+df)) + 1`.
    pub fn fit<'a, D, S>(documents: D, max_terms: usize) -> Self
    where
        D: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut df: BTreeMap<String, u64> = BTreeMap::new();
        let mut n_docs = 0u64;
        for doc in documents {
            n_docs += 1;
            let unique: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
            for term in unique {
                *df.entry(term.to_owned()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_terms);
        ranked.sort_by(|a, b| a.0.cmp(&b.0));
        let terms = ranked
            .into_iter()
            .enumerate()
            .map(|(col, (term, d))| {
                let idf = ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0;
                (term, (col, idf))
            })
            .collect();
        Self { terms, max_terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Raw-count tf times idf, L2-normalized; unknown terms are dropped.
    pub fn transform_into<S: AsRef<str>>(&self, tokens: &[S], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in tokens {
            if let Some((col, idf)) = self.terms.get(t.as_ref()) {
                out[*col] += idf;
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
    }

    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.transform_into(tokens, &mut out);
        out
    }
}

/// Number of WER features appended after the two TFIDF blocks.
pub const N_WER_FEATURES: usize = 6;

/// `[tfidf(hypothesis) ‖ tfidf(reference) ‖ wer, ref_len, n_correct, n_ins, n_del, n_sub]`
pub fn featurize_pair<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
    hyp_vocab: &TfidfVocab,
    ref_vocab: &TfidfVocab,
) -> Result<Vec<f64>> {
    let (h, r) = (hyp_vocab.len(), ref_vocab.len());
    let mut out = vec![0.0; h + r + N_WER_FEATURES];
    hyp_vocab.transform_into(hypothesis, &mut out[..h]);
    ref_vocab.transform_into(reference, &mut out[h..h + r]);
    let wer = alignment::pair_features(reference, hypothesis)?;
    out[h + r..].copy_from_slice(&wer.to_vec());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Regression,
    Classification,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Self::Regression),
            "classification" => Ok(Self::Classification),
            other => Err(Error::Config(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub max_terms: usize,
    pub gbt: GbtConfig,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            max_terms: DEFAULT_MAX_TERMS,
            gbt: GbtConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub version: u32,
    pub mode: ScoreMode,
    pub hyp_vocab: TfidfVocab,
    pub ref_vocab: TfidfVocab,
    pub ensemble: GbtEnsemble,
    /// Training scores per decile bin; empty in regression mode.
    pub bin_pools: Vec<Vec<f64>>,
    pub bin_edges: Vec<f64>,
}

pub fn fit_vocabularies(train: &Corpus, max_terms: usize) -> (TfidfVocab, TfidfVocab) {
    let hyp = TfidfVocab::fit(train.turns.iter().map(|t| t.hypothesis.as_slice()), max_terms);
    let r = TfidfVocab::fit(train.turns.iter().map(|t| t.reference.as_slice()), max_terms);
    (hyp, r)
}

pub fn featurize_corpus(corpus: &Corpus, hyp_vocab: &TfidfVocab, ref_vocab: &TfidfVocab) -> Result<Vec<Vec<f64>>> {
    corpus
        .turns
        .iter()
        .map(|t| featurize_pair(&t.reference, &t.hypothesis, hyp_vocab, ref_vocab))
        .collect()
}

pub fn train_score_model(train: &Corpus, mode: ScoreMode, cfg: &ScoreConfig) -> Result<ScoreModel> {
    if train.len() < MIN_TRAIN_TURNS {
        return Err(Error::Validation(format!(
            "score model needs at least {MIN_TRAIN_TURNS} training turns, got {}",
            train.len()
        )));
    }
    let (hyp_vocab, ref_vocab) = fit_vocabularies(train, cfg.max_terms);
    let x = featurize_corpus(train, &hyp_vocab, &ref_vocab)?;
    let scores = train.scores();
    let (ensemble, bin_pools) = match mode {
        ScoreMode::Regression => (learners::fit_regression(&x, &scores, &cfg.gbt)?, Vec::new()),
        ScoreMode::Classification => {
            let bins: Vec<usize> = scores.iter().map(|s| evalstats::score_bin(*s)).collect::<Result<_>>()?;
            let mut pools = vec![Vec::new(); N_BINS];
            for (b, s) in bins.iter().zip(&scores) {
                pools[*b].push(*s);
            }
            (learners::fit_classification(&x, &bins, Some(N_BINS), &cfg.gbt)?, pools)
        }
    };
    Ok(ScoreModel {
        version: BUNDLE_VERSION,
        mode,
        hyp_vocab,
        ref_vocab,
        ensemble,
        bin_pools,
        bin_edges: evalstats::bin_edges().to_vec(),
    })
}

impl ScoreModel {
    /// Regression output clamped to [0, 1], or a draw from the training
    /// scores of the predicted bin (the bin midpoint if that pool is empty).
    /// Regression mode leaves `rng` untouched.
    pub fn predict<R: AsRef<str>, H: AsRef<str>>(&self, reference: &[R], hypothesis: &[H], rng: &mut Stream) -> Result<f64> {
        let x = featurize_pair(reference, hypothesis, &self.hyp_vocab, &self.ref_vocab)?;
        match self.mode {
            ScoreMode::Regression => Ok(self.ensemble.predict_value(&x)?.clamp(0.0, 1.0)),
            ScoreMode::Classification => {
                let bin = self.ensemble.predict_class(&x)?;
                Ok(sample_pool(&self.bin_pools[bin], rng).unwrap_or((bin as f64 + 0.5) / N_BINS as f64))
            }
        }
    }

    pub fn predict_corpus(&self, corpus: &Corpus, rng: &mut Stream) -> Result<Vec<f64>> {
        corpus.turns.iter().map(|t| self.predict(&t.reference, &t.hypothesis, rng)).collect()
    }

    /// Copy of `corpus` with every score replaced by a prediction.
    pub fn rescore(&self, corpus: &Corpus, rng: &mut Stream) -> Result<Corpus> {
        let scores = self.predict_corpus(corpus, rng)?;
        let turns = corpus
            .turns
            .iter()
            .zip(scores)
            .map(|(t, score)| TranscribedTurn { score, ..t.clone() })
            .collect();
        Ok(Corpus::new(corpus.id.clone(), turns))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.version != BUNDLE_VERSION {
            return Err(Error::Validation(format!("unsupported score model version {}", model.version)));
        }
        Ok(model)
    }
}

pub fn predict_score<R: AsRef<str>, H: AsRef<str>>(model: &ScoreModel, reference: &[R], hypothesis: &[H], rng: &mut Stream) -> Result<f64> {
    model.predict(reference, hypothesis, rng)
}

fn sample_pool(pool: &[f64], rng: &mut Stream) -> Option<f64> {
    (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
}

/// Draws scores from the training distribution of turns with or without
/// recognition errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBaseline {
    pub error_pool: Vec<f64>,
    pub no_error_pool: Vec<f64>,
}

impl ScoreBaseline {
    pub fn fit(train: &Corpus) -> Result<Self> {
        let (mut error_pool, mut no_error_pool) = (Vec::new(), Vec::new());
        for t in &train.turns {
            if t.has_error() { &mut error_pool } else { &mut no_error_pool }.push(t.score);
        }
        if error_pool.is_empty() && no_error_pool.is_empty() {
            return Err(Error::Validation("baseline needs at least one training turn".into()));
        }
        Ok(Self { error_pool, no_error_pool })
    }

    /// Uniform draw from the selected pool. The flag is set when that pool
    /// was empty and the other one was used.
    pub fn sample(&self, has_error: bool, rng: &mut Stream) -> (f64, bool) {
        let (primary, other) = if has_error {
            (&self.error_pool, &self.no_error_pool)
        } else {
            (&self.no_error_pool, &self.error_pool)
        };
        match sample_pool(primary, rng) {
            Some(s) => (s, false),
            None => {
                warn!("baseline pool for has_error={has_error} is empty; drawing from the other pool");
                (sample_pool(other, rng).expect("fit guarantees a nonempty pool"), true)
            }
        }
    }
}

pub fn baseline_score(baseline: &ScoreBaseline, has_error: bool, rng: &mut Stream) -> f64 {
    baseline.sample(has_error, rng).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEval {
    pub linear_correlation: f64,
    pub mean_abs_error: f64,
    pub degenerate: bool,
    pub n: usize,
}

impl From<(CorrelationMae, usize)> for ScoreEval {
    fn from((m, n): (CorrelationMae, usize)) -> Self {
        Self {
            linear_correlation: m.pearson_r,
            mean_abs_error: m.mae,
            degenerate: m.zero_variance,
            n,
        }
    }
}

fn check_test(test: &Corpus) -> Result<()> {
    if test.len() < 2 {
        return Err(Error::Validation("score evaluation needs at least two test turns".into()));
    }
    Ok(())
}

/// Predictions on the recorded hypotheses against the recorded scores.
pub fn eval_score_model(model: &ScoreModel, test: &Corpus, rng: &mut Stream) -> Result<ScoreEval> {
    check_test(test)?;
    let predicted = model.predict_corpus(test, rng)?;
    Ok((evalstats::correlation_mae(&predicted, &test.scores())?, test.len()).into())
}

pub fn eval_baseline(baseline: &ScoreBaseline, test: &Corpus, rng: &mut Stream) -> Result<ScoreEval> {
    check_test(test)?;
    let predicted: Vec<f64> = test.turns.iter().map(|t| baseline_score(baseline, t.has_error(), rng)).collect();
    Ok((evalstats::correlation_mae(&predicted, &test.scores())?, test.len()).into())
}
