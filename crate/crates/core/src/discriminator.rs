//! Real-versus-simulated classifier used as a realism probe. Lower held-out
//! accuracy means the simulated output is harder to tell apart.

use serde::{Deserialize, Serialize};

use crate::corpus::{dedup_pairs, Corpus};
use crate::error::{Error, Result};
use crate::learners::{self, GbtConfig, GbtEnsemble};
use crate::score_model::{featurize_pair, TfidfVocab, DEFAULT_MAX_TERMS};

pub const REAL: usize = 0;
pub const SIMULATED: usize = 1;

/// Vocabularies and layout shared by the training and test datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub hyp_vocab: TfidfVocab,
    pub ref_vocab: TfidfVocab,
    pub include_score: bool,
}

impl FeatureSchema {
    /// Fits the vocabularies on the hypotheses and references of both sides.
    pub fn fit(real: &Corpus, simulated: &Corpus, include_score: bool, max_terms: usize) -> Self {
        let both = || real.turns.iter().chain(&simulated.turns);
        Self {
            hyp_vocab: TfidfVocab::fit(both().map(|t| t.hypothesis.as_slice()), max_terms),
            ref_vocab: TfidfVocab::fit(both().map(|t| t.reference.as_slice()), max_terms),
            include_score,
        }
    }

    pub fn dim(&self) -> usize {
        self.hyp_vocab.len() + self.ref_vocab.len() + crate::score_model::N_WER_FEATURES + usize::from(self.include_score)
    }

    fn row(&self, t: &crate::corpus::TranscribedTurn) -> Result<Vec<f64>> {
        let mut x = featurize_pair(&t.reference, &t.hypothesis, &self.hyp_vocab, &self.ref_vocab)?;
        if self.include_score {
            x.push(t.score);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub include_score: bool,
    pub dedup_applied: bool,
    pub schema: FeatureSchema,
}

impl DiscriminatorDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Real rows first, then simulated rows. `simulated` must hold one turn per
/// real turn with the same reference. With `dedup` each side keeps only the
/// first occurrence of every (reference, hypothesis) pair. Without a
/// `schema` one is fitted on these corpora.
pub fn build_dataset(
    real: &Corpus,
    simulated: &Corpus,
    include_score: bool,
    dedup: bool,
    schema: Option<&FeatureSchema>,
) -> Result<DiscriminatorDataset> {
    if real.len() != simulated.len() || real.turns.iter().zip(&simulated.turns).any(|(a, b)| a.reference != b.reference) {
        return Err(Error::Validation(
            "simulated corpus must be generated from the same references as the real corpus".into(),
        ));
    }
    let (real, simulated) = if dedup {
        (dedup_pairs(real), dedup_pairs(simulated))
    } else {
        (real.clone(), simulated.clone())
    };
    let schema = match schema {
        Some(s) if s.include_score != include_score => {
            return Err(Error::Domain("schema and dataset disagree on include_score".into()))
        }
        Some(s) => s.clone(),
        None => FeatureSchema::fit(&real, &simulated, include_score, DEFAULT_MAX_TERMS),
    };
    let mut rows = Vec::with_capacity(real.len() + simulated.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for (corpus, label) in [(&real, REAL), (&simulated, SIMULATED)] {
        for t in &corpus.turns {
            rows.push(schema.row(t)?);
            labels.push(label);
        }
    }
    Ok(DiscriminatorDataset {
        rows,
        labels,
        include_score,
        dedup_applied: dedup,
        schema,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub schema: FeatureSchema,
    pub ensemble: GbtEnsemble,
}

pub fn train_discriminator(dataset: &DiscriminatorDataset, cfg: &GbtConfig) -> Result<Discriminator> {
    let positives = dataset.labels.iter().filter(|l| **l == SIMULATED).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::Domain("discriminator training data needs both real and simulated rows".into()));
    }
    Ok(Discriminator {
        schema: dataset.schema.clone(),
        ensemble: learners::fit_classification(&dataset.rows, &dataset.labels, Some(2), cfg)?,
    })
}

/// Metrics with "simulated" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub n: usize,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive rows; recall reported as 0.
    pub recall_undefined: bool,
}

impl DiscriminatorReport {
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() || predicted.is_empty() {
            return Err(Error::Domain("need equal nonzero numbers of predictions and labels".into()));
        }
        let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
        for (p, a) in predicted.iter().zip(actual) {
            correct += usize::from(p == a);
            match (*p == SIMULATED, *a == SIMULATED) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { (0.0, true) } else { (a as f64 / b as f64, false) };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            accuracy: correct as f64 / actual.len() as f64,
            precision,
            recall,
            f_score,
            n: actual.len(),
            precision_undefined,
            recall_undefined,
        })
    }
}

pub fn evaluate_discriminator(model: &Discriminator, test: &DiscriminatorDataset) -> Result<DiscriminatorReport> {
    if test.schema != model.schema {
        return Err(Error::Domain("test dataset was built with a different feature schema".into()));
    }
    let predicted: Vec<usize> = test.rows.iter().map(|x| model.ensemble.predict_class(x)).collect::<Result<_>>()?;
    DiscriminatorReport::from_predictions(&predicted, &test.labels)
}

/// Trains on (real_train, sim_train) and evaluates on (real_test,
/// sim_test) with one schema fitted on the training side.
pub fn run_variant(
    real_train: &Corpus,
    sim_train: &Corpus,
    real_test: &Corpus,
    sim_test: &Corpus,
    include_score: bool,
    dedup: bool,
    cfg: &GbtConfig,
) -> Result<DiscriminatorReport> {
    let train = build_dataset(real_train, sim_train, include_score, dedup, None)?;
    let test = build_dataset(real_test, sim_test, include_score, dedup, Some(&train.schema))?;
    evaluate_discriminator(&train_discriminator(&train, cfg)?, &test)
}
