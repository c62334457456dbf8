//! Python bindings: alignment, KL, synthetic corpora, the confusion model
//! and the command line.

use noisy_channel::alignment::{align as align_tokens, pair_features, EditKind};
use noisy_channel::confusion::{adjust_self_frequency, build_confusion, simulate_hypothesis, ConfusionModel};
use noisy_channel::corpus::{synth_corpus, tokenize, Corpus, Format, SynthConfig};
use noisy_channel::{evalstats, rng, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Domain(_) | Error::Validation(_) | Error::Range { .. } | Error::Config(_) | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type AlignedTriple = (String, Option<String>, Option<String>);

/// Alignment of `hypothesis` against `reference` (whitespace-tokenized) as
/// `(kind, ref_token, hyp_token)` triples.
#[pyfunction]
fn align(reference: &str, hypothesis: &str) -> PyResult<Vec<AlignedTriple>> {
    let ops = align_tokens(&tokenize(reference), &tokenize(hypothesis)).map_err(to_py)?;
    Ok(ops
        .into_iter()
        .map(|o| {
            let kind = match o.kind {
                EditKind::Match => "match",
                EditKind::Substitute => "substitute",
                EditKind::Insert => "insert",
                EditKind::Delete => "delete",
            };
            (kind.to_string(), o.ref_token, o.hyp_token)
        })
        .collect())
}

/// `(wer, ref_len, n_correct, n_ins, n_del, n_sub)`.
#[pyfunction]
fn wer_features(reference: &str, hypothesis: &str) -> PyResult<(f64, usize, usize, usize, usize, usize)> {
    let f = pair_features(&tokenize(reference), &tokenize(hypothesis)).map_err(to_py)?;
    Ok((f.wer, f.ref_len, f.n_correct, f.n_ins, f.n_del, f.n_sub))
}

#[pyfunction]
#[pyo3(signature = (p, q, smoothing = evalstats::DEFAULT_KL_SMOOTHING))]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>, smoothing: f64) -> PyResult<f64> {
    evalstats::kl_from_weights(&p, &q, smoothing).map_err(to_py)
}

/// Writes a synthetic corpus to `path` (JSONL, or CSV by extension) and
/// returns the number of turns.
#[pyfunction]
#[pyo3(signature = (path, n_turns = 5000, target_wer = 0.2, seed = rng::DEFAULT_SEED))]
fn write_synth_corpus(path: &str, n_turns: usize, target_wer: f64, seed: u64) -> PyResult<usize> {
    let cfg = SynthConfig {
        n_turns,
        target_wer,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, seed).map_err(to_py)?;
    corpus.save(path, Format::from_path(path.as_ref())).map_err(to_py)?;
    Ok(corpus.len())
}

#[pyclass(name = "ConfusionModel", module = "noisy_channel_py")]
struct PyConfusionModel {
    inner: ConfusionModel,
}

#[pymethods]
impl PyConfusionModel {
    /// Learns a model from the transcribed corpus at `path`.
    #[staticmethod]
    #[pyo3(signature = (path, max_len = 3))]
    fn train(path: &str, max_len: usize) -> PyResult<Self> {
        let corpus = Corpus::load(path, Format::from_path(path.as_ref())).map_err(to_py)?;
        Ok(Self {
            inner: build_confusion(&corpus, max_len).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ConfusionModel::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn expected_wer(&self) -> f64 {
        self.inner.expected_wer()
    }

    /// A copy rescaled to the given expected WER.
    fn adjusted(&self, target_wer: f64) -> PyResult<Self> {
        Ok(Self {
            inner: adjust_self_frequency(&self.inner, target_wer).map_err(to_py)?,
        })
    }

    /// One simulated hypothesis for `reference`.
    fn simulate(&self, reference: &str, seed: u64) -> PyResult<String> {
        let hyp = simulate_hypothesis(&tokenize(reference), &self.inner, &mut rng::stream(seed)).map_err(to_py)?;
        Ok(hyp.join(" "))
    }
}

/// Runs the command line with `argv` (without the program name) and returns
/// its exit code.
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    noisy_channel::cli::run(std::iter::once("noisy-channel".to_string()).chain(argv))
}

#[pymodule]
fn noisy_channel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(wer_features, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyConfusionModel>()?;
    Ok(())
}
