//! Transcribed-turn corpora: loading, splitting, deduplication and a
//! synthetic generator with a known noise process.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::alignment;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Lowercases, strips punctuation (apostrophes survive) and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !(c.is_ascii_punctuation() && *c != '\''))
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Semantics {
    pub intent: String,
    pub slot: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscribedTurn {
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub score: f64,
    pub semantics: Option<Semantics>,
    pub out_of_domain: Option<bool>,
}

impl TranscribedTurn {
    pub fn new(reference: Vec<String>, hypothesis: Vec<String>, score: f64) -> Result<Self> {
        let turn = Self {
            reference,
            hypothesis,
            score,
            semantics: None,
            out_of_domain: None,
        };
        turn.validate()?;
        Ok(turn)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!("score {} outside [0, 1]", self.score)));
        }
        if self.reference.is_empty() {
            return Err(Error::Validation("empty reference".into()));
        }
        if self
            .reference
            .iter()
            .chain(&self.hypothesis)
            .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Validation("tokens must be non-empty and whitespace-free".into()));
        }
        Ok(())
    }

    pub fn has_error(&self) -> bool {
        self.reference != self.hypothesis
    }
}

/// On-disk record layout shared by the JSONL and CSV formats.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    reference: String,
    hypothesis: String,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ood: Option<bool>,
}

impl Record {
    fn into_turn(self) -> Result<TranscribedTurn> {
        let semantics = match (self.intent, self.slot) {
            (Some(intent), slot) => Some(Semantics {
                intent,
                slot: slot.unwrap_or_default(),
            }),
            (None, _) => None,
        };
        let turn = TranscribedTurn {
            reference: tokenize(&self.reference),
            hypothesis: tokenize(&self.hypothesis),
            score: self.score,
            semantics,
            out_of_domain: self.ood,
        };
        turn.validate()?;
        Ok(turn)
    }

    fn from_turn(turn: &TranscribedTurn) -> Self {
        Record {
            reference: turn.reference.join(" "),
            hypothesis: turn.hypothesis.join(" "),
            score: turn.score,
            intent: turn.semantics.as_ref().map(|s| s.intent.clone()),
            slot: turn.semantics.as_ref().map(|s| s.slot.clone()),
            ood: turn.out_of_domain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub id: String,
    pub turns: Vec<TranscribedTurn>,
}

impl Corpus {
    pub fn new(id: impl Into<String>, turns: Vec<TranscribedTurn>) -> Self {
        Self { id: id.into(), turns }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TranscribedTurn> {
        self.turns.iter()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[String], &[String])> {
        self.turns.iter().map(|t| (t.reference.as_slice(), t.hypothesis.as_slice()))
    }

    pub fn scores(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.score).collect()
    }

    pub fn error_stats(&self) -> Result<alignment::ErrorStats> {
        alignment::aggregate_error_stats(self.pairs())
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("corpus")
            .to_owned();
        let mut turns = Vec::new();
        match format {
            Format::Jsonl => {
                for (i, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let parse_err = |message: String| Error::Parse {
                        path: path.to_owned(),
                        line: i + 1,
                        message,
                    };
                    let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
                    turns.push(record.into_turn().map_err(|e| parse_err(e.to_string()))?);
                }
            }
            Format::Csv => {
                let mut reader = csv::Reader::from_reader(file);
                for (i, row) in reader.deserialize::<Record>().enumerate() {
                    // Header is line 1.
                    let parse_err = |message: String| Error::Parse {
                        path: path.to_owned(),
                        line: i + 2,
                        message,
                    };
                    let record = row.map_err(|e| parse_err(e.to_string()))?;
                    turns.push(record.into_turn().map_err(|e| parse_err(e.to_string()))?);
                }
            }
        }
        Ok(Corpus { id, turns })
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        match format {
            Format::Jsonl => {
                let mut w = BufWriter::new(file);
                for turn in &self.turns {
                    serde_json::to_writer(&mut w, &Record::from_turn(turn))?;
                    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            Format::Csv => {
                // Every column on every row; empty cells read back as absent.
                let mut w = csv::Writer::from_writer(file);
                w.write_record(["reference", "hypothesis", "score", "intent", "slot", "ood"])?;
                for turn in &self.turns {
                    let r = Record::from_turn(turn);
                    w.write_record([
                        r.reference,
                        r.hypothesis,
                        r.score.to_string(),
                        r.intent.unwrap_or_default(),
                        r.slot.unwrap_or_default(),
                        r.ood.map(|b| b.to_string()).unwrap_or_default(),
                    ])?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a TranscribedTurn;
    type IntoIter = std::slice::Iter<'a, TranscribedTurn>;

    fn into_iter(self) -> Self::IntoIter {
        self.turns.iter()
    }
}

/// Number of training turns for `n` turns at `train_fraction`: `n·f`
/// rounded half away from zero (64,830 at 0.75 gives 48,623).
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    ((n as f64) * train_fraction).round() as usize
}

/// Random train/test partition. Both halves keep the original turn order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::Domain("cannot split an empty corpus".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n = corpus.len();
    let k = train_size(n, train_fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed));
    let (train_idx, test_idx) = idx.split_at_mut(k);
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let take = |ix: &[usize], suffix: &str| {
        Corpus::new(
            format!("{}-{suffix}", corpus.id),
            ix.iter().map(|&i| corpus.turns[i].clone()).collect(),
        )
    };
    Ok((take(train_idx, "train"), take(test_idx, "test")))
}

/// Keeps the first turn of every distinct (reference, hypothesis) pair.
pub fn dedup_pairs(corpus: &Corpus) -> Corpus {
    let mut seen = HashSet::new();
    let turns = corpus
        .turns
        .iter()
        .filter(|t| seen.insert((t.reference.clone(), t.hypothesis.clone())))
        .cloned()
        .collect();
    Corpus::new(corpus.id.clone(), turns)
}

/// Relative weights of the three error types injected by the synthesizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMix {
    pub substitution: f64,
    pub insertion: f64,
    pub deletion: f64,
}

impl Default for ErrorMix {
    fn default() -> Self {
        Self {
            substitution: 0.50,
            insertion: 0.17,
            deletion: 0.33,
        }
    }
}

/// Scores are Beta-distributed with mean
/// `m = clamp(intercept − slope·wer + d(reference), 0.01, 0.99)` and
/// concentration `κ`, i.e. `Beta(κm, κ(1−m))`. `wer` is the measured
/// per-turn WER and `d` a fixed per-utterance difficulty, uniform in
/// `±utterance_spread` and derived from a hash of the reference text, so
/// repeated utterances share it. Small `κ` gives the skewed, wide spread of
/// recognizer confidences; large `κ` pins scores to `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    pub intercept: f64,
    pub slope: f64,
    pub concentration: f64,
    #[serde(default)]
    pub utterance_spread: f64,
}

impl Default for ScoreRule {
    fn default() -> Self {
        Self {
            intercept: 0.9,
            slope: 1.0,
            concentration: 2.0,
            utterance_spread: 0.4,
        }
    }
}

impl ScoreRule {
    pub fn difficulty<S: AsRef<str>>(&self, reference: &[S]) -> f64 {
        if self.utterance_spread == 0.0 {
            return 0.0;
        }
        let text: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        let h = rng::child_seed(0, &text.join(" "));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        self.utterance_spread * (2.0 * u - 1.0)
    }

    pub fn mean<S: AsRef<str>>(&self, wer: f64, reference: &[S]) -> f64 {
        (self.intercept - self.slope * wer + self.difficulty(reference)).clamp(0.01, 0.99)
    }

    pub fn sample<S: AsRef<str>>(&self, wer: f64, reference: &[S], rng: &mut Stream) -> f64 {
        let m = self.mean(wer, reference);
        let k = self.concentration;
        Beta::new(k * m, k * (1.0 - m)).expect("validated concentration").sample(rng).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_turns: usize,
    pub catalog: Catalog,
    /// Share of turns rendered from the out-of-domain utterances.
    pub ood_fraction: f64,
    pub target_wer: f64,
    pub error_mix: ErrorMix,
    /// Spread of the per-turn error rate around `target_wer`: each turn's
    /// error probability is `target_wer · m` with `m ~ Gamma(1/spread², spread²)`
    /// (mean 1). Zero gives every turn the same rate.
    pub turn_rate_spread: f64,
    /// Zipf exponent over slot values and templates in catalog order: the
    /// item of rank `r` is drawn with weight `r^−s`. Zero is uniform.
    #[serde(default)]
    pub popularity_exponent: f64,
    /// Preferred substitutes for specific words (acoustic neighbours).
    pub confusables: BTreeMap<String, Vec<String>>,
    /// Fallback substitutes and insertion fillers.
    pub noise_words: Vec<String>,
    pub score_rule: ScoreRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let pairs: &[(&str, &[&str])] = &[
            ("stars", &["cars", "stairs", "star"]),
            ("plot", &["plod", "lot", "blot"]),
            ("the", &["a", "that"]),
            ("me", &["be", "my"]),
            ("who", &["how", "whom"]),
            ("cast", &["cost", "cask"]),
            ("rating", &["writing", "raiding"]),
            ("rated", &["great", "rate"]),
            ("directed", &["detected", "direct"]),
            ("director", &["directory", "detector"]),
            ("playing", &["paying", "praying"]),
            ("showtimes", &["show", "times"]),
            ("about", &["a", "bout"]),
            ("good", &["could", "wood"]),
            ("actors", &["factors", "actor"]),
            ("inception", &["reception", "deception"]),
            ("avatar", &["avatars", "havana"]),
            ("titanic", &["titan", "tick"]),
            ("frozen", &["chosen", "frozed"]),
            ("jaws", &["laws", "jars"]),
            ("alien", &["allen", "alan"]),
            ("gladiator", &["radiator", "glad"]),
            ("casablanca", &["casa", "blanca"]),
            ("vertigo", &["vertical", "virgo"]),
            ("psycho", &["cycle", "psych"]),
            ("rocky", &["rock", "rookie"]),
            ("up", &["app", "op"]),
            ("coco", &["cocoa", "cuckoo"]),
            ("matrix", &["mattress", "metrics"]),
            ("star", &["stars", "car"]),
            ("wars", &["words", "was"]),
            ("toy", &["boy", "troy"]),
            ("story", &["store", "sorry"]),
            ("godfather", &["grandfather", "godmother"]),
            ("black", &["back", "block"]),
            ("panther", &["pants", "panda"]),
            ("finding", &["binding", "find"]),
            ("nemo", &["memo", "demo"]),
            ("dark", &["park", "bark"]),
            ("knight", &["night", "nights"]),
        ];
        Self {
            n_turns: 5_000,
            catalog: Catalog::default(),
            ood_fraction: 0.1,
            target_wer: 0.2,
            error_mix: ErrorMix::default(),
            turn_rate_spread: 1.0,
            popularity_exponent: 1.5,
            confusables: pairs
                .iter()
                .map(|(w, subs)| ((*w).to_owned(), subs.iter().map(|s| (*s).to_owned()).collect()))
                .collect(),
            noise_words: ["uh", "um", "and", "in", "it", "so", "to", "is"]
                .iter()
                .map(|s| (*s).to_owned())
                .collect(),
            score_rule: ScoreRule::default(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        if !(0.0..=1.0).contains(&self.target_wer) {
            return Err(Error::Config(format!("target WER {} not in [0, 1]", self.target_wer)));
        }
        let m = self.error_mix;
        if [m.substitution, m.insertion, m.deletion].iter().any(|w| *w < 0.0)
            || m.substitution + m.insertion + m.deletion <= 0.0
        {
            return Err(Error::Config("error mixture weights must be nonnegative with a positive sum".into()));
        }
        if self.noise_words.is_empty() {
            return Err(Error::Config("noise word list is empty".into()));
        }
        if !(0.0..1.0).contains(&self.ood_fraction) {
            return Err(Error::Config("ood_fraction must be in [0, 1)".into()));
        }
        if !(self.score_rule.concentration > 0.0 && self.score_rule.concentration.is_finite()) {
            return Err(Error::Config("score concentration must be positive and finite".into()));
        }
        if !(self.popularity_exponent >= 0.0 && self.popularity_exponent.is_finite()) {
            return Err(Error::Config("popularity_exponent must be finite and nonnegative".into()));
        }
        if self.turn_rate_spread < 0.0 {
            return Err(Error::Config("turn_rate_spread must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum ErrorType {
    Substitution,
    Insertion,
    Deletion,
}

/// Index in `0..n` drawn with weight `(i+1)^−s`.
fn zipf_index(n: usize, s: f64, rng: &mut Stream) -> usize {
    if s == 0.0 {
        return rng.random_range(0..n);
    }
    let weights = (1..=n).map(|r| (r as f64).powf(-s));
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    n - 1
}

/// Generates a corpus from the catalog templates with per-token error
/// injection at the configured rate and mixture, then scores every turn with
/// the configured [`ScoreRule`].
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let catalog = &config.catalog;
    let mut rng = rng::stream(seed);
    let mix = config.error_mix;
    let mix_total = mix.substitution + mix.insertion + mix.deletion;
    let spread = config.turn_rate_spread;
    let rate_multiplier = if spread > 0.0 {
        let shape = 1.0 / (spread * spread);
        Some(rand_distr::Gamma::new(shape, 1.0 / shape).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut turns = Vec::with_capacity(config.n_turns);
    for _ in 0..config.n_turns {
        let (reference, semantics, ood) =
            if !catalog.out_of_domain.is_empty() && rng.random::<f64>() < config.ood_fraction {
                let text = &catalog.out_of_domain[rng.random_range(0..catalog.out_of_domain.len())];
                (tokenize(text), None, true)
            } else {
                let intent = &catalog.intents[rng.random_range(0..catalog.intents.len())];
                let template = &intent.templates[zipf_index(intent.templates.len(), config.popularity_exponent, &mut rng)];
                let slot = &catalog.slots[zipf_index(catalog.slots.len(), config.popularity_exponent, &mut rng)];
                let sem = Semantics {
                    intent: intent.name.clone(),
                    slot: slot.clone(),
                };
                (Catalog::render(template, slot), Some(sem), false)
            };

        let rate = match &rate_multiplier {
            Some(g) => (config.target_wer * g.sample(&mut rng)).min(1.0),
            None => config.target_wer,
        };
        let mut hypothesis = Vec::with_capacity(reference.len() + 2);
        for word in &reference {
            if rate <= 0.0 || rng.random::<f64>() >= rate {
                hypothesis.push(word.clone());
                continue;
            }
            let u = rng.random::<f64>() * mix_total;
            let kind = if u < mix.substitution {
                ErrorType::Substitution
            } else if u < mix.substitution + mix.insertion {
                ErrorType::Insertion
            } else {
                ErrorType::Deletion
            };
            match kind {
                ErrorType::Substitution => {
                    let candidates = config.confusables.get(word).unwrap_or(&config.noise_words);
                    let sub = &candidates[rng.random_range(0..candidates.len())];
                    hypothesis.push(sub.clone());
                }
                ErrorType::Insertion => {
                    hypothesis.push(word.clone());
                    let filler = &config.noise_words[rng.random_range(0..config.noise_words.len())];
                    hypothesis.push(filler.clone());
                }
                ErrorType::Deletion => {}
            }
        }
        let wer = alignment::pair_features(&reference, &hypothesis)?.wer;
        let score = config.score_rule.sample(wer, &reference, &mut rng);
        turns.push(TranscribedTurn {
            reference,
            hypothesis,
            score,
            semantics,
            out_of_domain: Some(ood),
        });
    }
    Ok(Corpus::new(format!("synth-{seed}"), turns))
}
