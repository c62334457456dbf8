//! Fragment (n-gram) confusion model.
//!
//! Training aligns every reference with its hypothesis and records, for each
//! reference fragment of up to `max_fragment_len` words, the hypothesis
//! words aligned to it. Inserted hypothesis words belong to the preceding
//! reference word, or to the first reference word when they lead the
//! hypothesis. Simulation partitions a clean reference into fragments using
//! the fragment frequencies, then replaces each fragment with a sample from
//! its confusion row. Words never seen in training are mapped to their
//! closest in-vocabulary word by a character-level similarity ratio.
//!
//! Fragments and replacements are keyed by their space-joined tokens; the
//! empty string is the deletion replacement.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, EditKind};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_MAX_FRAGMENT_LEN: usize = 3;

/// Weighted replacement row of one fragment.
pub type ConfusionRow = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub version: u32,
    pub max_fragment_len: usize,
    /// Corpus WER of the training pairs.
    pub train_wer: f64,
    /// WER the self-replacement weights were rescaled to, if any.
    pub target_wer: Option<f64>,
    pub vocabulary: BTreeSet<String>,
    pub fragment_freq: BTreeMap<String, u64>,
    pub confusion: BTreeMap<String, ConfusionRow>,
}

fn key<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

fn tokens(key: &str) -> Vec<String> {
    key.split_whitespace().map(str::to_owned).collect()
}

/// Hypothesis words aligned to each reference word.
fn aligned_spans(reference: &[String], hypothesis: &[String]) -> Result<Vec<Vec<String>>> {
    let ops = alignment::align(reference, hypothesis)?;
    let mut spans: Vec<Vec<String>> = vec![Vec::new(); reference.len()];
    let mut leading = Vec::new();
    let mut current: Option<usize> = None;
    for op in ops {
        match op.kind {
            EditKind::Match | EditKind::Substitute => {
                let i = current.map_or(0, |c| c + 1);
                spans[i].extend(op.hyp_token);
                current = Some(i);
            }
            EditKind::Delete => current = Some(current.map_or(0, |c| c + 1)),
            EditKind::Insert => match current {
                Some(i) => spans[i].extend(op.hyp_token),
                None => leading.extend(op.hyp_token),
            },
        }
    }
    if !leading.is_empty() {
        leading.append(&mut spans[0]);
        spans[0] = leading;
    }
    Ok(spans)
}

pub fn build_confusion(train: &Corpus, max_fragment_len: usize) -> Result<ConfusionModel> {
    if train.is_empty() {
        return Err(Error::Domain("cannot build a confusion model from an empty corpus".into()));
    }
    if max_fragment_len == 0 {
        return Err(Error::Domain("max_fragment_len must be at least 1".into()));
    }
    let mut confusion: BTreeMap<String, ConfusionRow> = BTreeMap::new();
    let mut fragment_freq: BTreeMap<String, u64> = BTreeMap::new();
    let mut vocabulary = BTreeSet::new();
    for turn in train {
        let spans = aligned_spans(&turn.reference, &turn.hypothesis)?;
        let n = turn.reference.len();
        vocabulary.extend(turn.reference.iter().cloned());
        for start in 0..n {
            for end in start + 1..=(start + max_fragment_len).min(n) {
                let fragment = key(&turn.reference[start..end]);
                let replacement = key(&spans[start..end].concat());
                *confusion.entry(fragment.clone()).or_default().entry(replacement).or_insert(0.0) += 1.0;
                *fragment_freq.entry(fragment).or_insert(0) += 1;
            }
        }
    }
    Ok(ConfusionModel {
        version: MODEL_VERSION,
        max_fragment_len,
        train_wer: train.error_stats()?.corpus_wer,
        target_wer: None,
        vocabulary,
        fragment_freq,
        confusion,
    })
}

/// Similarity ratio `2·M / (|a| + |b|)` where `M` counts the characters in
/// the recursive longest-matching-block decomposition of `a` and `b`.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / (a.len() + b.len()) as f64
}

fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut total = 0;
    let mut stack = vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        let (i, j, k) = longest_match(a, b, alo, ahi, blo, bhi);
        if k == 0 {
            continue;
        }
        total += k;
        if alo < i && blo < j {
            stack.push((alo, i, blo, j));
        }
        if i + k < ahi && j + k < bhi {
            stack.push((i + k, ahi, j + k, bhi));
        }
    }
    total
}

/// Longest common block in `a[alo..ahi]`, `b[blo..bhi]`; earliest in `a`,
/// then earliest in `b`, among equally long blocks.
fn longest_match(a: &[char], b: &[char], alo: usize, ahi: usize, blo: usize, bhi: usize) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best_k) = (alo, blo, 0);
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let c = j - blo + 1;
            cur[c] = if a[i] == b[j] { prev[c - 1] + 1 } else { 0 };
            let k = cur[c];
            let (si, sj) = (i + 1 - k, j + 1 - k);
            if k > best_k || (k == best_k && k > 0 && (si, sj) < (best_i, best_j)) {
                best_i = si;
                best_j = sj;
                best_k = k;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.iter_mut().for_each(|x| *x = 0);
    }
    (best_i, best_j, best_k)
}

fn sample_row<'a>(row: &'a ConfusionRow, rng: &mut Stream) -> Option<&'a str> {
    let total: f64 = row.values().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (replacement, w) in row {
        if *w <= 0.0 {
            continue;
        }
        if u < *w {
            return Some(replacement);
        }
        u -= w;
        last = Some(replacement.as_str());
    }
    last
}

/// Expected edits per reference word when the self weight of every row is
/// multiplied by `scale`, estimated from the single-word rows.
fn expected_wer_at(model: &ConfusionModel, scale: f64) -> f64 {
    let (mut edits, mut words) = (0.0, 0.0);
    for (fragment, row) in &model.confusion {
        if fragment.contains(' ') {
            continue;
        }
        let weight = model.fragment_freq.get(fragment).copied().unwrap_or(0) as f64;
        if weight == 0.0 {
            continue;
        }
        let source = [fragment.as_str()];
        let (mut err_mass, mut err_edits, mut self_mass) = (0.0, 0.0, 0.0);
        for (replacement, w) in row {
            if replacement == fragment {
                self_mass += w;
            } else {
                err_mass += w;
                err_edits += w * alignment::edit_distance(&source, &tokens(replacement)) as f64;
            }
        }
        let denom = scale * self_mass + err_mass;
        if denom > 0.0 {
            edits += weight * err_edits / denom;
        }
        words += weight;
    }
    if words > 0.0 {
        edits / words
    } else {
        0.0
    }
}

impl ConfusionModel {
    pub fn row(&self, fragment: &str) -> Option<&ConfusionRow> {
        self.confusion.get(fragment)
    }

    pub fn freq(&self, fragment: &str) -> u64 {
        self.fragment_freq.get(fragment).copied().unwrap_or(0)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.vocabulary.contains(word)
    }

    /// Probability that an out-of-vocabulary word is corrupted.
    pub fn oov_error_probability(&self) -> f64 {
        self.target_wer.unwrap_or(self.train_wer).clamp(0.0, 1.0)
    }

    /// Simulated WER predicted from the single-word rows.
    pub fn expected_wer(&self) -> f64 {
        expected_wer_at(self, 1.0)
    }

    /// Closest vocabulary word to `word`; ties go to the lexicographically
    /// smallest candidate.
    pub fn closest_word(&self, word: &str) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for candidate in &self.vocabulary {
            let r = similarity(word, candidate);
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((candidate, r));
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "confusion model version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Splits `utterance` into fragments. Each word joins the growing fragment
/// `g` with probability `freq(g + w) / freq(g)` while `g` is shorter than
/// `max_fragment_len`, otherwise it starts a new fragment.
pub fn partition_utterance<S: AsRef<str>>(
    utterance: &[S],
    model: &ConfusionModel,
    rng: &mut Stream,
) -> Vec<Vec<String>> {
    let mut fragments: Vec<Vec<String>> = Vec::new();
    for word in utterance {
        let word = word.as_ref().to_owned();
        let join = match fragments.last() {
            Some(g) if g.len() < model.max_fragment_len => {
                let g_freq = model.freq(&key(g));
                if g_freq == 0 {
                    false
                } else {
                    let joined = format!("{} {}", key(g), word);
                    let p = model.freq(&joined) as f64 / g_freq as f64;
                    rng.random::<f64>() < p
                }
            }
            _ => false,
        };
        match fragments.last_mut() {
            Some(g) if join => g.push(word),
            _ => fragments.push(vec![word]),
        }
    }
    fragments
}

/// Replacement for an out-of-vocabulary word: the word itself with
/// probability `1 − P̂`, otherwise a sample from the confusion row of its
/// closest vocabulary word.
pub fn map_oov(word: &str, model: &ConfusionModel, rng: &mut Stream) -> Result<Vec<String>> {
    let Some((closest, _)) = model.closest_word(word) else {
        return Err(Error::Domain("cannot map out-of-vocabulary words with an empty vocabulary".into()));
    };
    if rng.random::<f64>() >= model.oov_error_probability() {
        return Ok(vec![word.to_owned()]);
    }
    let replacement = model
        .row(closest)
        .and_then(|row| sample_row(row, rng))
        .unwrap_or(closest);
    Ok(tokens(replacement))
}

pub fn simulate_hypothesis<S: AsRef<str>>(
    reference: &[S],
    model: &ConfusionModel,
    rng: &mut Stream,
) -> Result<Vec<String>> {
    if reference.is_empty() {
        return Err(Error::Domain("cannot simulate from an empty reference".into()));
    }
    let mut out = Vec::with_capacity(reference.len() + 2);
    for fragment in partition_utterance(reference, model, rng) {
        if fragment.len() == 1 && !model.contains_word(&fragment[0]) {
            out.extend(map_oov(&fragment[0], model, rng)?);
            continue;
        }
        let k = key(&fragment);
        match model.row(&k).and_then(|row| sample_row(row, rng)) {
            Some(replacement) => out.extend(replacement.split_whitespace().map(str::to_owned)),
            None => out.extend(fragment),
        }
    }
    Ok(out)
}

/// Simulates every reference of `references`, keeping the reference side
/// and semantics. The score of each simulated turn is left at the source
/// turn's value; score models overwrite it.
pub fn simulate_corpus(references: &Corpus, model: &ConfusionModel, rng: &mut Stream) -> Result<Corpus> {
    let mut turns = Vec::with_capacity(references.len());
    for turn in references {
        let mut t = turn.clone();
        t.hypothesis = simulate_hypothesis(&turn.reference, model, rng)?;
        turns.push(t);
    }
    Ok(Corpus::new(format!("{}-sim", references.id), turns))
}

/// Rescales every self-replacement weight by one common factor so the
/// expected simulated WER equals `target_wer`. A target of zero collapses
/// every row to its self entry.
pub fn adjust_self_frequency(model: &ConfusionModel, target_wer: f64) -> Result<ConfusionModel> {
    if !target_wer.is_finite() || target_wer < 0.0 {
        return Err(Error::Domain(format!("target WER {target_wer} must be a finite nonnegative number")));
    }
    let mut adjusted = model.clone();
    adjusted.target_wer = Some(target_wer);
    if target_wer == 0.0 {
        for (fragment, row) in adjusted.confusion.iter_mut() {
            let mass = model.freq(fragment).max(1) as f64;
            *row = BTreeMap::from([(fragment.clone(), mass)]);
        }
        return Ok(adjusted);
    }

    const TOLERANCE: f64 = 1e-3;
    let maximum = expected_wer_at(model, 0.0);
    if target_wer > maximum + TOLERANCE {
        return Err(Error::Range {
            requested: target_wer,
            maximum,
        });
    }
    // WER is decreasing in the scale; bracket the root, then bisect on log scale.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while expected_wer_at(model, hi) > target_wer {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Domain(format!(
                "target WER {target_wer} is below the floor {:.4} set by rows without a self entry",
                expected_wer_at(model, hi)
            )));
        }
    }
    let scale = if target_wer >= maximum {
        0.0
    } else {
        for _ in 0..200 {
            let mid = if lo == 0.0 { hi / 2.0 } else { (lo * hi).sqrt() };
            if expected_wer_at(model, mid) > target_wer {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    for (fragment, row) in adjusted.confusion.iter_mut() {
        if let Some(w) = row.get_mut(fragment) {
            *w *= scale;
        }
    }
    Ok(adjusted)
}
