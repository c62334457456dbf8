//! Distribution and semantic comparison metrics plus small CSV tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::ErrorStats;
use crate::catalog::Interpretation;
use crate::error::{Error, Result};

pub const N_BINS: usize = 10;

/// Add-one count smoothing.
pub const DEFAULT_KL_SMOOTHING: f64 = 1.0;

/// Lower edges of the ten score bins, plus 1.0.
pub fn bin_edges() -> [f64; N_BINS + 1] {
    std::array::from_fn(|i| i as f64 / N_BINS as f64)
}

/// Decile of a score in [0, 1]; bin `i` is `[i/10, (i+1)/10)` and the last
/// bin is closed.
pub fn score_bin(score: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Domain(format!("score {score} outside [0, 1]")));
    }
    let edges = bin_edges();
    Ok(edges[1..N_BINS].iter().filter(|e| score >= **e).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram10 {
    pub counts: [u64; N_BINS],
    pub total: u64,
}

impl Histogram10 {
    pub fn shares(&self) -> [f64; N_BINS] {
        std::array::from_fn(|i| if self.total == 0 { 0.0 } else { self.counts[i] as f64 / self.total as f64 })
    }
}

pub fn score_histogram(scores: &[f64]) -> Result<Histogram10> {
    let mut h = Histogram10::default();
    for &s in scores {
        h.counts[score_bin(s)?] += 1;
        h.total += 1;
    }
    Ok(h)
}

/// `Σ p̂ ln(p̂/q̂)` in nats over raw bin weights, after adding `smoothing`
/// to every bin and renormalizing.
pub fn kl_from_weights(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Domain("distributions need the same nonzero number of bins".into()));
    }
    if smoothing < 0.0 || p.iter().chain(q).any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::Domain("bin weights and smoothing must be finite and nonnegative".into()));
    }
    let ps: Vec<f64> = p.iter().map(|w| w + smoothing).collect();
    let qs: Vec<f64> = q.iter().map(|w| w + smoothing).collect();
    let (pt, qt): (f64, f64) = (ps.iter().sum(), qs.iter().sum());
    if pt <= 0.0 || qt <= 0.0 {
        return Err(Error::Domain("empty distribution".into()));
    }
    let mut kl = 0.0;
    for (a, b) in ps.iter().zip(&qs) {
        let (a, b) = (a / pt, b / qt);
        if a > 0.0 {
            if b == 0.0 {
                return Err(Error::Domain("q has an empty bin where p has mass; use smoothing".into()));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn kl_divergence(p: &Histogram10, q: &Histogram10, smoothing: f64) -> Result<f64> {
    if p.total == 0 || q.total == 0 {
        return Err(Error::Domain("KL divergence needs two nonempty histograms".into()));
    }
    let w = |h: &Histogram10| h.counts.iter().map(|c| *c as f64).collect::<Vec<_>>();
    kl_from_weights(&w(p), &w(q), smoothing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMae {
    pub pearson_r: f64,
    pub mae: f64,
    /// Set when either side has zero variance; `pearson_r` is then 0.
    pub zero_variance: bool,
}

pub fn correlation_mae(predicted: &[f64], actual: &[f64]) -> Result<CorrelationMae> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::Domain(format!(
            "need equal nonzero lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let n = predicted.len() as f64;
    let mp = predicted.iter().sum::<f64>() / n;
    let ma = actual.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy, mut abs) = (0.0, 0.0, 0.0, 0.0);
    for (p, a) in predicted.iter().zip(actual) {
        let (dp, da) = (p - mp, a - ma);
        sxy += dp * da;
        sxx += dp * dp;
        syy += da * da;
        abs += (p - a).abs();
    }
    let zero_variance = sxx <= 1e-300 || syy <= 1e-300;
    let pearson_r = if zero_variance {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(CorrelationMae {
        pearson_r,
        mae: abs / n,
        zero_variance,
    })
}

/// One annotated turn: the NLU reading of the reference text, the reading
/// of the system (real or simulated) hypothesis, and the gold domain flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub reference: Interpretation,
    pub system: Interpretation,
    pub gold_ood: bool,
}

/// Error rates of the system text relative to the reference text.
///
/// Intent, slot and semantic errors count disagreement with the reference
/// reading, so the reference's own rate is zero and the relative change is
/// the raw mismatch rate. The out-of-domain rate is measured against the
/// gold flag on both sides; its change is `(sys − ref)/ref`, or the plain
/// difference when the reference reading makes no domain errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub n: usize,
    pub semantic_error_rate_change: f64,
    pub intent_error_rate_change: f64,
    pub slot_error_rate_change: f64,
    pub ood_error_rate_change: f64,
    pub reference_ood_error_rate: f64,
    pub system_ood_error_rate: f64,
    /// True when the OOD change is a difference, not a ratio.
    pub ood_change_is_absolute: bool,
}

pub fn semantic_error_rates(records: &[SemanticRecord]) -> Result<SemanticReport> {
    if records.is_empty() {
        return Err(Error::Domain("semantic error rates need annotated turns".into()));
    }
    let n = records.len() as f64;
    let rate = |f: &dyn Fn(&SemanticRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    let intent = rate(&|r| r.system.intent != r.reference.intent);
    let slot = rate(&|r| r.system.slot != r.reference.slot);
    let ser = rate(&|r| !r.system.same_semantics(&r.reference));
    let ref_ood = rate(&|r| r.reference.ood != r.gold_ood);
    let sys_ood = rate(&|r| r.system.ood != r.gold_ood);
    let absolute = ref_ood == 0.0;
    Ok(SemanticReport {
        n: records.len(),
        semantic_error_rate_change: ser,
        intent_error_rate_change: intent,
        slot_error_rate_change: slot,
        ood_error_rate_change: if absolute { sys_ood - ref_ood } else { (sys_ood - ref_ood) / ref_ood },
        reference_ood_error_rate: ref_ood,
        system_ood_error_rate: sys_ood,
        ood_change_is_absolute: absolute,
    })
}

/// Header plus string rows, written as CSV.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| (*s).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// WER and error-type table: one row per system, with the WER change
/// relative to the first row.
pub fn error_distribution_table(systems: &[(&str, ErrorStats)]) -> Table {
    let mut t = Table::new(&[
        "system",
        "wer",
        "relative_wer_change",
        "substitution_share",
        "insertion_share",
        "deletion_share",
    ]);
    let base = systems.first().map(|(_, s)| s.corpus_wer).unwrap_or(0.0);
    for (name, s) in systems {
        let change = if base > 0.0 { (s.corpus_wer - base) / base } else { 0.0 };
        t.push(vec![
            (*name).to_owned(),
            fmt_num(s.corpus_wer),
            fmt_num(change),
            fmt_num(s.sub_share),
            fmt_num(s.ins_share),
            fmt_num(s.del_share),
        ]);
    }
    t
}

/// Per-bin shares of a real and a simulated histogram with the relative
/// delta `(sim − real)/real` (empty when the real bin is empty).
pub fn histogram_table(real: &Histogram10, sim: &Histogram10) -> Table {
    let mut t = Table::new(&["bin_low", "bin_high", "real_share", "sim_share", "relative_delta"]);
    let (rs, ss) = (real.shares(), sim.shares());
    let edges = bin_edges();
    for i in 0..N_BINS {
        let delta = if rs[i] > 0.0 { fmt_num((ss[i] - rs[i]) / rs[i]) } else { String::new() };
        t.push(vec![format!("{:.1}", edges[i]), format!("{:.1}", edges[i + 1]), fmt_num(rs[i]), fmt_num(ss[i]), delta]);
    }
    t
}

pub fn semantic_table(systems: &[(&str, SemanticReport)]) -> Table {
    let mut t = Table::new(&[
        "system",
        "relative_semantic_error_rate_change",
        "relative_intent_error_rate_change",
        "relative_slot_error_rate_change",
        "relative_out_of_domain_error_rate_change",
    ]);
    for (name, r) in systems {
        t.push(vec![
            (*name).to_owned(),
            fmt_num(r.semantic_error_rate_change),
            fmt_num(r.intent_error_rate_change),
            fmt_num(r.slot_error_rate_change),
            fmt_num(r.ood_error_rate_change),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn boundary_scores() {
        let h = score_histogram(&[0.05, 0.95, 1.0]).unwrap();
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.total, 3);
        assert_eq!(score_bin(0.1).unwrap(), 1);
        assert_eq!(score_bin(0.3).unwrap(), 3);
        assert_eq!(score_bin(0.0).unwrap(), 0);
        assert_eq!(score_histogram(&[]).unwrap(), Histogram10::default());
        assert!(score_histogram(&[1.01]).is_err());
        assert!(score_histogram(&[f64::NAN]).is_err());
    }

    #[test]
    fn uniform_scores_fill_bins_evenly() {
        let mut r = rng::stream(3);
        let scores: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let h = score_histogram(&scores).unwrap();
        for c in h.counts {
            assert!((900..=1100).contains(&c), "{c}");
        }
    }

    #[test]
    fn kl_hand_case() {
        let kl = kl_from_weights(&[0.5, 0.5], &[0.25, 0.75], 0.0).unwrap();
        let oracle = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - oracle).abs() < 1e-12);
        assert!((kl - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kl_requires_nonempty_histograms() {
        let h = score_histogram(&[0.5]).unwrap();
        assert!(kl_divergence(&h, &Histogram10::default(), 1.0).is_err());
    }

    #[test]
    fn correlation_cases() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 / 60.0).collect();
        let same = correlation_mae(&a, &a).unwrap();
        assert!((same.pearson_r - 1.0).abs() < 1e-12 && same.mae == 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        let s = correlation_mae(&shifted, &a).unwrap();
        assert!((s.pearson_r - 1.0).abs() < 1e-12 && (s.mae - 0.1).abs() < 1e-12);
        let flipped: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
        assert!((correlation_mae(&flipped, &a).unwrap().pearson_r + 1.0).abs() < 1e-12);
        let flat = correlation_mae(&vec![0.5; 50], &a).unwrap();
        assert!(flat.zero_variance && flat.pearson_r == 0.0);
        assert!(correlation_mae(&a[..3], &a).is_err());
    }

    #[test]
    fn uniform_noise_mae() {
        let mut r = rng::stream(4);
        let actual: Vec<f64> = (0..10_000).map(|i| i as f64 / 9_999.0).collect();
        let pred: Vec<f64> = actual.iter().map(|a| a + r.random_range(-0.05..0.05)).collect();
        let m = correlation_mae(&pred, &actual).unwrap();
        assert!((m.mae - 0.025).abs() < 0.002, "{}", m.mae);
    }

    fn interp(intent: Option<&str>, slot: Option<&str>) -> Interpretation {
        Interpretation {
            intent: intent.map(str::to_owned),
            slot: slot.map(str::to_owned),
            ood: intent.is_none(),
        }
    }

    #[test]
    fn identical_system_text_has_no_change() {
        let a = interp(Some("get_plot"), Some("up"));
        let b = interp(None, None);
        let records = vec![
            SemanticRecord { reference: a.clone(), system: a, gold_ood: false },
            SemanticRecord { reference: b.clone(), system: b, gold_ood: true },
        ];
        let r = semantic_error_rates(&records).unwrap();
        assert_eq!(
            [r.semantic_error_rate_change, r.intent_error_rate_change, r.slot_error_rate_change, r.ood_error_rate_change],
            [0.0; 4]
        );
        assert!(semantic_error_rates(&[]).is_err());
    }

    #[test]
    fn mismatches_are_counted_per_field() {
        let gold = interp(Some("get_plot"), Some("up"));
        let records = vec![
            SemanticRecord { reference: gold.clone(), system: interp(Some("get_cast"), Some("up")), gold_ood: false },
            SemanticRecord { reference: gold.clone(), system: interp(Some("get_plot"), Some("coco")), gold_ood: false },
            SemanticRecord { reference: gold.clone(), system: interp(None, Some("up")), gold_ood: false },
            SemanticRecord { reference: gold.clone(), system: gold, gold_ood: false },
        ];
        let r = semantic_error_rates(&records).unwrap();
        assert_eq!(r.intent_error_rate_change, 0.5);
        assert_eq!(r.slot_error_rate_change, 0.25);
        assert_eq!(r.semantic_error_rate_change, 0.75);
        assert_eq!(r.ood_error_rate_change, 0.25);
        assert!(r.ood_change_is_absolute);
    }

    #[test]
    fn csv_tables_have_expected_shape() {
        let real = score_histogram(&[0.05, 0.5, 0.95]).unwrap();
        let sim = score_histogram(&[0.5, 0.5, 1.0]).unwrap();
        let csv = histogram_table(&real, &sim).to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "bin_low,bin_high,real_share,sim_share,relative_delta");
        assert_eq!(lines[1], "0.0,0.1,0.333333,0.000000,-1.000000");
        assert_eq!(lines[2], "0.1,0.2,0.000000,0.000000,");
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..50, 10).prop_map(|v| v.into_iter().map(f64::from).collect())
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(p in weights(), q in weights()) {
            prop_assert!(kl_from_weights(&p, &q, 1.0).unwrap() >= 0.0);
        }

        #[test]
        fn kl_of_identical_is_zero(p in weights()) {
            prop_assert!(kl_from_weights(&p, &p, 1.0).unwrap().abs() < 1e-12);
        }

        #[test]
        fn correlation_is_permutation_invariant(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rng::stream(seed));
            let split = |v: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { v.iter().copied().unzip() };
            let (p1, a1) = split(&pairs);
            let (p2, a2) = split(&shuffled);
            let x = correlation_mae(&p1, &a1).unwrap();
            let y = correlation_mae(&p2, &a2).unwrap();
            prop_assert!((x.pearson_r - y.pearson_r).abs() < 1e-9);
            prop_assert!((x.mae - y.mae).abs() < 1e-12);
        }
    }
}
