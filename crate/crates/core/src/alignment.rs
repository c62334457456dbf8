//! Word-level Levenshtein alignment and WER bookkeeping.
//!
//! Costs are unit: substitution, insertion and deletion each cost 1, a match
//! costs 0. When several alignments share the minimal cost the traversal
//! prefers, at every cell, a diagonal step (match or substitution), then a
//! deletion, then an insertion. The resulting alignment is unique for a
//! given input pair, which keeps the confusion tables reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// One step of an alignment.
///
/// `Match`/`Substitute` carry both tokens, `Insert` only the hypothesis
/// token and `Delete` only the reference token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub ref_token: Option<String>,
    pub hyp_token: Option<String>,
}

impl EditOp {
    pub fn matched(token: &str) -> Self {
        Self {
            kind: EditKind::Match,
            ref_token: Some(token.to_owned()),
            hyp_token: Some(token.to_owned()),
        }
    }

    pub fn substitute(reference: &str, hypothesis: &str) -> Self {
        Self {
            kind: EditKind::Substitute,
            ref_token: Some(reference.to_owned()),
            hyp_token: Some(hypothesis.to_owned()),
        }
    }

    pub fn insert(hypothesis: &str) -> Self {
        Self {
            kind: EditKind::Insert,
            ref_token: None,
            hyp_token: Some(hypothesis.to_owned()),
        }
    }

    pub fn delete(reference: &str) -> Self {
        Self {
            kind: EditKind::Delete,
            ref_token: Some(reference.to_owned()),
            hyp_token: None,
        }
    }

    pub fn cost(&self) -> usize {
        usize::from(self.kind != EditKind::Match)
    }
}

/// Per-pair WER features, in the order they are appended to feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WerFeatures {
    pub wer: f64,
    pub ref_len: usize,
    pub n_correct: usize,
    pub n_sub: usize,
    pub n_ins: usize,
    pub n_del: usize,
}

impl WerFeatures {
    pub fn edits(&self) -> usize {
        self.n_sub + self.n_ins + self.n_del
    }

    /// `[wer, ref_len, n_correct, n_ins, n_del, n_sub]`
    pub fn to_vec(&self) -> [f64; 6] {
        [
            self.wer,
            self.ref_len as f64,
            self.n_correct as f64,
            self.n_ins as f64,
            self.n_del as f64,
            self.n_sub as f64,
        ]
    }
}

/// Direction taken out of a DP cell.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Diagonal,
    Down,
    Right,
}

/// `d[i][j]` is the edit distance between `reference[i..]` and `hypothesis[j..]`.
fn suffix_table<T: AsRef<str>, U: AsRef<str>>(reference: &[T], hypothesis: &[U]) -> Vec<Vec<usize>> {
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[m] = n - i;
    }
    for (j, cell) in d[n].iter_mut().enumerate() {
        *cell = m - j;
    }
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let sub = usize::from(reference[i].as_ref() != hypothesis[j].as_ref());
            d[i][j] = (d[i + 1][j + 1] + sub).min(d[i + 1][j] + 1).min(d[i][j + 1] + 1);
        }
    }
    d
}

/// Word-level edit distance between two token sequences.
pub fn edit_distance<T: AsRef<str>, U: AsRef<str>>(a: &[T], b: &[U]) -> usize {
    suffix_table(a, b)[0][0]
}

/// Minimal-cost alignment of `hypothesis` against `reference`.
///
/// The table is walked from the start of both sequences, so ties resolve
/// towards the earliest substitution: "who stars" against "who cars in it"
/// aligns `stars` with `cars` and inserts `in it`. An empty hypothesis is
/// legal and aligns as all deletions.
pub fn align<T: AsRef<str>, U: AsRef<str>>(reference: &[T], hypothesis: &[U]) -> Result<Vec<EditOp>> {
    if reference.is_empty() {
        return Err(Error::Domain("cannot align against an empty reference".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let d = suffix_table(reference, hypothesis);
    let (mut i, mut j) = (0, 0);
    let mut ops = Vec::with_capacity(n.max(m));
    while i < n || j < m {
        let step = if i < n && j < m {
            let sub = usize::from(reference[i].as_ref() != hypothesis[j].as_ref());
            if d[i][j] == d[i + 1][j + 1] + sub {
                Step::Diagonal
            } else if d[i][j] == d[i + 1][j] + 1 {
                Step::Down
            } else {
                Step::Right
            }
        } else if i < n {
            Step::Down
        } else {
            Step::Right
        };
        match step {
            Step::Diagonal => {
                let (r, h) = (reference[i].as_ref(), hypothesis[j].as_ref());
                ops.push(if r == h { EditOp::matched(r) } else { EditOp::substitute(r, h) });
                i += 1;
                j += 1;
            }
            Step::Down => {
                ops.push(EditOp::delete(reference[i].as_ref()));
                i += 1;
            }
            Step::Right => {
                ops.push(EditOp::insert(hypothesis[j].as_ref()));
                j += 1;
            }
        }
    }
    Ok(ops)
}

pub fn wer_features(ops: &[EditOp]) -> WerFeatures {
    let mut f = WerFeatures::default();
    for op in ops {
        match op.kind {
            EditKind::Match => f.n_correct += 1,
            EditKind::Substitute => f.n_sub += 1,
            EditKind::Insert => f.n_ins += 1,
            EditKind::Delete => f.n_del += 1,
        }
    }
    f.ref_len = f.n_correct + f.n_sub + f.n_del;
    if f.ref_len > 0 {
        f.wer = f.edits() as f64 / f.ref_len as f64;
    }
    f
}

/// Aligns and featurizes in one call.
pub fn pair_features<T: AsRef<str>, U: AsRef<str>>(reference: &[T], hypothesis: &[U]) -> Result<WerFeatures> {
    Ok(wer_features(&align(reference, hypothesis)?))
}

/// Rebuilds the hypothesis from an alignment.
pub fn replay(ops: &[EditOp]) -> Vec<String> {
    ops.iter().filter_map(|op| op.hyp_token.clone()).collect()
}

/// Corpus-level error statistics in the layout of an error-distribution table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub corpus_wer: f64,
    pub ref_tokens: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    /// Substitution, insertion and deletion shares of all edits.
    pub sub_share: f64,
    pub ins_share: f64,
    pub del_share: f64,
    /// Set when the corpus has no edits at all; the shares are then all zero.
    pub zero_edits: bool,
}

impl ErrorStats {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn shares(&self) -> [f64; 3] {
        [self.sub_share, self.ins_share, self.del_share]
    }
}

pub fn aggregate_error_stats<R, H, T, U>(pairs: impl IntoIterator<Item = (R, H)>) -> Result<ErrorStats>
where
    R: AsRef<[T]>,
    H: AsRef<[U]>,
    T: AsRef<str>,
    U: AsRef<str>,
{
    let (mut ref_tokens, mut sub, mut ins, mut del, mut n) = (0, 0, 0, 0, 0usize);
    for (reference, hypothesis) in pairs {
        let f = pair_features(reference.as_ref(), hypothesis.as_ref())?;
        ref_tokens += f.ref_len;
        sub += f.n_sub;
        ins += f.n_ins;
        del += f.n_del;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Domain("error statistics need at least one pair".into()));
    }
    let edits = sub + ins + del;
    let share = |x: usize| if edits > 0 { x as f64 / edits as f64 } else { 0.0 };
    Ok(ErrorStats {
        corpus_wer: edits as f64 / ref_tokens as f64,
        ref_tokens,
        substitutions: sub,
        insertions: ins,
        deletions: del,
        sub_share: share(sub),
        ins_share: share(ins),
        del_share: share(del),
        zero_edits: edits == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn identical_pair_is_all_matches() {
        let ops = align(&toks("play the movie"), &toks("play the movie")).unwrap();
        assert_eq!(ops.len(), 3);
        assert!(ops.iter().all(|op| op.kind == EditKind::Match));
        let f = wer_features(&ops);
        assert_eq!(f.wer, 0.0);
        assert_eq!(f.n_correct, 3);
    }

    #[test]
    fn single_deletion() {
        let ops = align(&toks("tell me the plot"), &toks("tell me plot")).unwrap();
        assert_eq!(
            ops,
            vec![
                EditOp::matched("tell"),
                EditOp::matched("me"),
                EditOp::delete("the"),
                EditOp::matched("plot"),
            ]
        );
        assert_eq!(wer_features(&ops).wer, 0.25);
    }

    #[test]
    fn wer_can_exceed_one() {
        let ops = align(&toks("who stars"), &toks("who cars in it")).unwrap();
        assert_eq!(
            ops,
            vec![
                EditOp::matched("who"),
                EditOp::substitute("stars", "cars"),
                EditOp::insert("in"),
                EditOp::insert("it"),
            ]
        );
        let f = wer_features(&ops);
        assert_eq!((f.n_correct, f.n_sub, f.n_ins, f.n_del), (1, 1, 2, 0));
        assert_eq!(f.wer, 1.5);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let ops = align(&toks("a b c"), &Vec::<String>::new()).unwrap();
        let f = wer_features(&ops);
        assert_eq!(f.n_del, 3);
        assert_eq!(f.wer, 1.0);
    }

    #[test]
    fn empty_reference_is_rejected() {
        assert!(matches!(align(&Vec::<String>::new(), &toks("a")), Err(Error::Domain(_))));
    }

    #[test]
    fn substitution_preferred_over_delete_insert() {
        let ops = align(&toks("a"), &toks("b")).unwrap();
        assert_eq!(ops, vec![EditOp::substitute("a", "b")]);
    }

    #[test]
    fn corpus_stats_with_no_errors_flag_zero_edits() {
        let pairs = vec![(toks("a b"), toks("a b")), (toks("c"), toks("c"))];
        let s = aggregate_error_stats(pairs).unwrap();
        assert!(s.zero_edits);
        assert_eq!(s.corpus_wer, 0.0);
        assert_eq!(s.shares(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn corpus_stats_pool_edits_over_reference_tokens() {
        let pairs = vec![
            (toks("tell me the plot"), toks("tell me plot")),
            (toks("who stars"), toks("who cars in it")),
        ];
        let s = aggregate_error_stats(pairs).unwrap();
        assert_eq!(s.ref_tokens, 6);
        assert_eq!(s.edits(), 4);
        assert!((s.corpus_wer - 4.0 / 6.0).abs() < 1e-12);
        assert!((s.sub_share - 0.25).abs() < 1e-12);
        assert!((s.ins_share - 0.5).abs() < 1e-12);
        assert!((s.del_share - 0.25).abs() < 1e-12);
    }
}
