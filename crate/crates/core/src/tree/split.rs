//! Gini impurity and exhaustive threshold search.
//!
//! Feature values are replaced by their rank among the distinct values of
//! the training matrix. A node's candidate thresholds are the midpoints
//! between consecutive distinct values present in that node, and the search
//! scans those in ascending order while accumulating left-side class counts.
//! Low-cardinality columns are histogrammed by rank; the rest are sorted.
//!
//! Candidates are compared exactly: maximizing the weighted Gini decrease is
//! the same as maximizing `Σl²/n_l + Σr²/n_r` over child class counts, which
//! is a ratio of integers and is compared by cross-multiplication. Ties are
//! therefore real ties and resolve to the lowest feature, then the lowest
//! threshold.

use serde::{Deserialize, Serialize};

use crate::data::MatrixView;
use crate::error::{Error, Result};

/// `1 - Σ pᵢ²` over the class proportions.
pub fn gini_impurity(class_counts: &[u32]) -> Result<f64> {
    if class_counts.iter().all(|&c| c == 0) {
        return Err(Error::invalid("gini impurity of an empty node"));
    }
    Ok(gini(class_counts))
}

#[inline]
pub(crate) fn gini(counts: &[u32]) -> f64 {
    let n = counts.iter().map(|&c| c as u64).sum::<u64>() as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

/// Impurity decrease of a parent split into `left` and its complement,
/// weighted by child proportions.
pub(crate) fn split_decrease(parent: &[u32], left: &[u32]) -> f64 {
    let right: Vec<u32> = parent.iter().zip(left).map(|(p, l)| p - l).collect();
    let n = parent.iter().map(|&c| c as u64).sum::<u64>() as f64;
    let n_left = left.iter().map(|&c| c as u64).sum::<u64>() as f64;
    let n_right = n - n_left;
    let d = gini(parent) - (n_left / n) * gini(left) - (n_right / n) * gini(&right);
    d.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    /// Parent impurity minus the size-weighted child impurities.
    pub impurity_decrease: f64,
}

/// Midpoint of two consecutive distinct values, nudged so that `lo < t <= hi`
/// survives rounding when the values are adjacent floats.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Per-feature ranks of a feature matrix.
#[derive(Debug, Clone)]
pub struct RankedFeatures {
    n_rows: usize,
    distinct: Vec<Vec<f64>>,
    /// Column-major: `codes[f * n_rows + row]`.
    codes: Vec<u32>,
}

impl RankedFeatures {
    pub fn new(x: MatrixView<'_>) -> Self {
        let n = x.n_rows();
        let p = x.n_cols();
        let mut distinct = Vec::with_capacity(p);
        let mut codes = vec![0u32; n * p];
        let mut column = Vec::with_capacity(n);
        for f in 0..p {
            column.clear();
            column.extend((0..n).map(|r| x.get(r, f)));
            let mut values = column.clone();
            values.sort_unstable_by(f64::total_cmp);
            values.dedup();
            for (r, v) in column.iter().enumerate() {
                codes[f * n + r] = values.partition_point(|u| u < v) as u32;
            }
            distinct.push(values);
        }
        RankedFeatures { n_rows: n, distinct, codes }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.distinct.len()
    }

    #[inline]
    pub(crate) fn column(&self, f: usize) -> &[u32] {
        &self.codes[f * self.n_rows..(f + 1) * self.n_rows]
    }

    pub(crate) fn value(&self, f: usize, code: u32) -> f64 {
        self.distinct[f][code as usize]
    }

    fn n_distinct(&self, f: usize) -> usize {
        self.distinct[f].len()
    }
}

/// Winning split in rank space.
#[derive(Debug, Clone)]
pub(crate) struct RankedSplit {
    pub feature: usize,
    /// Rows with code `<= left_max_code` go left.
    pub left_max_code: u32,
    pub threshold: f64,
    pub decrease: f64,
}

/// Exact score `num / den` of a candidate, `Σl²/n_l + Σr²/n_r` in integers.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    #[inline]
    fn beats(self, other: Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Reusable buffers for split search.
pub(crate) struct Splitter<'a> {
    ranked: &'a RankedFeatures,
    labels: &'a [usize],
    n_classes: usize,
    min_leaf: usize,
    hist: Vec<u32>,
    pairs: Vec<u64>,
    left: Vec<u32>,
    best_left: Vec<u32>,
}

impl<'a> Splitter<'a> {
    pub fn new(ranked: &'a RankedFeatures, labels: &'a [usize], n_classes: usize, min_leaf: usize) -> Self {
        Splitter {
            ranked,
            labels,
            n_classes,
            min_leaf: min_leaf.max(1),
            hist: Vec::new(),
            pairs: Vec::new(),
            left: vec![0; n_classes],
            best_left: vec![0; n_classes],
        }
    }

    /// Best split of `rows` over `features` (ascending), or `None` if no
    /// admissible split strictly lowers impurity.
    pub fn find(&mut self, rows: &[usize], parent: &[u32], features: &[usize]) -> Option<RankedSplit> {
        let n = rows.len() as u64;
        let c_sq: u64 = parent.iter().map(|&c| (c as u64) * (c as u64)).sum();
        let mut best = Score { num: c_sq as u128, den: n as u128 };
        let mut found: Option<(usize, u32, u32)> = None;

        for &f in features {
            if let Some((lo, hi)) = self.scan_feature(rows, parent, f, &mut best) {
                found = Some((f, lo, hi));
            }
        }
        let (feature, lo, hi) = found?;
        let threshold = midpoint(self.ranked.value(feature, lo), self.ranked.value(feature, hi));
        Some(RankedSplit {
            feature,
            left_max_code: lo,
            threshold,
            decrease: split_decrease(parent, &self.best_left),
        })
    }

    /// Scans one feature; returns the bounding codes when it improves `best`.
    fn scan_feature(&mut self, rows: &[usize], parent: &[u32], f: usize, best: &mut Score) -> Option<(u32, u32)> {
        let codes = self.ranked.column(f);
        let k = self.ranked.n_distinct(f);
        if k < 2 {
            return None;
        }
        let c = self.n_classes;
        let n = rows.len();
        let mut improved = None;
        self.left.iter_mut().for_each(|x| *x = 0);

        // Each closure call sees the left-side counts of rows with code <= `lo`.
        let min_leaf = self.min_leaf;
        let mut consider = |left: &[u32], n_left: usize, lo: u32, hi: u32, best_left: &mut [u32]| {
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                return;
            }
            let mut a = 0u64;
            let mut b = 0u64;
            for (l, p) in left.iter().zip(parent) {
                let l = *l as u64;
                let r = *p as u64 - l;
                a += l * l;
                b += r * r;
            }
            let score = Score {
                num: a as u128 * n_right as u128 + b as u128 * n_left as u128,
                den: n_left as u128 * n_right as u128,
            };
            if score.beats(*best) {
                *best = score;
                best_left.copy_from_slice(left);
                improved = Some((lo, hi));
            }
        };

        if k <= 2 * n {
            self.hist.clear();
            self.hist.resize(k * c, 0);
            let mut min_code = u32::MAX;
            let mut max_code = 0;
            for &r in rows {
                let code = codes[r];
                min_code = min_code.min(code);
                max_code = max_code.max(code);
                self.hist[code as usize * c + self.labels[r]] += 1;
            }
            let mut n_left = 0usize;
            let mut prev: Option<u32> = None;
            for code in min_code..=max_code {
                let cell = &self.hist[code as usize * c..(code as usize + 1) * c];
                let m: u32 = cell.iter().sum();
                if m == 0 {
                    continue;
                }
                if let Some(p) = prev {
                    consider(&self.left, n_left, p, code, &mut self.best_left);
                }
                for (l, h) in self.left.iter_mut().zip(cell) {
                    *l += h;
                }
                n_left += m as usize;
                prev = Some(code);
            }
        } else {
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| ((codes[r] as u64) << 16) | self.labels[r] as u64));
            self.pairs.sort_unstable();
            let mut n_left = 0usize;
            let mut i = 0;
            let mut prev: Option<u32> = None;
            while i < self.pairs.len() {
                let code = (self.pairs[i] >> 16) as u32;
                if let Some(p) = prev {
                    consider(&self.left, n_left, p, code, &mut self.best_left);
                }
                while i < self.pairs.len() && (self.pairs[i] >> 16) as u32 == code {
                    self.left[(self.pairs[i] & 0xFFFF) as usize] += 1;
                    n_left += 1;
                    i += 1;
                }
                prev = Some(code);
            }
        }
        improved
    }
}

/// Exhaustive best split of `rows` over `features`, each child keeping at
/// least `min_leaf` rows. `labels` are class ids below `n_classes`.
pub fn best_split(
    x: MatrixView<'_>,
    labels: &[usize],
    n_classes: usize,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    if rows.len() < 2 || features.is_empty() {
        return None;
    }
    let ranked = RankedFeatures::new(x);
    let mut parent = vec![0u32; n_classes];
    for &r in rows {
        parent[labels[r]] += 1;
    }
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut splitter = Splitter::new(&ranked, labels, n_classes, min_leaf);
    splitter.find(rows, &parent, &sorted).map(|s| SplitCandidate {
        feature_index: s.feature,
        threshold: s.threshold,
        impurity_decrease: s.decrease,
    })
}
