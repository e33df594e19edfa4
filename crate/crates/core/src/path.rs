//! Type paths along lineages and trunks.
//!
//! Both the forward simulator (ancestral lineages) and the biased simulator
//! (trunks, mutation chains) produce piecewise-constant type histories. This
//! module holds the shared representation and the statistics extracted from
//! it: occupation vectors, flip counts, and pooled segment statistics.

use crate::linalg;
use crate::model::TypeIndex;

/// A piecewise-constant type history: `(type, sojourn)` segments in time
/// order. A new segment starts at every split event, so adjacent segments may
/// carry the same type; [`TypePath::coalesced`] merges those.
#[derive(Debug, Clone, PartialEq)]
pub struct TypePath {
    pub segments: Vec<(TypeIndex, f64)>,
}

impl TypePath {
    pub fn new(segments: Vec<(TypeIndex, f64)>) -> Self {
        Self { segments }
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().map(|(_, s)| s).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Terminal type (type at the right end of the path).
    pub fn terminal(&self) -> Option<TypeIndex> {
        self.segments.last().map(|(t, _)| *t)
    }

    /// Merge adjacent segments with equal types.
    pub fn coalesced(&self) -> TypePath {
        let mut out: Vec<(TypeIndex, f64)> = Vec::with_capacity(self.segments.len());
        for &(ty, s) in &self.segments {
            match out.last_mut() {
                Some((last_ty, last_s)) if *last_ty == ty => *last_s += s,
                _ => out.push((ty, s)),
            }
        }
        TypePath::new(out)
    }

    /// Number of type changes (discontinuities of the type history). Equal
    /// under any segment bookkeeping since same-type neighbors don't count.
    pub fn flip_count(&self) -> usize {
        self.segments
            .windows(2)
            .filter(|w| w[0].0 != w[1].0)
            .count()
    }

    /// Fraction of time spent in each type.
    pub fn occupation(&self, num_types: usize) -> Option<OccupationVector> {
        let total = self.total();
        if total <= 0.0 {
            return None;
        }
        let mut weights = vec![0.0; num_types];
        for &(ty, s) in &self.segments {
            weights[ty.0] += s;
        }
        for w in &mut weights {
            *w /= total;
        }
        Some(OccupationVector { weights })
    }
}

/// Per-type time fractions of a lineage or trunk; a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationVector {
    pub weights: Vec<f64>,
}

impl OccupationVector {
    pub fn tv_distance(&self, other: &[f64]) -> f64 {
        linalg::tv_distance(&self.weights, other)
    }
}

/// Pooled statistics over `(type, sojourn)` segments from one or many paths.
///
/// A segment is *complete* when it ended with a split before the observation
/// horizon; the final segment of every path is censored at the horizon and
/// tracked separately. Transition counts pair each complete segment with the
/// type of its successor segment (same-type transitions included).
#[derive(Debug, Clone)]
pub struct SegmentStats {
    num_types: usize,
    pub paths: u64,
    pub sojourn_total: Vec<f64>,
    pub exit_count: Vec<u64>,
    pub censored_total: Vec<f64>,
    pub censored_count: Vec<u64>,
    /// `transitions[from][to]`, complete segments only.
    pub transitions: Vec<Vec<u64>>,
}

impl SegmentStats {
    pub fn new(num_types: usize) -> Self {
        Self {
            num_types,
            paths: 0,
            sojourn_total: vec![0.0; num_types],
            exit_count: vec![0; num_types],
            censored_total: vec![0.0; num_types],
            censored_count: vec![0; num_types],
            transitions: vec![vec![0; num_types]; num_types],
        }
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Record a whole path whose final segment is censored at the horizon.
    pub fn add_path(&mut self, path: &TypePath) {
        self.paths += 1;
        let n = path.segments.len();
        for (k, &(ty, s)) in path.segments.iter().enumerate() {
            if k + 1 < n {
                self.add_complete(ty, s, path.segments[k + 1].0);
            } else {
                self.add_censored(ty, s);
            }
        }
    }

    /// Record a complete segment and the type it transitioned to, with an
    /// arbitrary multiplicity (used when pooling over lineages that share
    /// ancestral segments).
    pub fn add_complete_weighted(&mut self, ty: TypeIndex, sojourn: f64, next: TypeIndex, w: u64) {
        self.sojourn_total[ty.0] += sojourn * w as f64;
        self.exit_count[ty.0] += w;
        self.transitions[ty.0][next.0] += w;
    }

    pub fn add_complete(&mut self, ty: TypeIndex, sojourn: f64, next: TypeIndex) {
        self.add_complete_weighted(ty, sojourn, next, 1);
    }

    pub fn add_censored(&mut self, ty: TypeIndex, sojourn: f64) {
        self.censored_total[ty.0] += sojourn;
        self.censored_count[ty.0] += 1;
    }

    pub fn merge(&mut self, other: &SegmentStats) {
        assert_eq!(self.num_types, other.num_types);
        self.paths += other.paths;
        for i in 0..self.num_types {
            self.sojourn_total[i] += other.sojourn_total[i];
            self.exit_count[i] += other.exit_count[i];
            self.censored_total[i] += other.censored_total[i];
            self.censored_count[i] += other.censored_count[i];
            for j in 0..self.num_types {
                self.transitions[i][j] += other.transitions[i][j];
            }
        }
    }

    /// Mean sojourn of complete segments of type `i`, if any were seen.
    pub fn mean_sojourn(&self, i: TypeIndex) -> Option<f64> {
        if self.exit_count[i.0] == 0 {
            None
        } else {
            Some(self.sojourn_total[i.0] / self.exit_count[i.0] as f64)
        }
    }

    /// Frequency of `i → j` among all exits from `i`.
    pub fn transition_frequency(&self, i: TypeIndex, j: TypeIndex) -> Option<f64> {
        if self.exit_count[i.0] == 0 {
            None
        } else {
            Some(self.transitions[i.0][j.0] as f64 / self.exit_count[i.0] as f64)
        }
    }

    /// Frequency of `i → j` among the exits from `i` that changed type.
    pub fn change_frequency(&self, i: TypeIndex, j: TypeIndex) -> Option<f64> {
        let changes: u64 = (0..self.num_types)
            .filter(|&k| k != i.0)
            .map(|k| self.transitions[i.0][k])
            .sum();
        if changes == 0 || i == j {
            None
        } else {
            Some(self.transitions[i.0][j.0] as f64 / changes as f64)
        }
    }

    /// Occupation over all recorded time (complete plus censored).
    pub fn occupation(&self) -> Option<OccupationVector> {
        let mut weights: Vec<f64> = (0..self.num_types)
            .map(|i| self.sojourn_total[i] + self.censored_total[i])
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        for w in &mut weights {
            *w /= total;
        }
        Some(OccupationVector { weights })
    }
}
