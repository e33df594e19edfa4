//! Branching model definition and first-moment data.
//!
//! A model is a finite type set `S`, a split rate `a_i > 0` per type, and a
//! finite-support offspring law `p_i` per type. Splitting an `i`-individual
//! replaces it by a random offspring vector `κ ∈ Z_+^S` drawn from `p_i`.
//! Finite support keeps every moment exact and makes the `x log x` moment
//! condition of the Kesten-Stigum theorem hold automatically.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt;

use crate::linalg::Matrix;

/// Probabilities of an offspring law must sum to 1 within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Atoms with probability below this are rejected rather than dropped, so
/// simulation and expectation oracles see the same support.
pub const MIN_ATOM_PROB: f64 = 1e-15;

/// Index into the model's type set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeIndex(pub usize);

impl fmt::Display for TypeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One atom of a finite-support offspring law: a count vector over types and
/// its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub counts: Vec<u64>,
    pub prob: f64,
}

impl Atom {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Finite-support offspring distribution on `Z_+^S`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    pub atoms: Vec<Atom>,
}

impl OffspringLaw {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    /// Mean number of `j`-children.
    pub fn mean(&self, j: usize) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.counts[j] as f64 * a.prob)
            .sum()
    }

    /// Mean total offspring.
    pub fn mean_total(&self) -> f64 {
        self.atoms.iter().map(|a| a.total() as f64 * a.prob).sum()
    }
}

/// A continuous-time multitype branching model.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingModel {
    type_names: Vec<String>,
    split_rates: Vec<f64>,
    offspring: Vec<OffspringLaw>,
}

impl BranchingModel {
    /// Build a model with default type names `t0, t1, ...`.
    pub fn new(split_rates: Vec<f64>, offspring: Vec<OffspringLaw>) -> Self {
        let names = (0..split_rates.len()).map(|i| format!("t{i}")).collect();
        Self::with_names(names, split_rates, offspring)
    }

    pub fn with_names(
        type_names: Vec<String>,
        split_rates: Vec<f64>,
        offspring: Vec<OffspringLaw>,
    ) -> Self {
        assert_eq!(type_names.len(), split_rates.len());
        assert_eq!(type_names.len(), offspring.len());
        Self {
            type_names,
            split_rates,
            offspring,
        }
    }

    pub fn num_types(&self) -> usize {
        self.split_rates.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn split_rate(&self, i: TypeIndex) -> f64 {
        self.split_rates[i.0]
    }

    pub fn split_rates(&self) -> &[f64] {
        &self.split_rates
    }

    pub fn offspring(&self, i: TypeIndex) -> &OffspringLaw {
        &self.offspring[i.0]
    }

    pub fn offspring_laws(&self) -> &[OffspringLaw] {
        &self.offspring
    }

    /// Whether `E(N_ij log N_ij) < ∞` holds. Offspring laws here have finite
    /// support, so every moment is finite and this is always true; recorded
    /// as model metadata because the nondegeneracy half of the Kesten-Stigum
    /// theorem is conditional on it.
    pub fn xlogx_moment_finite(&self) -> bool {
        true
    }

    /// Per-type extinction probabilities: the minimal root of `q = f(q)`
    /// where `f` is the offspring generating function, found by fixed-point
    /// iteration from zero.
    pub fn extinction_probabilities(&self) -> Vec<f64> {
        let n = self.num_types();
        let mut q = vec![0.0; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for atom in &self.offspring[i].atoms {
                    let mut term = atom.prob;
                    for j in 0..n {
                        for _ in 0..atom.counts[j] {
                            term *= q[j];
                        }
                    }
                    next[i] += term;
                }
            }
            let delta = next
                .iter()
                .zip(&q)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            q = next;
            if delta < 1e-15 {
                break;
            }
        }
        q
    }

    /// Check all model invariants. Violations are data, not errors.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.num_types();
        if n == 0 {
            violations.push("model has no types".to_string());
            return ValidationReport { violations };
        }
        for (i, &a) in self.split_rates.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                violations.push(format!(
                    "split rate of type {} is {}, must be > 0",
                    self.type_names[i], a
                ));
            }
        }
        for (i, law) in self.offspring.iter().enumerate() {
            let name = &self.type_names[i];
            if law.atoms.is_empty() {
                violations.push(format!("type {name} has no offspring atoms"));
                continue;
            }
            let mut sum = 0.0;
            for atom in &law.atoms {
                if atom.counts.len() != n {
                    violations.push(format!(
                        "type {name} has an atom with {} counts, expected {n}",
                        atom.counts.len()
                    ));
                }
                if !(atom.prob >= MIN_ATOM_PROB) || atom.prob > 1.0 {
                    violations.push(format!(
                        "type {name} has an atom with probability {}, must lie in [{MIN_ATOM_PROB}, 1]",
                        atom.prob
                    ));
                }
                sum += atom.prob;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                violations.push(format!("type {name} probabilities sum to {sum}"));
            }
            for (k, a) in law.atoms.iter().enumerate() {
                for b in &law.atoms[k + 1..] {
                    if a.counts == b.counts {
                        violations.push(format!(
                            "type {name} has duplicate atom counts {:?}",
                            a.counts
                        ));
                    }
                }
            }
        }
        if violations.is_empty() && !self.support_irreducible() {
            violations.push("mean matrix M is reducible".to_string());
        }
        ValidationReport { violations }
    }

    /// Irreducibility of the support graph of `M`: there is an edge `i → j`
    /// whenever some atom of `p_i` has positive probability and a positive
    /// `j`-count. The check is exact, not floating-point. Matrix convention:
    /// every ordered pair must be joined by a path of length ≥ 1, so a
    /// single type must produce own-type children and every type lies on a
    /// cycle.
    fn support_irreducible(&self) -> bool {
        let n = self.num_types();
        let mut edge = vec![vec![false; n]; n];
        for i in 0..n {
            for atom in &self.offspring[i].atoms {
                for j in 0..n {
                    if atom.counts[j] > 0 {
                        edge[i][j] = true;
                    }
                }
            }
        }
        // BFS from each node along paths of length ≥ 1.
        (0..n).all(|start| {
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = (0..n).filter(|&v| edge[start][v]).collect();
            for &v in &stack {
                seen[v] = true;
            }
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if edge[u][v] && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }

    /// First-moment data. Fails on a non-validating model.
    pub fn mean_data(&self) -> Result<MeanData, ModelError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(ModelError::Invalid(report));
        }
        let n = self.num_types();
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.offspring[i].mean(j));
            }
        }
        let row_means: Vec<f64> = (0..n).map(|i| self.offspring[i].mean_total()).collect();
        // a_ij = a_i (m_ij − δ_ij)
        let mut a = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                a.set(i, j, self.split_rates[i] * (m.get(i, j) - delta));
            }
        }
        let r: Vec<f64> = (0..n)
            .map(|i| self.split_rates[i] * (row_means[i] - 1.0))
            .collect();
        Ok(MeanData {
            m,
            row_means,
            a,
            r,
        })
    }
}

/// Outcome of [`BranchingModel::validate`].
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

/// First-moment objects of a validating model.
///
/// `M` is the mean offspring matrix, `A = diag(a)(M − I)` the generator of
/// the first-moment semigroup (`E^i Z_j(t) = (e^{tA})_{ij}`), and
/// `r_i = a_i (m_i − 1)` the mean reproduction rate of type `i`.
#[derive(Debug, Clone)]
pub struct MeanData {
    pub m: Matrix,
    pub row_means: Vec<f64>,
    pub a: Matrix,
    pub r: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
    #[error("cannot parse model file: {0}")]
    Parse(String),
}

// ── Model file format ────────────────────────────────────────────────────

#[derive(Deserialize)]
struct ModelFile {
    types: Vec<String>,
    #[serde(flatten)]
    sections: BTreeMap<String, TypeSection>,
}

#[derive(Deserialize)]
struct TypeSection {
    rate: f64,
    atom: Vec<AtomEntry>,
}

#[derive(Deserialize)]
struct AtomEntry {
    counts: Vec<u64>,
    prob: f64,
}

impl BranchingModel {
    /// Parse a model from configuration text. The format is TOML with a
    /// `types` name list and one table per type name holding its `rate` and
    /// `atom` entries; names map to indices in declaration order:
    ///
    /// ```toml
    /// types = ["a", "b"]
    ///
    /// [a]
    /// rate = 1.0
    /// atom = [
    ///     { counts = [2, 0], prob = 0.5 },
    ///     { counts = [0, 1], prob = 0.5 },
    /// ]
    ///
    /// [b]
    /// rate = 1.0
    /// atom = [{ counts = [1, 1], prob = 1.0 }]
    /// ```
    pub fn from_config_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        if file.types.is_empty() {
            return Err(ModelError::Parse("empty `types` list".into()));
        }
        let mut rates = Vec::with_capacity(file.types.len());
        let mut laws = Vec::with_capacity(file.types.len());
        for name in &file.types {
            let section = file.sections.get(name).ok_or_else(|| {
                ModelError::Parse(format!("type {name} is listed but has no section"))
            })?;
            rates.push(section.rate);
            laws.push(OffspringLaw::new(
                section
                    .atom
                    .iter()
                    .map(|a| Atom {
                        counts: a.counts.clone(),
                        prob: a.prob,
                    })
                    .collect(),
            ));
        }
        for name in file.sections.keys() {
            if !file.types.contains(name) {
                return Err(ModelError::Parse(format!(
                    "section {name} does not match any listed type"
                )));
            }
        }
        Ok(Self::with_names(file.types, rates, laws))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1() -> BranchingModel {
        BranchingModel::new(
            vec![1.0],
            vec![OffspringLaw::new(vec![Atom {
                counts: vec![2],
                prob: 1.0,
            }])],
        )
    }

    fn m2() -> BranchingModel {
        BranchingModel::new(
            vec![1.0, 1.0],
            vec![
                OffspringLaw::new(vec![
                    Atom {
                        counts: vec![2, 0],
                        prob: 0.5,
                    },
                    Atom {
                        counts: vec![0, 1],
                        prob: 0.5,
                    },
                ]),
                OffspringLaw::new(vec![Atom {
                    counts: vec![1, 1],
                    prob: 1.0,
                }]),
            ],
        )
    }

    fn m3() -> BranchingModel {
        BranchingModel::new(
            vec![1.0],
            vec![OffspringLaw::new(vec![
                Atom {
                    counts: vec![0],
                    prob: 0.25,
                },
                Atom {
                    counts: vec![2],
                    prob: 0.75,
                },
            ])],
        )
    }

    #[test]
    fn reference_models_validate() {
        assert!(m1().validate().is_ok());
        assert!(m2().validate().is_ok());
        assert!(m3().validate().is_ok());
    }

    #[test]
    fn bad_normalization_is_reported() {
        let m = BranchingModel::new(
            vec![1.0, 1.0],
            vec![
                OffspringLaw::new(vec![Atom {
                    counts: vec![1, 1],
                    prob: 1.0,
                }]),
                OffspringLaw::new(vec![
                    Atom {
                        counts: vec![1, 0],
                        prob: 0.5,
                    },
                    Atom {
                        counts: vec![0, 2],
                        prob: 0.4,
                    },
                ]),
            ],
        );
        let report = m.validate();
        assert!(!report.is_ok());
        assert!(report.violations.iter().any(|v| v.contains("sum to 0.9")));
    }

    #[test]
    fn reducible_support_is_reported() {
        // Type 1 only ever produces type-1 children: no path back to type 0.
        let m = BranchingModel::new(
            vec![1.0, 1.0],
            vec![
                OffspringLaw::new(vec![Atom {
                    counts: vec![1, 1],
                    prob: 1.0,
                }]),
                OffspringLaw::new(vec![Atom {
                    counts: vec![0, 2],
                    prob: 1.0,
                }]),
            ],
        );
        let report = m.validate();
        assert!(report.violations.iter().any(|v| v.contains("reducible")));
    }

    #[test]
    fn tiny_atom_probability_rejected() {
        let m = BranchingModel::new(
            vec![1.0],
            vec![OffspringLaw::new(vec![
                Atom {
                    counts: vec![2],
                    prob: 1.0 - 1e-16,
                },
                Atom {
                    counts: vec![3],
                    prob: 1e-16,
                },
            ])],
        );
        assert!(!m.validate().is_ok());
    }

    #[test]
    fn duplicate_atoms_rejected() {
        let m = BranchingModel::new(
            vec![1.0],
            vec![OffspringLaw::new(vec![
                Atom {
                    counts: vec![2],
                    prob: 0.5,
                },
                Atom {
                    counts: vec![2],
                    prob: 0.5,
                },
            ])],
        );
        assert!(!m.validate().is_ok());
    }

    #[test]
    fn mean_data_m1() {
        let md = m1().mean_data().unwrap();
        assert_eq!(md.m.get(0, 0), 2.0);
        assert_eq!(md.a.get(0, 0), 1.0);
        assert_eq!(md.r, vec![1.0]);
    }

    #[test]
    fn mean_data_m2_hand_expectation() {
        let md = m2().mean_data().unwrap();
        assert_eq!(md.m.row(0), &[1.0, 0.5]);
        assert_eq!(md.m.row(1), &[1.0, 1.0]);
        assert_eq!(md.a.row(0), &[0.0, 0.5]);
        assert_eq!(md.a.row(1), &[1.0, 0.0]);
        assert_eq!(md.r, vec![0.5, 1.0]);
        assert_eq!(md.row_means, vec![1.5, 2.0]);
    }

    #[test]
    fn mean_data_m3() {
        let md = m3().mean_data().unwrap();
        assert_eq!(md.m.get(0, 0), 1.5);
        assert_eq!(md.a.get(0, 0), 0.5);
        assert_eq!(md.r, vec![0.5]);
    }

    #[test]
    fn row_sums_of_a_equal_r() {
        for model in [m1(), m2(), m3()] {
            let md = model.mean_data().unwrap();
            for (i, sum) in md.a.row_sums().iter().enumerate() {
                assert!((sum - md.r[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn extinction_probabilities_reference_values() {
        // Doubling never dies; the ¼/¾ law dies with probability ⅓ (root of
        // q = ¼ + ¾q²); two-type model with no zero atoms never dies.
        assert_eq!(m1().extinction_probabilities(), vec![0.0]);
        let q3 = m3().extinction_probabilities();
        assert!((q3[0] - 1.0 / 3.0).abs() < 1e-12);
        let q2 = m2().extinction_probabilities();
        assert!(q2.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn config_round_trip_semantics() {
        let text = r#"
types = ["a", "b"]

[a]
rate = 1.0
atom = [
    { counts = [2, 0], prob = 0.5 },
    { counts = [0, 1], prob = 0.5 },
]

[b]
rate = 1.0
atom = [{ counts = [1, 1], prob = 1.0 }]
"#;
        let parsed = BranchingModel::from_config_str(text).unwrap();
        assert_eq!(parsed.type_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(parsed, m2().clone_with_names(&["a", "b"]));
    }

    #[test]
    fn config_missing_section_fails() {
        let text = "types = [\"a\", \"b\"]\n[a]\nrate = 1.0\natom = [{ counts = [1, 1], prob = 1.0 }]\n";
        assert!(BranchingModel::from_config_str(text).is_err());
    }

    impl BranchingModel {
        fn clone_with_names(&self, names: &[&str]) -> Self {
            Self::with_names(
                names.iter().map(|s| s.to_string()).collect(),
                self.split_rates.clone(),
                self.offspring.clone(),
            )
        }
    }
}
