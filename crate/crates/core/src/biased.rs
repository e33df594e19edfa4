//! The size-biased tree with trunk, and the retrospective mutation chain.
//!
//! A distinguished lineage — the trunk, or spine — draws accelerated
//! lifetimes and size-biased offspring, so it survives forever; everything
//! hanging off it (the bushes) follows the ordinary forward law. The
//! construction works for any positive weight vector `γ` on the types:
//! trunk lifetimes are exponential with rate `a_i (Mγ)_i / γ_i`, offspring
//! follow `p^γ_i(κ) ∝ ⟨κ, γ⟩ p_i(κ)`, and the successor is picked among the
//! realized children with probability proportional to `γ` of its type. The
//! two weightings actually exposed are `γ = h` (trunk type process = the
//! retrospective mutation chain, holding rates `a_i + λ`) and `γ ≡ 1`
//! (uniform child selection, holding rates `a_i m_i`, mutation-only
//! generator `G̃`).
//!
//! The trunk is simulated by explicit offspring realization plus child
//! selection, not by shortcutting to its marginal chain; the marginal chain
//! is available separately precisely so the two routes can be checked
//! against each other.

use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::forward::{sample_offspring, FamilyTree, Fate, Individual, IndividualId};
use crate::linalg::Matrix;
use crate::model::{BranchingModel, MeanData, OffspringLaw, TypeIndex};
use crate::path::{OccupationVector, TypePath};
use crate::rng::{exp_time, sample_index};
use crate::spectral::{RetrospectiveChain, SpectralData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Weight vector `γ = h`.
    HWeighted,
    /// Weight vector `γ ≡ 1`.
    Uniform,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::HWeighted => write!(f, "h"),
            Variant::Uniform => write!(f, "uniform"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BiasedError {
    #[error("zero-length path has no occupation vector")]
    ZeroLengthPath,
}

/// Everything the trunk needs: the weight vector, per-type lifetime rates,
/// and the reweighted offspring laws.
#[derive(Debug, Clone)]
pub struct TrunkDynamics {
    pub variant: Variant,
    pub weights: Vec<f64>,
    pub lifetime_rates: Vec<f64>,
    pub laws: Vec<OffspringLaw>,
}

impl TrunkDynamics {
    /// General construction for an arbitrary positive weight vector.
    pub fn with_weights(
        model: &BranchingModel,
        mean: &MeanData,
        weights: Vec<f64>,
        variant: Variant,
    ) -> Self {
        let n = model.num_types();
        assert_eq!(weights.len(), n);
        assert!(weights.iter().all(|&g| g > 0.0));
        let m_gamma = mean.m.mul_vec(&weights);
        let lifetime_rates: Vec<f64> = (0..n)
            .map(|i| model.split_rates()[i] * m_gamma[i] / weights[i])
            .collect();
        let laws: Vec<OffspringLaw> = (0..n)
            .map(|i| {
                reweight(model.offspring(TypeIndex(i)), |counts| {
                    counts
                        .iter()
                        .zip(&weights)
                        .map(|(&k, g)| k as f64 * g)
                        .sum()
                })
            })
            .collect();
        Self {
            variant,
            weights,
            lifetime_rates,
            laws,
        }
    }

    /// `γ = h`: trunk lifetimes `exp(a_i + λ)`, offspring `p̂`, successor
    /// picked with probability proportional to `h`.
    pub fn h_weighted(model: &BranchingModel, mean: &MeanData, spec: &SpectralData) -> Self {
        Self::with_weights(model, mean, spec.h.clone(), Variant::HWeighted)
    }

    /// `γ ≡ 1`: trunk lifetimes `exp(a_i m_i)`, offspring `p̃`, successor
    /// picked uniformly among the children.
    pub fn uniform(model: &BranchingModel, mean: &MeanData) -> Self {
        Self::with_weights(model, mean, vec![1.0; model.num_types()], Variant::Uniform)
    }
}

fn reweight(law: &OffspringLaw, weight: impl Fn(&[u64]) -> f64) -> OffspringLaw {
    let weights: Vec<f64> = law.atoms.iter().map(|a| weight(&a.counts) * a.prob).collect();
    let total: f64 = weights.iter().sum();
    OffspringLaw::new(
        law.atoms
            .iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(a, w)| crate::model::Atom {
                counts: a.counts.clone(),
                prob: w / total,
            })
            .collect(),
    )
}

// ── Trunk and mutation-chain marginals ───────────────────────────────────

/// Holding rates plus jump matrix of a trunk's marginal `(type, sojourn)`
/// chain. Jumps may return to the same state; a segment starts at every
/// split even when the type repeats.
#[derive(Debug, Clone)]
pub struct TrunkChain {
    pub holding_rates: Vec<f64>,
    pub jump_probs: Matrix,
}

impl TrunkChain {
    /// Marginal of the `γ = h` trunk: the retrospective mutation chain data.
    pub fn h_weighted(chain: &RetrospectiveChain) -> Self {
        Self {
            holding_rates: chain.holding_rates.clone(),
            jump_probs: chain.jump_probs.clone(),
        }
    }

    /// Marginal of the `γ ≡ 1` trunk: rates `a_i m_i` and jumps
    /// `m_ij / m_i` (uniform selection averaged over `p̃`).
    pub fn uniform(model: &BranchingModel, mean: &MeanData) -> Self {
        let n = model.num_types();
        let mut jump = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                jump.set(i, j, mean.m.get(i, j) / mean.row_means[i]);
            }
        }
        Self {
            holding_rates: (0..n)
                .map(|i| model.split_rates()[i] * mean.row_means[i])
                .collect(),
            jump_probs: jump,
        }
    }
}

/// Simulate the trunk's marginal `(type, sojourn)` sequence on
/// `[0, horizon]`. The final segment is censored at the horizon; a zero
/// horizon yields an empty path.
pub fn simulate_trunk<R: Rng + ?Sized>(
    chain: &TrunkChain,
    root_type: TypeIndex,
    horizon: f64,
    rng: &mut R,
) -> TypePath {
    let mut segments = Vec::new();
    let mut ty = root_type;
    let mut time = 0.0;
    while time < horizon {
        let sojourn = exp_time(rng, chain.holding_rates[ty.0]);
        if time + sojourn >= horizon {
            segments.push((ty, horizon - time));
            break;
        }
        segments.push((ty, sojourn));
        time += sojourn;
        let row = chain.jump_probs.row(ty.0);
        ty = TypeIndex(sample_index(rng, row.iter().copied()));
    }
    TypePath::new(segments)
}

/// Simulate a continuous-time Markov chain with the given generator: exit
/// rate `−g_ii`, jump law `g_ij / (−g_ii)` off the diagonal. Sojourns here
/// are between genuine state changes (no self-jumps). An absorbing state
/// yields a single segment.
pub fn simulate_mutation_chain<R: Rng + ?Sized>(
    generator: &Matrix,
    start: TypeIndex,
    horizon: f64,
    rng: &mut R,
) -> TypePath {
    let n = generator.dim();
    let mut segments = Vec::new();
    let mut ty = start;
    let mut time = 0.0;
    while time < horizon {
        let exit = -generator.get(ty.0, ty.0);
        if exit <= 1e-300 {
            segments.push((ty, horizon - time));
            break;
        }
        let sojourn = exp_time(rng, exit);
        if time + sojourn >= horizon {
            segments.push((ty, horizon - time));
            break;
        }
        segments.push((ty, sojourn));
        time += sojourn;
        let probs = (0..n).map(|j| {
            if j == ty.0 {
                0.0
            } else {
                generator.get(ty.0, j) / exit
            }
        });
        ty = TypeIndex(sample_index(rng, probs));
    }
    TypePath::new(segments)
}

/// Per-type sojourn fractions of a path.
pub fn trunk_occupation(path: &TypePath, num_types: usize) -> Result<OccupationVector, BiasedError> {
    path.occupation(num_types).ok_or(BiasedError::ZeroLengthPath)
}

// ── The size-biased tree ─────────────────────────────────────────────────

/// A family tree with a distinguished trunk. Trunk individuals never carry
/// the dead fate (size-biased laws have no zero-offspring atom); bush
/// individuals follow the unbiased dynamics.
#[derive(Debug, Clone)]
pub struct BiasedTree {
    pub tree: FamilyTree,
    pub trunk_ids: Vec<IndividualId>,
    pub variant: Variant,
}

impl BiasedTree {
    /// The trunk as a type path on `[0, horizon]`.
    pub fn trunk_path(&self) -> TypePath {
        TypePath::new(
            self.trunk_ids
                .iter()
                .map(|&id| {
                    let ind = &self.tree.individuals[id];
                    (ind.ty, ind.end - ind.birth)
                })
                .collect(),
        )
    }

    /// Ids of bush roots: non-successor children of trunk individuals.
    pub fn bush_roots(&self) -> Vec<IndividualId> {
        let mut roots = Vec::new();
        for &id in &self.trunk_ids {
            if let Fate::Split(children) = &self.tree.individuals[id].fate {
                for &c in children {
                    if !self.trunk_ids.contains(&c) {
                        roots.push(c);
                    }
                }
            }
        }
        roots
    }

    /// Forward dump plus a final `T:<id list>` trunk line.
    pub fn dump(&self) -> String {
        let mut out = self.tree.dump();
        out.push_str(&format!(
            "T:{}\n",
            self.trunk_ids
                .iter()
                .map(|id| id.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out
    }
}

#[derive(Debug, PartialEq)]
struct Event {
    time: f64,
    id: IndividualId,
    on_trunk: bool,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulate the size-biased tree with trunk up to `horizon`.
///
/// Trunk individuals draw their lifetime with the trunk rate and their
/// offspring from the size-biased law; one realized child is selected as
/// successor with probability proportional to its type's weight. All other
/// individuals are simulated exactly as in the forward simulator. Bushes and
/// trunk share the cap budget.
pub fn simulate_biased_tree<R: Rng + ?Sized>(
    model: &BranchingModel,
    dynamics: &TrunkDynamics,
    root_type: TypeIndex,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> BiasedTree {
    assert!(horizon >= 0.0);
    assert!(cap >= 1);
    let mut tree = FamilyTree {
        individuals: Vec::new(),
        root_type,
        horizon,
        extinct_at: None,
        capped: false,
    };
    let mut trunk_ids = Vec::new();
    let mut queue: BinaryHeap<Event> = BinaryHeap::new();

    let spawn = |tree: &mut FamilyTree,
                 queue: &mut BinaryHeap<Event>,
                 parent: Option<IndividualId>,
                 ty: TypeIndex,
                 birth: f64,
                 on_trunk: bool,
                 rng: &mut R| {
        let id = tree.individuals.len();
        let rate = if on_trunk {
            dynamics.lifetime_rates[ty.0]
        } else {
            model.split_rate(ty)
        };
        let split = birth + exp_time(rng, rate);
        let (end, fate) = if split >= horizon {
            (horizon, Fate::Boundary)
        } else {
            queue.push(Event {
                time: split,
                id,
                on_trunk,
            });
            (split, Fate::Split(Vec::new()))
        };
        tree.individuals.push(Individual {
            parent,
            ty,
            birth,
            end,
            fate,
        });
        id
    };

    let root = spawn(&mut tree, &mut queue, None, root_type, 0.0, true, rng);
    trunk_ids.push(root);

    while let Some(Event { time, id, on_trunk }) = queue.pop() {
        let ty = tree.individuals[id].ty;
        let law = if on_trunk {
            &dynamics.laws[ty.0]
        } else {
            model.offspring(ty)
        };
        let counts = sample_offspring(law, rng).counts.clone();
        let total: u64 = counts.iter().sum();
        if total == 0 {
            debug_assert!(!on_trunk, "size-biased law has no zero-offspring atom");
            tree.individuals[id].fate = Fate::Dead;
            continue;
        }
        if tree.individuals.len() + total as usize > cap {
            tree.capped = true;
            tree.individuals[id].fate = Fate::Boundary;
            while let Some(Event { id: other, .. }) = queue.pop() {
                tree.individuals[other].fate = Fate::Boundary;
            }
            break;
        }
        // On the trunk, choose which realized child continues it, weighted
        // by the child's type weight. The selection weight is always
        // positive: the biased law puts no mass on empty offspring.
        let successor_slot = if on_trunk {
            let slot_weights = counts
                .iter()
                .enumerate()
                .flat_map(|(j, &k)| std::iter::repeat_n(dynamics.weights[j], k as usize));
            let total_weight: f64 = slot_weights.clone().sum();
            assert!(total_weight > 0.0, "trunk offspring must carry weight");
            Some(sample_index(
                rng,
                slot_weights.map(move |w| w / total_weight),
            ))
        } else {
            None
        };
        let mut children = Vec::with_capacity(total as usize);
        let mut slot = 0usize;
        for (j, &k) in counts.iter().enumerate() {
            for _ in 0..k {
                let child_on_trunk = successor_slot == Some(slot);
                let child = spawn(
                    &mut tree,
                    &mut queue,
                    Some(id),
                    TypeIndex(j),
                    time,
                    child_on_trunk,
                    rng,
                );
                if child_on_trunk {
                    trunk_ids.push(child);
                }
                children.push(child);
                slot += 1;
            }
        }
        tree.individuals[id].fate = Fate::Split(children);
    }

    BiasedTree {
        tree,
        trunk_ids,
        variant: dynamics.variant,
    }
}
