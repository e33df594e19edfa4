//! Forward simulation of the family tree.
//!
//! Individuals live for an exponential time with their type's split rate and
//! are then replaced by an offspring vector drawn from their type's law. The
//! tree is generated event by event in split-time order, so truncation at the
//! individual cap is time-coherent: everything born before the breach time is
//! present. Lifetime intervals are half-open `[birth, end)`; a query exactly
//! at a split time sees the children, not the parent. Individuals still alive
//! at the horizon carry the boundary fate and count as alive at the horizon
//! itself.

use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::linalg::tv_distance;
use crate::model::{BranchingModel, MeanData, OffspringLaw, TypeIndex};
use crate::path::{OccupationVector, SegmentStats, TypePath};
use crate::rng::{exp_time, sample_index};
use crate::spectral::SpectralData;

pub type IndividualId = usize;

/// Default ceiling on arena size; supercritical populations explode, and a
/// breached cap marks the replicate instead of silently truncating it.
pub const DEFAULT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Fate {
    /// Split into the listed children at `end`.
    Split(Vec<IndividualId>),
    /// Alive at the horizon (or at the cap-breach time on capped trees).
    Boundary,
    /// Died with zero offspring at `end`.
    Dead,
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub parent: Option<IndividualId>,
    pub ty: TypeIndex,
    pub birth: f64,
    /// Split/death time, or the truncation time for boundary fate. Strictly
    /// greater than `birth` except for boundary individuals at horizon 0.
    pub end: f64,
    pub fate: Fate,
}

/// Arena-backed family tree. Ids are dense `0..n`, children always carry
/// larger ids than their parent (generation order is split-time order).
#[derive(Debug, Clone)]
pub struct FamilyTree {
    pub individuals: Vec<Individual>,
    pub root_type: TypeIndex,
    pub horizon: f64,
    pub extinct_at: Option<f64>,
    pub capped: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("individual {id} is not alive at time {t}")]
    NotAlive { id: IndividualId, t: f64 },
    #[error("population is empty at time {t}: undefined on extinction")]
    EmptyPopulation { t: f64 },
    #[error("no type-{ty} individuals alive at time {t}")]
    NoTypeIndividuals { ty: TypeIndex, t: f64 },
    #[error("tree is capped; replicate is unusable for estimators")]
    Capped,
    #[error("cannot parse tree dump: {0}")]
    Parse(String),
}

/// Min-heap key: earliest split first, id as deterministic tiebreak.
#[derive(Debug, PartialEq)]
struct Event {
    time: f64,
    id: IndividualId,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
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

/// Simulate the family tree from one root up to `horizon`, truncating the
/// arena at `cap` individuals. The same RNG stream always produces the
/// bit-identical tree.
pub fn simulate<R: Rng + ?Sized>(
    model: &BranchingModel,
    root_type: TypeIndex,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> FamilyTree {
    assert!(horizon >= 0.0, "horizon must be nonnegative");
    assert!(cap >= 1, "cap must allow at least the root");
    let mut tree = FamilyTree {
        individuals: Vec::new(),
        root_type,
        horizon,
        extinct_at: None,
        capped: false,
    };
    let mut queue: BinaryHeap<Event> = BinaryHeap::new();
    let mut alive: usize = 0;

    let spawn = |tree: &mut FamilyTree,
                     queue: &mut BinaryHeap<Event>,
                     alive: &mut usize,
                     parent: Option<IndividualId>,
                     ty: TypeIndex,
                     birth: f64,
                     rng: &mut R| {
        let id = tree.individuals.len();
        let split = birth + exp_time(rng, model.split_rate(ty));
        let (end, fate) = if split >= horizon {
            (horizon, Fate::Boundary)
        } else {
            queue.push(Event { time: split, id });
            (split, Fate::Split(Vec::new()))
        };
        tree.individuals.push(Individual {
            parent,
            ty,
            birth,
            end,
            fate,
        });
        *alive += 1;
    };

    spawn(
        &mut tree,
        &mut queue,
        &mut alive,
        None,
        root_type,
        0.0,
        rng,
    );

    while let Some(Event { time, id }) = queue.pop() {
        let ty = tree.individuals[id].ty;
        let counts = sample_offspring(model.offspring(ty), rng).counts.clone();
        let total: u64 = counts.iter().sum();
        alive -= 1;
        if total == 0 {
            tree.individuals[id].fate = Fate::Dead;
            if alive == 0 {
                tree.extinct_at = Some(time);
            }
            continue;
        }
        if tree.individuals.len() + total as usize > cap {
            // Cap breach: leave this split unexpanded and freeze everything
            // still pending as boundary at its own split time.
            tree.capped = true;
            tree.individuals[id].fate = Fate::Boundary;
            while let Some(Event { id: other, .. }) = queue.pop() {
                tree.individuals[other].fate = Fate::Boundary;
            }
            break;
        }
        let mut children = Vec::with_capacity(total as usize);
        for (j, &k) in counts.iter().enumerate() {
            for _ in 0..k {
                children.push(tree.individuals.len());
                spawn(
                    &mut tree,
                    &mut queue,
                    &mut alive,
                    Some(id),
                    TypeIndex(j),
                    time,
                    rng,
                );
            }
        }
        tree.individuals[id].fate = Fate::Split(children);
    }
    tree
}

pub(crate) fn sample_offspring<'a, R: Rng + ?Sized>(
    law: &'a OffspringLaw,
    rng: &mut R,
) -> &'a crate::model::Atom {
    let k = sample_index(rng, law.atoms.iter().map(|a| a.prob));
    &law.atoms[k]
}

impl FamilyTree {
    fn check_time(&self, t: f64) -> Result<(), TreeError> {
        if t < 0.0 || t > self.horizon {
            Err(TreeError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        } else {
            Ok(())
        }
    }

    /// Whether an individual's lifetime contains `t`. Boundary individuals
    /// are alive at their truncation time itself.
    fn alive_at(&self, id: IndividualId, t: f64) -> bool {
        let ind = &self.individuals[id];
        ind.birth <= t && (t < ind.end || (ind.fate == Fate::Boundary && t <= ind.end))
    }

    /// Ids of all individuals alive at `t`.
    pub fn population_at(&self, t: f64) -> Result<Vec<IndividualId>, TreeError> {
        self.check_time(t)?;
        Ok((0..self.individuals.len())
            .filter(|&id| self.alive_at(id, t))
            .collect())
    }

    /// Type histogram `Z(t)` of the population alive at `t`.
    pub fn type_counts(&self, t: f64, num_types: usize) -> Result<Vec<u64>, TreeError> {
        self.check_time(t)?;
        let mut z = vec![0u64; num_types];
        for id in 0..self.individuals.len() {
            if self.alive_at(id, t) {
                z[self.individuals[id].ty.0] += 1;
            }
        }
        Ok(z)
    }

    /// The unique ancestor of `x` alive at time `s`.
    pub fn ancestor_at(&self, x: IndividualId, s: f64) -> Result<IndividualId, TreeError> {
        if s < 0.0 {
            return Err(TreeError::TimeOutOfRange {
                t: s,
                horizon: self.horizon,
            });
        }
        let mut cur = x;
        while self.individuals[cur].birth > s {
            cur = self.individuals[cur]
                .parent
                .ok_or(TreeError::NotAlive { id: x, t: s })?;
        }
        if s < self.individuals[cur].end || self.alive_at(cur, s) {
            Ok(cur)
        } else {
            Err(TreeError::NotAlive { id: x, t: s })
        }
    }

    /// Empirical ancestral type distribution: types of the time-`t−u`
    /// ancestors of the population alive at `t`, normalized by `|X(t)|`.
    pub fn ancestral_average(
        &self,
        t: f64,
        u: f64,
        num_types: usize,
    ) -> Result<Vec<f64>, TreeError> {
        self.check_time(t)?;
        if u < 0.0 || u > t {
            return Err(TreeError::TimeOutOfRange { t: u, horizon: t });
        }
        let pop = self.population_at(t)?;
        if pop.is_empty() {
            return Err(TreeError::EmptyPopulation { t });
        }
        let mut hist = vec![0.0; num_types];
        for &x in &pop {
            let anc = self.ancestor_at(x, t - u)?;
            hist[self.individuals[anc].ty.0] += 1.0;
        }
        let n = pop.len() as f64;
        for v in &mut hist {
            *v /= n;
        }
        Ok(hist)
    }

    /// The lineage of `x` as a type path on `[0, t]`: ancestor lifetime
    /// segments clipped to `t`, root first.
    pub fn lineage_path(&self, x: IndividualId, t: f64) -> Result<TypePath, TreeError> {
        self.check_time(t)?;
        if !self.alive_at(x, t) {
            return Err(TreeError::NotAlive { id: x, t });
        }
        let mut rev = Vec::new();
        let mut cur = Some(x);
        while let Some(id) = cur {
            let ind = &self.individuals[id];
            let hi = ind.end.min(t);
            rev.push((ind.ty, hi - ind.birth));
            cur = ind.parent;
        }
        rev.reverse();
        Ok(TypePath::new(rev))
    }

    /// Occupation vector `L^x(t)`: per-type fraction of `[0, t]` covered by
    /// the lineage of `x`.
    pub fn lineage_occupation(
        &self,
        x: IndividualId,
        t: f64,
        num_types: usize,
    ) -> Result<OccupationVector, TreeError> {
        if t <= 0.0 {
            return Err(TreeError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let path = self.lineage_path(x, t)?;
        Ok(path
            .occupation(num_types)
            .expect("lineage of an alive individual has positive length"))
    }

    /// `W(t) = ⟨Z(t), h⟩ e^{−λt}`; zero once the tree is extinct.
    pub fn martingale_w(&self, spec: &SpectralData, t: f64) -> Result<f64, TreeError> {
        if self.capped {
            return Err(TreeError::Capped);
        }
        let z = self.type_counts(t, spec.h.len())?;
        let zh: f64 = z.iter().zip(&spec.h).map(|(&c, h)| c as f64 * h).sum();
        Ok(zh * (-spec.lambda * t).exp())
    }

    /// `W̃(t) = Σ_{x ∈ X(t)} exp(−t ⟨L^x(t), r⟩)`: each survivor weighted by
    /// the mean reproduction rate along its lineage. Zero on extinction.
    pub fn martingale_w_tilde(&self, mean: &MeanData, t: f64) -> Result<f64, TreeError> {
        if self.capped {
            return Err(TreeError::Capped);
        }
        let pop = self.population_at(t)?;
        if t == 0.0 {
            return Ok(pop.len() as f64);
        }
        let n = mean.r.len();
        let mut sum = 0.0;
        for &x in &pop {
            let occ = self.lineage_occupation(x, t, n)?;
            let lr: f64 = occ.weights.iter().zip(&mean.r).map(|(l, r)| l * r).sum();
            sum += (-t * lr).exp();
        }
        Ok(sum)
    }

    /// Pooled segment statistics over the lineages of everyone alive at `t`,
    /// one lineage per survivor. Shared ancestral segments count once per
    /// lineage passing through them.
    pub fn lineage_statistics(&self, t: f64, num_types: usize) -> Result<SegmentStats, TreeError> {
        self.check_time(t)?;
        let counts = self.alive_descendant_counts(t);
        if counts[0] == 0 {
            return Err(TreeError::EmptyPopulation { t });
        }
        let mut stats = SegmentStats::new(num_types);
        for id in 0..self.individuals.len() {
            if counts[id] == 0 {
                continue;
            }
            let ind = &self.individuals[id];
            if self.alive_at(id, t) {
                stats.paths += 1;
                stats.add_censored(ind.ty, t - ind.birth);
            } else if let Fate::Split(children) = &ind.fate {
                stats.sojourn_total[ind.ty.0] += (ind.end - ind.birth) * counts[id] as f64;
                stats.exit_count[ind.ty.0] += counts[id];
                for &c in children {
                    if counts[c] > 0 {
                        stats.transitions[ind.ty.0][self.individuals[c].ty.0] += counts[c];
                    }
                }
            }
        }
        Ok(stats)
    }

    /// Number of time-`t` survivors in each individual's descendant subtree
    /// (including itself). Children carry larger ids, so one reverse sweep
    /// suffices.
    fn alive_descendant_counts(&self, t: f64) -> Vec<u64> {
        let mut counts = vec![0u64; self.individuals.len()];
        for id in (0..self.individuals.len()).rev() {
            let mut c = u64::from(self.alive_at(id, t));
            if let Fate::Split(children) = &self.individuals[id].fate {
                for &child in children {
                    c += counts[child];
                }
            }
            counts[id] = c;
        }
        counts
    }

    /// Fraction of survivors at `t` whose lineage occupation is at total
    /// variation `≥ epsilon` from `reference`.
    pub fn empirical_l_distribution(
        &self,
        t: f64,
        reference: &[f64],
        epsilon: f64,
    ) -> Result<f64, TreeError> {
        assert!(epsilon > 0.0, "epsilon must be positive");
        let pop = self.population_at(t)?;
        if pop.is_empty() {
            return Err(TreeError::EmptyPopulation { t });
        }
        let mut far = 0usize;
        for &x in &pop {
            let occ = self.lineage_occupation(x, t, reference.len())?;
            if tv_distance(&occ.weights, reference) >= epsilon {
                far += 1;
            }
        }
        Ok(far as f64 / pop.len() as f64)
    }

    /// Mean type histogram `Z(x, s+u)` over the descendant subtrees of
    /// type-`j` individuals alive at `s`.
    pub fn subtree_type_average(
        &self,
        j: TypeIndex,
        s: f64,
        u: f64,
        num_types: usize,
    ) -> Result<Vec<f64>, TreeError> {
        let per_root = self.subtree_counts(j, s, u, num_types)?;
        let mut mean = vec![0.0; num_types];
        for counts in &per_root {
            for (m, &c) in mean.iter_mut().zip(counts) {
                *m += c as f64;
            }
        }
        for m in &mut mean {
            *m /= per_root.len() as f64;
        }
        Ok(mean)
    }

    /// Average of a named functional over the descendant subtrees of
    /// type-`j` individuals alive at `s`, observed at lag `u`.
    pub fn subtree_functional_average(
        &self,
        j: TypeIndex,
        s: f64,
        u: f64,
        f: SubtreeFunctional,
        num_types: usize,
    ) -> Result<f64, TreeError> {
        let per_root = self.subtree_counts(j, s, u, num_types)?;
        let values = per_root.iter().map(|counts| {
            let size: u64 = counts.iter().sum();
            match f {
                SubtreeFunctional::PopulationSize => size as f64,
                SubtreeFunctional::Survival => f64::from(size > 0),
            }
        });
        Ok(values.sum::<f64>() / per_root.len() as f64)
    }

    /// `Z(x, s+u)` for each type-`j` individual `x` alive at `s`.
    fn subtree_counts(
        &self,
        j: TypeIndex,
        s: f64,
        u: f64,
        num_types: usize,
    ) -> Result<Vec<Vec<u64>>, TreeError> {
        assert!(u >= 0.0, "lag must be nonnegative");
        self.check_time(s + u)?;
        let roots: Vec<IndividualId> = self
            .population_at(s)?
            .into_iter()
            .filter(|&x| self.individuals[x].ty == j)
            .collect();
        if roots.is_empty() {
            return Err(TreeError::NoTypeIndividuals { ty: j, t: s });
        }
        let mut index_of = vec![usize::MAX; self.individuals.len()];
        for (k, &x) in roots.iter().enumerate() {
            index_of[x] = k;
        }
        let mut per_root = vec![vec![0u64; num_types]; roots.len()];
        for y in self.population_at(s + u)? {
            let anc = self.ancestor_at(y, s)?;
            if index_of[anc] != usize::MAX {
                per_root[index_of[anc]][self.individuals[y].ty.0] += 1;
            }
        }
        Ok(per_root)
    }

    // ── Dump format ──────────────────────────────────────────────────────

    /// Line-oriented dump: a `tree` header with the tree attributes, then
    /// one individual per line as `id parent type birth end fate` with
    /// fate `S:<child ids>`, `B`, or `D`. Round-trips losslessly.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let extinct = match self.extinct_at {
            Some(t) => t.to_string(),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "tree root={} horizon={} capped={} extinct={}\n",
            self.root_type,
            self.horizon,
            u8::from(self.capped),
            extinct
        ));
        for (id, ind) in self.individuals.iter().enumerate() {
            let parent = match ind.parent {
                Some(p) => p.to_string(),
                None => "-".to_string(),
            };
            let fate = match &ind.fate {
                Fate::Split(children) => format!(
                    "S:{}",
                    children
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                ),
                Fate::Boundary => "B".to_string(),
                Fate::Dead => "D".to_string(),
            };
            out.push_str(&format!(
                "{id} {parent} {} {} {} {fate}\n",
                ind.ty, ind.birth, ind.end
            ));
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self, TreeError> {
        let bad = |msg: &str| TreeError::Parse(msg.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty dump"))?;
        let mut root_type = None;
        let mut horizon = None;
        let mut capped = None;
        let mut extinct_at = None;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("tree") {
            return Err(bad("missing tree header"));
        }
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad("malformed header"))?;
            match key {
                "root" => root_type = Some(TypeIndex(value.parse().map_err(|_| bad("root"))?)),
                "horizon" => horizon = Some(value.parse().map_err(|_| bad("horizon"))?),
                "capped" => capped = Some(value == "1"),
                "extinct" => {
                    extinct_at = if value == "-" {
                        Some(None)
                    } else {
                        Some(Some(value.parse().map_err(|_| bad("extinct"))?))
                    }
                }
                _ => return Err(bad("unknown header field")),
            }
        }
        let mut individuals = Vec::new();
        for (k, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 {
                return Err(bad(&format!("line {} has {} fields", k + 2, parts.len())));
            }
            let id: usize = parts[0].parse().map_err(|_| bad("id"))?;
            if id != k {
                return Err(bad("ids must be dense and in order"));
            }
            let parent = if parts[1] == "-" {
                None
            } else {
                Some(parts[1].parse().map_err(|_| bad("parent"))?)
            };
            let ty = TypeIndex(parts[2].parse().map_err(|_| bad("type"))?);
            let birth: f64 = parts[3].parse().map_err(|_| bad("birth"))?;
            let end: f64 = parts[4].parse().map_err(|_| bad("end"))?;
            let fate = match parts[5] {
                "B" => Fate::Boundary,
                "D" => Fate::Dead,
                s if s.starts_with("S:") => Fate::Split(
                    s[2..]
                        .split(',')
                        .filter(|c| !c.is_empty())
                        .map(|c| c.parse().map_err(|_| bad("child id")))
                        .collect::<Result<_, _>>()?,
                ),
                _ => return Err(bad("unknown fate")),
            };
            individuals.push(Individual {
                parent,
                ty,
                birth,
                end,
                fate,
            });
        }
        Ok(FamilyTree {
            individuals,
            root_type: root_type.ok_or_else(|| bad("missing root"))?,
            horizon: horizon.ok_or_else(|| bad("missing horizon"))?,
            extinct_at: extinct_at.ok_or_else(|| bad("missing extinct"))?,
            capped: capped.ok_or_else(|| bad("missing capped"))?,
        })
    }
}

/// Named functionals over descendant subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtreeFunctional {
    PopulationSize,
    Survival,
}

// ── Streaming survey ─────────────────────────────────────────────────────

/// Lineage survey of one replicate computed without materializing the arena.
///
/// At large horizons a supercritical tree outgrows memory while the lineage
/// statistics still only need a depth-first pass, so this walks the tree with
/// an explicit stack, accumulating for every survivor its lineage occupation
/// and pooling complete-segment statistics weighted by how many lineages
/// share each segment. Statistically identical to running
/// [`FamilyTree::lineage_statistics`] and
/// [`FamilyTree::empirical_l_distribution`] on a full tree.
#[derive(Debug, Clone)]
pub struct LineageSurvey {
    pub alive: u64,
    /// Survivors with `TV(L^x, reference) ≥ epsilon`, when a reference was
    /// supplied.
    pub far: u64,
    pub stats: SegmentStats,
    pub individuals: u64,
    pub capped: bool,
}

impl LineageSurvey {
    pub fn far_fraction(&self) -> Option<f64> {
        (self.alive > 0).then(|| self.far as f64 / self.alive as f64)
    }
}

struct SurveyFrame {
    ty: usize,
    birth: f64,
    split: f64,
    atom: usize,
    // Child cursor: next type and how many of it were already emitted.
    next_type: usize,
    emitted: u64,
    alive_count: u64,
}

const SURVEY_LEAF: usize = usize::MAX;

/// Depth-first streaming simulation of one tree; memory is proportional to
/// depth, not population size.
pub fn streaming_lineage_survey<R: Rng + ?Sized>(
    model: &BranchingModel,
    root_type: TypeIndex,
    horizon: f64,
    cap: u64,
    reference: Option<(&[f64], f64)>,
    rng: &mut R,
) -> LineageSurvey {
    let n = model.num_types();
    let mut survey = LineageSurvey {
        alive: 0,
        far: 0,
        stats: SegmentStats::new(n),
        individuals: 0,
        capped: false,
    };
    let mut frames: Vec<SurveyFrame> = Vec::new();
    // occ[d*n..(d+1)*n] is the lineage occupation up to frame d's birth.
    let mut occ: Vec<f64> = Vec::new();
    let mut scratch = vec![0.0; n];

    let push = |frames: &mut Vec<SurveyFrame>,
                    occ: &mut Vec<f64>,
                    survey: &mut LineageSurvey,
                    scratch: &mut [f64],
                    ty: usize,
                    birth: f64,
                    rng: &mut R|
     -> bool {
        survey.individuals += 1;
        if survey.individuals > cap {
            survey.capped = true;
            return false;
        }
        let base = frames.len() * n;
        occ.resize(base + n, 0.0);
        if let Some(parent) = frames.last() {
            let pbase = base - n;
            for k in 0..n {
                occ[base + k] = occ[pbase + k];
            }
            occ[base + parent.ty] += parent.split - parent.birth;
        } else {
            occ[base..base + n].fill(0.0);
        }
        let split = birth + exp_time(rng, model.split_rate(TypeIndex(ty)));
        if split >= horizon {
            // Survivor: censored tip segment, deviation test, no descent.
            survey.alive += 1;
            survey.stats.paths += 1;
            survey.stats.add_censored(TypeIndex(ty), horizon - birth);
            if let Some((reference, eps)) = reference {
                if horizon > 0.0 {
                    for k in 0..n {
                        scratch[k] = occ[base + k] / horizon;
                    }
                    scratch[ty] += (horizon - birth) / horizon;
                    if tv_distance(scratch, reference) >= eps {
                        survey.far += 1;
                    }
                } else if tv_distance_unit(reference, ty) >= eps {
                    survey.far += 1;
                }
            }
            frames.push(SurveyFrame {
                ty,
                birth,
                split,
                atom: SURVEY_LEAF,
                next_type: n,
                emitted: 0,
                alive_count: 1,
            });
            return true;
        }
        let atom = sample_index(
            rng,
            model.offspring(TypeIndex(ty)).atoms.iter().map(|a| a.prob),
        );
        frames.push(SurveyFrame {
            ty,
            birth,
            split,
            atom,
            next_type: 0,
            emitted: 0,
            alive_count: 0,
        });
        true
    };

    if !push(
        &mut frames,
        &mut occ,
        &mut survey,
        &mut scratch,
        root_type.0,
        0.0,
        rng,
    ) {
        return survey;
    }

    while let Some(top) = frames.last() {
        // Find the next child of the top frame, if any.
        let mut next = None;
        if top.atom != SURVEY_LEAF {
            let counts = &model.offspring(TypeIndex(top.ty)).atoms[top.atom].counts;
            let mut ty = top.next_type;
            let mut emitted = top.emitted;
            while ty < n && emitted >= counts[ty] {
                ty += 1;
                emitted = 0;
            }
            if ty < n {
                next = Some((ty, emitted));
            }
        }
        match next {
            Some((child_ty, emitted)) => {
                let birth = {
                    let top = frames.last_mut().unwrap();
                    top.next_type = child_ty;
                    top.emitted = emitted + 1;
                    top.split
                };
                if !push(
                    &mut frames,
                    &mut occ,
                    &mut survey,
                    &mut scratch,
                    child_ty,
                    birth,
                    rng,
                ) {
                    return survey;
                }
            }
            None => {
                // Frame exhausted: record its complete segment (weighted by
                // the lineages passing through it) and fold into the parent.
                let frame = frames.pop().unwrap();
                occ.truncate(frames.len() * n);
                if frame.atom != SURVEY_LEAF && frame.alive_count > 0 {
                    survey.stats.sojourn_total[frame.ty] +=
                        (frame.split - frame.birth) * frame.alive_count as f64;
                    survey.stats.exit_count[frame.ty] += frame.alive_count;
                }
                if let Some(parent) = frames.last_mut() {
                    parent.alive_count += frame.alive_count;
                    if frame.alive_count > 0 {
                        survey.stats.transitions[parent.ty][frame.ty] += frame.alive_count;
                    }
                }
            }
        }
    }
    survey
}

/// TV distance between `reference` and the unit mass at `ty`.
fn tv_distance_unit(reference: &[f64], ty: usize) -> f64 {
    let mut sum = 0.0;
    for (k, &r) in reference.iter().enumerate() {
        sum += if k == ty { (1.0 - r).abs() } else { r.abs() };
    }
    0.5 * sum
}
