//! Monte Carlo verification engine.
//!
//! Estimates both sides of the size-bias change-of-measure identity, the
//! Feynman-Kac formula, martingale means, the classical limit theorems at
//! finite horizons, and large-deviation rates via the trunk representation.
//! Every check emits a [`CheckRow`]; statistical checks compare at three
//! combined standard errors, and a failed check is rerun once on a fresh
//! substream and flagged flaky rather than failed if the rerun passes.
//!
//! The functional registry is closed: both simulators evaluate the identical
//! named functional on a type path, which is what makes the two sides of
//! a verification comparable at all. Extending the registry means adding a
//! variant here and tests on both sides.

use std::fmt;

use crate::biased::{
    simulate_biased_tree, simulate_mutation_chain, simulate_trunk, TrunkChain, TrunkDynamics,
};
use crate::forward::{simulate, streaming_lineage_survey, FamilyTree};
pub use crate::forward::SubtreeFunctional;
use crate::linalg::{pairwise_sum, tv_distance};
use crate::model::{BranchingModel, MeanData, TypeIndex};
use crate::path::{SegmentStats, TypePath};
use crate::report::{CheckRow, Verdict};
use crate::rng::{run_replicates, StreamContext};
use crate::spectral::{
    matrix_exponential, rate_function, variational_lambda, DerivedGenerators, RetrospectiveChain,
    SpectralData,
};

/// Statistical comparisons pass within this many combined standard errors.
pub const Z_THRESHOLD: f64 = 3.0;
/// Below this effective sample size a weighted estimate is inconclusive.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;
/// Absolute slack for zero-variance comparisons.
const EXACT_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("model does not validate: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error("every replicate hit the individual cap; raise the cap or lower t")]
    AllCapped,
    #[error("unknown functional `{0}`; known: constant_one, terminal_type:<j>, flip_count_le:<k>, occupation_ge:<j>:<theta>")]
    UnknownFunctional(String),
    #[error("not a probability vector: {0:?}")]
    NotProbability(Vec<f64>),
}

/// A model together with all of its spectral objects, computed once.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub name: String,
    pub model: BranchingModel,
    pub mean: MeanData,
    pub spec: SpectralData,
    pub chain: RetrospectiveChain,
    pub derived: DerivedGenerators,
}

impl ModelContext {
    pub fn new(name: impl Into<String>, model: BranchingModel) -> Result<Self, EstimatorError> {
        let report = model.validate();
        if !report.is_ok() {
            return Err(EstimatorError::InvalidModel(report.to_string()));
        }
        let mean = model
            .mean_data()
            .map_err(|e| EstimatorError::InvalidModel(e.to_string()))?;
        let spec = SpectralData::compute(&mean)?;
        let chain = RetrospectiveChain::new(&model, &mean, &spec);
        let derived = DerivedGenerators::new(&model, &mean, &spec);
        Ok(Self {
            name: name.into(),
            model,
            mean,
            spec,
            chain,
            derived,
        })
    }

    pub fn num_types(&self) -> usize {
        self.model.num_types()
    }
}

// ── Monte Carlo primitives ───────────────────────────────────────────────

/// Mean, standard error and replicate accounting of one estimate.
#[derive(Debug, Clone, Copy)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Replicates that contributed a value.
    pub n: u64,
    /// Replicates discarded (capped or, where stated, extinct).
    pub discarded: u64,
}

impl MCEstimate {
    /// Aggregate with pairwise summation so the result is independent of
    /// scheduling.
    pub fn from_values(values: &[f64], discarded: u64) -> Self {
        let n = values.len() as u64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
                discarded,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = pairwise_sum(&sq) / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        };
        Self {
            mean,
            stderr,
            n,
            discarded,
        }
    }
}

/// The closed registry of path functionals evaluated identically on forward
/// lineages and trunk paths. All are bounded and nonnegative; all current
/// members depend only on the type path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathFunctional {
    ConstantOne,
    /// Indicator that the path's terminal type is `j`.
    TerminalType(TypeIndex),
    /// Indicator that the path has at most `k` type changes.
    FlipCountLe(u32),
    /// Indicator that the occupation fraction of type `j` is at least `θ`.
    OccupationGe(TypeIndex, f64),
}

impl PathFunctional {
    pub fn evaluate(&self, path: &TypePath, num_types: usize) -> f64 {
        match *self {
            PathFunctional::ConstantOne => 1.0,
            PathFunctional::TerminalType(j) => f64::from(path.terminal() == Some(j)),
            PathFunctional::FlipCountLe(k) => f64::from(path.flip_count() <= k as usize),
            PathFunctional::OccupationGe(j, theta) => match path.occupation(num_types) {
                Some(occ) => f64::from(occ.weights[j.0] >= theta),
                None => 0.0,
            },
        }
    }

    /// Parse `name[:params]` with 0-based type indices, e.g.
    /// `terminal_type:1` or `occupation_ge:0:0.5`.
    pub fn parse(text: &str) -> Result<Self, EstimatorError> {
        let mut parts = text.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let err = || EstimatorError::UnknownFunctional(text.to_string());
        match (name, args.as_slice()) {
            ("constant_one", []) => Ok(PathFunctional::ConstantOne),
            ("terminal_type", [j]) => Ok(PathFunctional::TerminalType(TypeIndex(
                j.parse().map_err(|_| err())?,
            ))),
            ("flip_count_le", [k]) => {
                Ok(PathFunctional::FlipCountLe(k.parse().map_err(|_| err())?))
            }
            ("occupation_ge", [j, theta]) => Ok(PathFunctional::OccupationGe(
                TypeIndex(j.parse().map_err(|_| err())?),
                theta.parse().map_err(|_| err())?,
            )),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFunctional::ConstantOne => write!(f, "constant_one"),
            PathFunctional::TerminalType(j) => write!(f, "terminal_type:{j}"),
            PathFunctional::FlipCountLe(k) => write!(f, "flip_count_le:{k}"),
            PathFunctional::OccupationGe(j, theta) => write!(f, "occupation_ge:{j}:{theta}"),
        }
    }
}

/// Derive a substream task id from the check identity. FNV-1a, folded to
/// the 24-bit task space.
fn task_of(check: &str, params: &str) -> u32 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in check.bytes().chain([b'\0']).chain(params.bytes()) {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    ((hash ^ (hash >> 24) ^ (hash >> 48)) & 0xff_ffff) as u32
}

/// Run a check, and on failure rerun it once on a fresh substream: a pass
/// on the second attempt is flagged flaky instead of failed.
fn with_rerun(run: impl Fn(u32) -> CheckRow) -> CheckRow {
    let first = run(0);
    if first.verdict != Verdict::Fail {
        return first;
    }
    let mut second = run(1);
    if second.verdict != Verdict::Fail {
        second.verdict = Verdict::Flaky;
    }
    second
}

fn z_verdict(diff: f64, se: f64, scale: f64) -> Verdict {
    if diff.abs() <= Z_THRESHOLD * se + EXACT_SLACK * (1.0 + scale.abs()) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

// ── Size-bias identity ───────────────────────────────────────────────────

/// One forward replicate of the weighted population functional:
/// `h_i⁻¹ e^{−λt} Σ_{x∈X(t)} F(x's lineage) h_{σ(x)}`. `None` when capped;
/// extinction contributes an empty sum, not a discard.
fn forward_value(
    ctx: &ModelContext,
    f: &PathFunctional,
    root: TypeIndex,
    t: f64,
    cap: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<f64> {
    let tree = simulate(&ctx.model, root, t, cap, rng);
    if tree.capped {
        return None;
    }
    let n = ctx.num_types();
    let pop = tree.population_at(t).expect("t is the horizon");
    let mut sum = 0.0;
    for x in pop {
        let path = tree.lineage_path(x, t).expect("x alive at t");
        sum += f.evaluate(&path, n) * ctx.spec.h[tree.individuals[x].ty.0];
    }
    Some(sum * (-ctx.spec.lambda * t).exp() / ctx.spec.h[root.0])
}

/// Forward-side estimate of the size-bias identity for `F`.
pub fn estimate_forward_side(
    ctx: &ModelContext,
    f: &PathFunctional,
    root: TypeIndex,
    t: f64,
    n: u32,
    cap: usize,
    stream: StreamContext,
) -> Result<MCEstimate, EstimatorError> {
    let values = run_replicates(stream, n, |_, rng| forward_value(ctx, f, root, t, cap, rng));
    let kept: Vec<f64> = values.iter().copied().flatten().collect();
    let discarded = (n as usize - kept.len()) as u64;
    if kept.is_empty() {
        return Err(EstimatorError::AllCapped);
    }
    Ok(MCEstimate::from_values(&kept, discarded))
}

/// Trunk-side estimate `Ê(F(ξ[0,t]))`. The registry functionals depend only
/// on the trunk's type path, so bushes are never simulated here.
pub fn estimate_trunk_side(
    ctx: &ModelContext,
    f: &PathFunctional,
    root: TypeIndex,
    t: f64,
    n: u32,
    stream: StreamContext,
) -> MCEstimate {
    let tc = TrunkChain::h_weighted(&ctx.chain);
    let num_types = ctx.num_types();
    let values = run_replicates(stream, n, |_, rng| {
        let path = simulate_trunk(&tc, root, t, rng);
        f.evaluate(&path, num_types)
    });
    MCEstimate::from_values(&values, 0)
}

/// Compare forward and trunk estimates of `F` at three combined standard
/// errors.
pub fn verify_size_bias(
    ctx: &ModelContext,
    f: &PathFunctional,
    root: TypeIndex,
    t: f64,
    n: u32,
    cap: usize,
    seed: u64,
) -> Result<CheckRow, EstimatorError> {
    let params = format!("F={f};root={root};t={t};n={n}");
    let task = task_of("size_bias", &params);
    let run = |attempt: u32| -> Result<CheckRow, EstimatorError> {
        let fwd = estimate_forward_side(
            ctx,
            f,
            root,
            t,
            n,
            cap,
            StreamContext::new(seed, task).with_attempt(attempt * 2),
        )?;
        let trunk = estimate_trunk_side(
            ctx,
            f,
            root,
            t,
            n,
            StreamContext::new(seed, task).with_attempt(attempt * 2 + 1),
        );
        let se = (fwd.stderr * fwd.stderr + trunk.stderr * trunk.stderr).sqrt();
        Ok(CheckRow {
            check: "size_bias".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: fwd.mean,
            stderr: se,
            target: trunk.mean,
            tolerance: Z_THRESHOLD * se,
            n: fwd.n + trunk.n,
            discarded: fwd.discarded,
            verdict: z_verdict(fwd.mean - trunk.mean, se, trunk.mean),
        })
    };
    // Propagate a hard failure (all replicates capped) from the first run.
    let first = run(0)?;
    if first.verdict != Verdict::Fail {
        return Ok(first);
    }
    let mut second = run(1)?;
    if second.verdict != Verdict::Fail {
        second.verdict = Verdict::Flaky;
    }
    Ok(second)
}

// ── Feynman-Kac ──────────────────────────────────────────────────────────

/// Check `E^i(Z_j(t)) = Ẽ(e^{t⟨L,r⟩} I{σ(ξ̃(t)) = j})` using the uniform
/// (γ≡1) trunk chain against the matrix exponential. Reports effective
/// sample size of the exponential weights; below
/// [`MIN_EFFECTIVE_SAMPLES`] the verdict is inconclusive.
pub fn feynman_kac_check(
    ctx: &ModelContext,
    root: TypeIndex,
    j: TypeIndex,
    t: f64,
    n: u32,
    seed: u64,
) -> CheckRow {
    let params = format!("i={root};j={j};t={t};n={n}");
    let task = task_of("feynman_kac", &params);
    let target = matrix_exponential(&ctx.mean.a, t).get(root.0, j.0);
    let tc = TrunkChain::uniform(&ctx.model, &ctx.mean);
    let num_types = ctx.num_types();
    with_rerun(|attempt| {
        let pairs = run_replicates(
            StreamContext::new(seed, task).with_attempt(attempt),
            n,
            |_, rng| {
                let path = simulate_trunk(&tc, root, t, rng);
                let occ = path
                    .occupation(num_types)
                    .expect("positive-length trunk path");
                let log_rate: f64 = occ
                    .weights
                    .iter()
                    .zip(&ctx.mean.r)
                    .map(|(l, r)| l * r)
                    .sum();
                let weight = (t * log_rate).exp();
                let hit = path.terminal() == Some(j);
                (if hit { weight } else { 0.0 }, weight)
            },
        );
        let values: Vec<f64> = pairs.iter().map(|(v, _)| *v).collect();
        let weights: Vec<f64> = pairs.iter().map(|(_, w)| *w).collect();
        let est = MCEstimate::from_values(&values, 0);
        let wsum = pairwise_sum(&weights);
        let wsq: Vec<f64> = weights.iter().map(|w| w * w).collect();
        let ess = wsum * wsum / pairwise_sum(&wsq);
        let verdict = if ess < MIN_EFFECTIVE_SAMPLES {
            Verdict::Inconclusive
        } else {
            z_verdict(est.mean - target, est.stderr, target)
        };
        CheckRow {
            check: "feynman_kac".into(),
            model: ctx.name.clone(),
            params: format!("{params};ess={}", ess.round()),
            estimate: est.mean,
            stderr: est.stderr,
            target,
            tolerance: Z_THRESHOLD * est.stderr,
            n: est.n,
            discarded: 0,
            verdict,
        }
    })
}

// ── Large deviations ─────────────────────────────────────────────────────

/// Outcome of a trunk-based large-deviation rate estimate.
#[derive(Debug, Clone)]
pub struct LdpReport {
    pub row: CheckRow,
    /// `[λ − inf_open-ball I, λ − inf_closed-ball I]` (sorted), by grid.
    pub band: (f64, f64),
    pub hits: u64,
}

/// Estimate `(1/t) log E Σ_{x∈X(t)} I{L^x(t) ∈ B_ε(ν)}` through the trunk:
/// `λ + (1/t) log(h_i Ê[I{‖L^ξ(t) − ν‖_TV < ε} h_{σ(ξ(t))}⁻¹])`, compared
/// to the band `λ − inf_{ball} I_G` at the given tolerance.
pub fn ldp_rate_estimate(
    ctx: &ModelContext,
    root: TypeIndex,
    nu: &[f64],
    eps: f64,
    t: f64,
    n: u32,
    tolerance: f64,
    seed: u64,
) -> Result<LdpReport, EstimatorError> {
    check_probability(nu, ctx.num_types())?;
    let nu_str = nu
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("/");
    let params = format!("root={root};nu={nu_str};eps={eps};t={t};n={n}");
    let task = task_of("ldp_rate", &params);
    let lambda = ctx.spec.lambda;
    let g = &ctx.chain.generator;
    let target = lambda - rate_function(g, nu)?;
    let inf_open = rate_inf_over_ball(g, nu, eps, false)?;
    let inf_closed = rate_inf_over_ball(g, nu, eps, true)?;
    let band = {
        let (a, b) = (lambda - inf_open, lambda - inf_closed);
        (a.min(b), a.max(b))
    };

    let tc = TrunkChain::h_weighted(&ctx.chain);
    let num_types = ctx.num_types();
    let h = ctx.spec.h.clone();
    let run = |attempt: u32| {
        let values = run_replicates(
            StreamContext::new(seed, task).with_attempt(attempt),
            n,
            |_, rng| {
                let path = simulate_trunk(&tc, root, t, rng);
                let occ = path.occupation(num_types).expect("t > 0");
                if tv_distance(&occ.weights, nu) < eps {
                    1.0 / h[path.terminal().expect("nonempty").0]
                } else {
                    0.0
                }
            },
        );
        let hits = values.iter().filter(|v| **v > 0.0).count() as u64;
        let est = MCEstimate::from_values(&values, 0);
        let (estimate, stderr) = if hits == 0 {
            (f64::NEG_INFINITY, f64::NAN)
        } else {
            (
                lambda + (h[root.0] * est.mean).ln() / t,
                est.stderr / est.mean / t,
            )
        };
        let in_band = estimate >= band.0 - tolerance && estimate <= band.1 + tolerance;
        let row = CheckRow {
            check: "ldp_rate".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate,
            stderr: if stderr.is_nan() { 0.0 } else { stderr },
            target,
            tolerance,
            n: est.n,
            discarded: 0,
            verdict: if hits > 0 && in_band {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        };
        (row, hits)
    };
    let (first, hits) = run(0);
    let (row, hits) = if first.verdict == Verdict::Fail {
        let (mut second, hits2) = run(1);
        if second.verdict != Verdict::Fail {
            second.verdict = Verdict::Flaky;
        }
        (second, hits2)
    } else {
        (first, hits)
    };
    Ok(LdpReport { row, band, hits })
}

/// `inf I_G` over the total-variation ball around `center`, by grid scan of
/// the simplex (step 1e-3 for two types, 0.01 barycentric for three). For
/// one type the ball is the whole simplex and the infimum is zero; above
/// three types the center value is used.
pub fn rate_inf_over_ball(
    g: &crate::linalg::Matrix,
    center: &[f64],
    eps: f64,
    closed: bool,
) -> Result<f64, EstimatorError> {
    let n = g.dim();
    let inside = |point: &[f64]| {
        let d = tv_distance(point, center);
        if closed {
            d <= eps
        } else {
            d < eps
        }
    };
    let mut best = f64::INFINITY;
    let mut consider = |point: Vec<f64>| -> Result<(), EstimatorError> {
        if inside(&point) {
            best = best.min(rate_function(g, &point)?);
        }
        Ok(())
    };
    match n {
        1 => best = 0.0,
        2 => {
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                consider(vec![x, 1.0 - x])?;
            }
        }
        3 => {
            for i in 0..=100 {
                for j in 0..=(100 - i) {
                    let x = i as f64 / 100.0;
                    let y = j as f64 / 100.0;
                    consider(vec![x, y, 1.0 - x - y])?;
                }
            }
        }
        _ => {
            best = rate_function(g, center)?;
        }
    }
    Ok(best)
}

fn check_probability(nu: &[f64], n: usize) -> Result<(), EstimatorError> {
    let sum: f64 = nu.iter().sum();
    if nu.len() != n || (sum - 1.0).abs() > 1e-10 || nu.iter().any(|&x| x < -1e-10) {
        return Err(EstimatorError::NotProbability(nu.to_vec()));
    }
    Ok(())
}

// ── Absolute continuity (density identity) ───────────────────────────────

/// Check `h_i⁻¹ E(W(t) g(X[0,t])) = Ê(g(X̂[0,t]))` for `g` = population
/// size at `t`: the forward side weighted by the martingale density against
/// the full biased tree (bushes included).
pub fn density_identity_check(
    ctx: &ModelContext,
    root: TypeIndex,
    t: f64,
    n: u32,
    cap: usize,
    seed: u64,
) -> Result<CheckRow, EstimatorError> {
    let params = format!("root={root};t={t};n={n}");
    let task = task_of("density_identity", &params);
    let dynamics = TrunkDynamics::h_weighted(&ctx.model, &ctx.mean, &ctx.spec);
    let run = |attempt: u32| -> Result<CheckRow, EstimatorError> {
        let fwd_values = run_replicates(
            StreamContext::new(seed, task).with_attempt(attempt * 2),
            n,
            |_, rng| {
                let tree = simulate(&ctx.model, root, t, cap, rng);
                if tree.capped {
                    return None;
                }
                let g = tree.population_at(t).expect("horizon query").len() as f64;
                let w = tree.martingale_w(&ctx.spec, t).expect("not capped");
                Some(w * g / ctx.spec.h[root.0])
            },
        );
        let fwd_kept: Vec<f64> = fwd_values.iter().copied().flatten().collect();
        if fwd_kept.is_empty() {
            return Err(EstimatorError::AllCapped);
        }
        let fwd = MCEstimate::from_values(&fwd_kept, (n as usize - fwd_kept.len()) as u64);
        let biased_values = run_replicates(
            StreamContext::new(seed, task).with_attempt(attempt * 2 + 1),
            n,
            |_, rng| {
                let bt = simulate_biased_tree(&ctx.model, &dynamics, root, t, cap, rng);
                if bt.tree.capped {
                    return None;
                }
                Some(bt.tree.population_at(t).expect("horizon query").len() as f64)
            },
        );
        let biased_kept: Vec<f64> = biased_values.iter().copied().flatten().collect();
        if biased_kept.is_empty() {
            return Err(EstimatorError::AllCapped);
        }
        let biased =
            MCEstimate::from_values(&biased_kept, (n as usize - biased_kept.len()) as u64);
        let se = (fwd.stderr * fwd.stderr + biased.stderr * biased.stderr).sqrt();
        Ok(CheckRow {
            check: "density_identity".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: fwd.mean,
            stderr: se,
            target: biased.mean,
            tolerance: Z_THRESHOLD * se,
            n: fwd.n + biased.n,
            discarded: fwd.discarded + biased.discarded,
            verdict: z_verdict(fwd.mean - biased.mean, se, biased.mean),
        })
    };
    let first = run(0)?;
    if first.verdict != Verdict::Fail {
        return Ok(first);
    }
    let mut second = run(1)?;
    if second.verdict != Verdict::Fail {
        second.verdict = Verdict::Flaky;
    }
    Ok(second)
}

// ── Limit-theorem checks ─────────────────────────────────────────────────

/// Parameters for the limit-theorem bundle. The defaults are the reference
/// desk-scale run.
#[derive(Debug, Clone)]
pub struct LimitCheckConfig {
    pub root: TypeIndex,
    /// Horizon for population-level checks (Kesten-Stigum (a), growth rate,
    /// ancestral population average).
    pub t_pop: f64,
    /// Ancestor lag for the population average.
    pub u: f64,
    pub n_ks: u32,
    pub n_pop: u32,
    /// Kesten-Stigum (a): per-replicate TV threshold and required share.
    pub ks_tv: f64,
    pub ks_share: f64,
    /// Kesten-Stigum (b) surrogate horizon and replicates.
    pub t_survival: f64,
    pub n_survival: u32,
    /// Time-average check: horizon, TV radius, per-replicate fraction bound
    /// and required share of replicates.
    pub t_time_avg: f64,
    pub eps: f64,
    pub frac_bound: f64,
    pub ta_share: f64,
    pub n_time_avg: u32,
    /// Martingale checks at each of these horizons.
    pub t_grid: Vec<f64>,
    pub n_martingale: u32,
    /// Trunk-law comparison: horizon per replicate and replicate count.
    pub trunk_horizon: f64,
    pub trunk_reps: u32,
    pub cap: usize,
    pub seed: u64,
}

impl LimitCheckConfig {
    pub fn reference(root: TypeIndex, seed: u64) -> Self {
        Self {
            root,
            t_pop: 15.0,
            u: 8.0,
            n_ks: 500,
            n_pop: 200,
            ks_tv: 0.05,
            ks_share: 0.9,
            t_survival: 15.0,
            n_survival: 10_000,
            t_time_avg: 25.0,
            eps: 0.1,
            frac_bound: 0.1,
            ta_share: 0.9,
            n_time_avg: 10,
            t_grid: vec![1.0, 2.0, 4.0],
            n_martingale: 10_000,
            trunk_horizon: 1_000.0,
            trunk_reps: 256,
            cap: crate::forward::DEFAULT_CAP,
            seed,
        }
    }
}

/// Run the full limit-theorem bundle. Models with `λ ≤ 0` are refused with
/// a single report row, since every statement here is about the
/// supercritical regime.
pub fn limit_checks(ctx: &ModelContext, cfg: &LimitCheckConfig) -> Vec<CheckRow> {
    let lambda = ctx.spec.lambda;
    if lambda <= 0.0 {
        return vec![CheckRow {
            check: "supercritical".into(),
            model: ctx.name.clone(),
            params: String::new(),
            estimate: lambda,
            stderr: 0.0,
            target: 0.0,
            tolerance: 0.0,
            n: 0,
            discarded: 0,
            verdict: Verdict::Refused,
        }];
    }
    let mut rows = Vec::new();
    rows.push(kesten_stigum_a(ctx, cfg));
    rows.push(kesten_stigum_b(ctx, cfg));
    rows.push(growth_rate(ctx, cfg));
    let (pop_row, gap_row) = pop_average(ctx, cfg);
    rows.push(pop_row);
    rows.push(gap_row);
    rows.push(time_average(ctx, cfg));
    rows.extend(trunk_law(ctx, cfg));
    for &t in &cfg.t_grid {
        rows.push(martingale_check(ctx, cfg, t, false));
        rows.push(martingale_check(ctx, cfg, t, true));
    }
    rows.extend(variational_rows(ctx));
    rows
}

/// Survival-conditioned forward replicates: extinct or capped replicates
/// are discarded and counted.
fn surviving_trees<T: Send>(
    ctx: &ModelContext,
    cfg: &LimitCheckConfig,
    t: f64,
    n: u32,
    stream: StreamContext,
    eval: impl Fn(&FamilyTree) -> T + Sync,
) -> (Vec<T>, u64) {
    let results = run_replicates(stream, n, |_, rng| {
        let tree = simulate(&ctx.model, cfg.root, t, cfg.cap, rng);
        if tree.capped || tree.population_at(t).expect("horizon").is_empty() {
            None
        } else {
            Some(eval(&tree))
        }
    });
    let discarded = results.iter().filter(|r| r.is_none()).count() as u64;
    (results.into_iter().flatten().collect(), discarded)
}

fn kesten_stigum_a(ctx: &ModelContext, cfg: &LimitCheckConfig) -> CheckRow {
    let params = format!("t={};n={};tv={}", cfg.t_pop, cfg.n_ks, cfg.ks_tv);
    let task = task_of("kesten_stigum_a", &params);
    let num_types = ctx.num_types();
    with_rerun(|attempt| {
        let (tvs, discarded) = surviving_trees(
            ctx,
            cfg,
            cfg.t_pop,
            cfg.n_ks,
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            |tree| {
                let z = tree.type_counts(cfg.t_pop, num_types).expect("horizon");
                let total: u64 = z.iter().sum();
                let freq: Vec<f64> = z.iter().map(|&c| c as f64 / total as f64).collect();
                tv_distance(&freq, &ctx.spec.pi)
            },
        );
        let ok = tvs.iter().filter(|&&d| d < cfg.ks_tv).count();
        let share = ok as f64 / tvs.len().max(1) as f64;
        CheckRow {
            check: "kesten_stigum_a".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: share,
            stderr: 0.0,
            target: cfg.ks_share,
            tolerance: cfg.ks_tv,
            n: tvs.len() as u64,
            discarded,
            verdict: if share >= cfg.ks_share {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    })
}

fn kesten_stigum_b(ctx: &ModelContext, cfg: &LimitCheckConfig) -> CheckRow {
    // {W(t) > 0} is exactly {population alive at t}; its frequency must
    // match the generating-function survival probability.
    let params = format!("t={};n={}", cfg.t_survival, cfg.n_survival);
    let task = task_of("kesten_stigum_b", &params);
    let q = ctx.model.extinction_probabilities()[cfg.root.0];
    let target = 1.0 - q;
    with_rerun(|attempt| {
        let values = run_replicates(
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            cfg.n_survival,
            |_, rng| {
                let tree = simulate(&ctx.model, cfg.root, cfg.t_survival, cfg.cap, rng);
                if tree.capped {
                    return None;
                }
                let w = tree
                    .martingale_w(&ctx.spec, cfg.t_survival)
                    .expect("not capped");
                Some(f64::from(w > 0.0))
            },
        );
        let kept: Vec<f64> = values.iter().copied().flatten().collect();
        let discarded = (cfg.n_survival as usize - kept.len()) as u64;
        let est = MCEstimate::from_values(&kept, discarded);
        CheckRow {
            check: "kesten_stigum_b".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: est.mean,
            stderr: est.stderr,
            target,
            tolerance: 0.03,
            n: est.n,
            discarded,
            verdict: if (est.mean - target).abs() <= 0.03 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    })
}

fn growth_rate(ctx: &ModelContext, cfg: &LimitCheckConfig) -> CheckRow {
    let params = format!("t={};n={}", cfg.t_pop, cfg.n_pop);
    let task = task_of("growth_rate", &params);
    with_rerun(|attempt| {
        let (mut rates, discarded) = surviving_trees(
            ctx,
            cfg,
            cfg.t_pop,
            cfg.n_pop,
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            |tree| {
                let size = tree.population_at(cfg.t_pop).expect("horizon").len();
                (size as f64).ln() / cfg.t_pop
            },
        );
        rates.sort_by(f64::total_cmp);
        let median = if rates.is_empty() {
            f64::NAN
        } else if rates.len() % 2 == 1 {
            rates[rates.len() / 2]
        } else {
            0.5 * (rates[rates.len() / 2 - 1] + rates[rates.len() / 2])
        };
        CheckRow {
            check: "growth_rate".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: median,
            stderr: 0.0,
            target: ctx.spec.lambda,
            tolerance: 0.1,
            n: rates.len() as u64,
            discarded,
            verdict: if (median - ctx.spec.lambda).abs() <= 0.1 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    })
}

/// The finite-lag target of the ancestral population average:
/// `α^u_j = π_j E^j(‖Z(u)‖) e^{−λu}`.
pub fn alpha_u(ctx: &ModelContext, u: f64) -> Vec<f64> {
    let e = matrix_exponential(&ctx.mean.a, u);
    let decay = (-ctx.spec.lambda * u).exp();
    (0..ctx.num_types())
        .map(|j| {
            let row_sum: f64 = e.row(j).iter().sum();
            ctx.spec.pi[j] * row_sum * decay
        })
        .collect()
}

fn pop_average(ctx: &ModelContext, cfg: &LimitCheckConfig) -> (CheckRow, CheckRow) {
    let target = alpha_u(ctx, cfg.u);
    let num_types = ctx.num_types();
    let params = format!("t={};u={};n={}", cfg.t_pop, cfg.u, cfg.n_pop);
    let task = task_of("pop_average", &params);
    let row = with_rerun(|attempt| {
        let (averages, discarded) = surviving_trees(
            ctx,
            cfg,
            cfg.t_pop,
            cfg.n_pop,
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            |tree| {
                tree.ancestral_average(cfg.t_pop, cfg.u, num_types)
                    .expect("surviving tree")
            },
        );
        let mut mean = vec![0.0; num_types];
        for j in 0..num_types {
            let comp: Vec<f64> = averages.iter().map(|a| a[j]).collect();
            mean[j] = pairwise_sum(&comp) / comp.len().max(1) as f64;
        }
        let dev = tv_distance(&mean, &target);
        CheckRow {
            check: "pop_average".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: dev,
            stderr: 0.0,
            target: 0.0,
            tolerance: 0.05,
            n: averages.len() as u64,
            discarded,
            verdict: if dev <= 0.05 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    });
    // Deterministic companion: the finite-u target is already close to α.
    let gap = tv_distance(&target, &ctx.spec.alpha);
    let gap_row = CheckRow {
        check: "alpha_u_gap".into(),
        model: ctx.name.clone(),
        params: format!("u={}", cfg.u),
        estimate: gap,
        stderr: 0.0,
        target: 0.0,
        tolerance: 0.01,
        n: 0,
        discarded: 0,
        verdict: if gap <= 0.01 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    };
    (row, gap_row)
}

fn time_average(ctx: &ModelContext, cfg: &LimitCheckConfig) -> CheckRow {
    let params = format!(
        "t={};eps={};bound={};n={}",
        cfg.t_time_avg, cfg.eps, cfg.frac_bound, cfg.n_time_avg
    );
    let task = task_of("time_average", &params);
    let alpha = ctx.spec.alpha.clone();
    with_rerun(|attempt| {
        let surveys = run_replicates(
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            cfg.n_time_avg,
            |_, rng| {
                streaming_lineage_survey(
                    &ctx.model,
                    cfg.root,
                    cfg.t_time_avg,
                    u64::MAX,
                    Some((&alpha, cfg.eps)),
                    rng,
                )
                .far_fraction()
            },
        );
        let fractions: Vec<f64> = surveys.iter().copied().flatten().collect();
        let discarded = (cfg.n_time_avg as usize - fractions.len()) as u64;
        let ok = fractions.iter().filter(|&&f| f < cfg.frac_bound).count();
        let share = ok as f64 / fractions.len().max(1) as f64;
        let mean_fraction = pairwise_sum(&fractions) / fractions.len().max(1) as f64;
        CheckRow {
            check: "time_average".into(),
            model: ctx.name.clone(),
            params: format!("{params};mean_fraction={mean_fraction:.4}"),
            estimate: share,
            stderr: 0.0,
            target: cfg.ta_share,
            tolerance: cfg.frac_bound,
            n: fractions.len() as u64,
            discarded,
            verdict: if share >= cfg.ta_share {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    })
}

fn trunk_law(ctx: &ModelContext, cfg: &LimitCheckConfig) -> Vec<CheckRow> {
    let params = format!("horizon={};reps={}", cfg.trunk_horizon, cfg.trunk_reps);
    let num_types = ctx.num_types();
    let tc = TrunkChain::h_weighted(&ctx.chain);
    let pool = |task: u32, attempt: u32, from_chain: bool| -> SegmentStats {
        let paths = run_replicates(
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            cfg.trunk_reps,
            |_, rng| {
                if from_chain {
                    simulate_mutation_chain(
                        &ctx.chain.generator,
                        cfg.root,
                        cfg.trunk_horizon,
                        rng,
                    )
                } else {
                    simulate_trunk(&tc, cfg.root, cfg.trunk_horizon, rng)
                }
            },
        );
        let mut stats = SegmentStats::new(num_types);
        for p in &paths {
            stats.add_path(p);
        }
        stats
    };
    let task_t = task_of("trunk_law_trunk", &params);
    let task_c = task_of("trunk_law_chain", &params);

    let sojourn_row = with_rerun(|attempt| {
        let trunk = pool(task_t, attempt, false);
        let mut worst = 0.0f64;
        for i in 0..num_types {
            let expected = 1.0 / (ctx.model.split_rates()[i] + ctx.spec.lambda);
            if let Some(mean_sojourn) = trunk.mean_sojourn(TypeIndex(i)) {
                worst = worst.max((mean_sojourn - expected).abs() / expected);
            }
        }
        CheckRow {
            check: "trunk_sojourn".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: worst,
            stderr: 0.0,
            target: 0.0,
            tolerance: 0.01,
            n: cfg.trunk_reps as u64,
            discarded: 0,
            verdict: if worst <= 0.01 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    });

    let transition_row = with_rerun(|attempt| {
        let trunk = pool(task_t, attempt, false);
        let chain = pool(task_c, attempt, true);
        let mut worst = 0.0f64;
        for i in 0..num_types {
            for j in 0..num_types {
                if i == j {
                    continue;
                }
                let a = trunk.change_frequency(TypeIndex(i), TypeIndex(j));
                let b = chain.change_frequency(TypeIndex(i), TypeIndex(j));
                if let (Some(a), Some(b)) = (a, b) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        CheckRow {
            check: "trunk_transitions".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: worst,
            stderr: 0.0,
            target: 0.0,
            tolerance: 0.01,
            n: cfg.trunk_reps as u64 * 2,
            discarded: 0,
            verdict: if worst <= 0.01 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    });

    let occupation_row = with_rerun(|attempt| {
        let trunk = pool(task_t, attempt, false);
        let chain = pool(task_c, attempt, true);
        let tv_t = trunk
            .occupation()
            .map(|o| o.tv_distance(&ctx.spec.alpha))
            .unwrap_or(f64::NAN);
        let tv_c = chain
            .occupation()
            .map(|o| o.tv_distance(&ctx.spec.alpha))
            .unwrap_or(f64::NAN);
        let worst = tv_t.max(tv_c);
        CheckRow {
            check: "trunk_occupation".into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: worst,
            stderr: 0.0,
            target: 0.0,
            tolerance: 0.01,
            n: cfg.trunk_reps as u64 * 2,
            discarded: 0,
            verdict: if worst <= 0.01 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    });

    vec![sojourn_row, transition_row, occupation_row]
}

fn martingale_check(ctx: &ModelContext, cfg: &LimitCheckConfig, t: f64, tilde: bool) -> CheckRow {
    let name = if tilde {
        "martingale_w_tilde"
    } else {
        "martingale_w"
    };
    let params = format!("t={t};n={}", cfg.n_martingale);
    let task = task_of(name, &params);
    let target = if tilde {
        1.0
    } else {
        ctx.spec.h[cfg.root.0]
    };
    with_rerun(|attempt| {
        let values = run_replicates(
            StreamContext::new(cfg.seed, task).with_attempt(attempt),
            cfg.n_martingale,
            |_, rng| {
                let tree = simulate(&ctx.model, cfg.root, t, cfg.cap, rng);
                if tree.capped {
                    return None;
                }
                Some(if tilde {
                    tree.martingale_w_tilde(&ctx.mean, t).expect("not capped")
                } else {
                    tree.martingale_w(&ctx.spec, t).expect("not capped")
                })
            },
        );
        let kept: Vec<f64> = values.iter().copied().flatten().collect();
        let discarded = (cfg.n_martingale as usize - kept.len()) as u64;
        let est = MCEstimate::from_values(&kept, discarded);
        CheckRow {
            check: name.into(),
            model: ctx.name.clone(),
            params: params.clone(),
            estimate: est.mean,
            stderr: est.stderr,
            target,
            tolerance: Z_THRESHOLD * est.stderr,
            n: est.n,
            discarded,
            verdict: z_verdict(est.mean - target, est.stderr, target),
        }
    })
}

fn variational_rows(ctx: &ModelContext) -> Vec<CheckRow> {
    let (value_row, argmax_row) = match variational_lambda(&ctx.model, &ctx.mean, &ctx.spec) {
        Ok((value, argmax)) => {
            let value_dev = (value - ctx.spec.lambda).abs();
            let tv = tv_distance(&argmax, &ctx.spec.alpha);
            (
                CheckRow {
                    check: "variational_value".into(),
                    model: ctx.name.clone(),
                    params: String::new(),
                    estimate: value,
                    stderr: 0.0,
                    target: ctx.spec.lambda,
                    tolerance: 1e-6,
                    n: 0,
                    discarded: 0,
                    verdict: if value_dev <= 1e-6 {
                        Verdict::Pass
                    } else {
                        Verdict::Fail
                    },
                },
                CheckRow {
                    check: "variational_argmax".into(),
                    model: ctx.name.clone(),
                    params: String::new(),
                    estimate: tv,
                    stderr: 0.0,
                    target: 0.0,
                    tolerance: 1e-4,
                    n: 0,
                    discarded: 0,
                    verdict: if tv <= 1e-4 { Verdict::Pass } else { Verdict::Fail },
                },
            )
        }
        Err(e) => {
            let row = CheckRow {
                check: "variational_value".into(),
                model: ctx.name.clone(),
                params: format!("error={e}"),
                estimate: f64::NAN,
                stderr: 0.0,
                target: ctx.spec.lambda,
                tolerance: 1e-6,
                n: 0,
                discarded: 0,
                verdict: Verdict::Fail,
            };
            let mut argmax = row.clone();
            argmax.check = "variational_argmax".into();
            (row, argmax)
        }
    };
    vec![value_row, argmax_row]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, OffspringLaw};

    fn m1_ctx() -> ModelContext {
        ModelContext::new(
            "m1",
            BranchingModel::new(
                vec![1.0],
                vec![OffspringLaw::new(vec![Atom {
                    counts: vec![2],
                    prob: 1.0,
                }])],
            ),
        )
        .unwrap()
    }

    fn m2_ctx() -> ModelContext {
        ModelContext::new(
            "m2",
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
            ),
        )
        .unwrap()
    }

    fn m3_ctx() -> ModelContext {
        ModelContext::new(
            "m3",
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
            ),
        )
        .unwrap()
    }

    #[test]
    fn functional_parsing_round_trips() {
        for text in [
            "constant_one",
            "terminal_type:1",
            "flip_count_le:2",
            "occupation_ge:0:0.5",
        ] {
            let f = PathFunctional::parse(text).unwrap();
            assert_eq!(f.to_string(), text);
        }
        assert!(PathFunctional::parse("bogus").is_err());
        assert!(PathFunctional::parse("terminal_type").is_err());
        assert!(PathFunctional::parse("occupation_ge:0").is_err());
    }

    #[test]
    fn functional_evaluation() {
        let path = TypePath::new(vec![
            (TypeIndex(0), 0.4),
            (TypeIndex(0), 0.2),
            (TypeIndex(1), 0.4),
        ]);
        assert_eq!(PathFunctional::ConstantOne.evaluate(&path, 2), 1.0);
        assert_eq!(
            PathFunctional::TerminalType(TypeIndex(1)).evaluate(&path, 2),
            1.0
        );
        assert_eq!(
            PathFunctional::TerminalType(TypeIndex(0)).evaluate(&path, 2),
            0.0
        );
        // Two segments of type 0 merge: exactly one flip.
        assert_eq!(PathFunctional::FlipCountLe(0).evaluate(&path, 2), 0.0);
        assert_eq!(PathFunctional::FlipCountLe(1).evaluate(&path, 2), 1.0);
        assert_eq!(
            PathFunctional::OccupationGe(TypeIndex(0), 0.5).evaluate(&path, 2),
            1.0
        );
        assert_eq!(
            PathFunctional::OccupationGe(TypeIndex(1), 0.5).evaluate(&path, 2),
            0.0
        );
    }

    #[test]
    fn mc_estimate_mean_and_stderr() {
        let est = MCEstimate::from_values(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.n, 4);
        assert_eq!(est.discarded, 1);
        // Sample sd of 1..4 is √(5/3); stderr divides by √4.
        let expected = (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((est.stderr - expected).abs() < 1e-12);
    }

    #[test]
    fn trunk_side_constant_one_has_zero_variance() {
        let ctx = m2_ctx();
        let est = estimate_trunk_side(
            &ctx,
            &PathFunctional::ConstantOne,
            TypeIndex(0),
            2.0,
            500,
            StreamContext::new(1, 1),
        );
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn forward_side_constant_one_estimates_one() {
        // h_i⁻¹ E(W(t)) = 1 exactly; 3σ check at modest n.
        let ctx = m2_ctx();
        let est = estimate_forward_side(
            &ctx,
            &PathFunctional::ConstantOne,
            TypeIndex(0),
            2.0,
            4000,
            100_000,
            StreamContext::new(2, 2),
        )
        .unwrap();
        assert!(
            (est.mean - 1.0).abs() < 3.0 * est.stderr + 1e-9,
            "mean {} se {}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn size_bias_verification_passes_on_small_runs() {
        let ctx = m2_ctx();
        for f in [
            PathFunctional::ConstantOne,
            PathFunctional::TerminalType(TypeIndex(1)),
            PathFunctional::FlipCountLe(1),
            PathFunctional::OccupationGe(TypeIndex(0), 0.5),
        ] {
            let row = verify_size_bias(&ctx, &f, TypeIndex(0), 2.0, 20_000, 100_000, 7).unwrap();
            assert!(
                !row.verdict.is_failure(),
                "{f}: {} vs {} (se {})",
                row.estimate,
                row.target,
                row.stderr
            );
        }
    }

    #[test]
    fn size_bias_all_capped_is_an_error() {
        let ctx = m1_ctx();
        let result = verify_size_bias(
            &ctx,
            &PathFunctional::ConstantOne,
            TypeIndex(0),
            14.0,
            8,
            32,
            7,
        );
        assert!(matches!(result, Err(EstimatorError::AllCapped)));
    }

    #[test]
    fn feynman_kac_single_type_is_exact() {
        // Single type: weight e^{t·r} = e^t on every path, so the estimate
        // hits e^{tA} = e^t with zero variance.
        let ctx = m1_ctx();
        let row = feynman_kac_check(&ctx, TypeIndex(0), TypeIndex(0), 1.0, 200, 3);
        assert_eq!(row.verdict, Verdict::Pass);
        assert!((row.estimate - std::f64::consts::E).abs() < 1e-9);
        assert!(row.stderr < 1e-12);
    }

    #[test]
    fn feynman_kac_two_type_targets() {
        let ctx = m2_ctx();
        for j in 0..2 {
            let row = feynman_kac_check(&ctx, TypeIndex(0), TypeIndex(j), 1.0, 40_000, 11);
            assert!(
                !row.verdict.is_failure(),
                "j={j}: {} vs {} (se {})",
                row.estimate,
                row.target,
                row.stderr
            );
        }
    }

    #[test]
    fn ldp_estimate_at_alpha_recovers_lambda() {
        // I_G(α) = 0: the rate estimate must sit near λ.
        let ctx = m2_ctx();
        let report = ldp_rate_estimate(
            &ctx,
            TypeIndex(0),
            &[0.5, 0.5],
            0.1,
            20.0,
            20_000,
            0.1,
            5,
        )
        .unwrap();
        assert!(report.hits > 0);
        assert!(
            (report.row.estimate - ctx.spec.lambda).abs() < 0.1,
            "estimate {} vs λ {}",
            report.row.estimate,
            ctx.spec.lambda
        );
    }

    #[test]
    fn ldp_zero_hits_returns_neg_infinity() {
        // A tiny ball around a corner the chain essentially never fills.
        let ctx = m2_ctx();
        let report = ldp_rate_estimate(
            &ctx,
            TypeIndex(0),
            &[1.0, 0.0],
            0.001,
            20.0,
            200,
            0.1,
            6,
        )
        .unwrap();
        assert_eq!(report.hits, 0);
        assert_eq!(report.row.estimate, f64::NEG_INFINITY);
        assert!(report.row.verdict.is_failure());
    }

    #[test]
    fn single_type_ldp_is_exact() {
        let ctx = m1_ctx();
        let report =
            ldp_rate_estimate(&ctx, TypeIndex(0), &[1.0], 0.05, 10.0, 500, 0.1, 8).unwrap();
        assert!((report.row.estimate - 1.0).abs() < 1e-9);
        assert_eq!(report.row.verdict, Verdict::Pass);
    }

    #[test]
    fn density_identity_small_run() {
        let ctx = m3_ctx();
        let row = density_identity_check(&ctx, TypeIndex(0), 2.0, 20_000, 100_000, 13).unwrap();
        assert!(
            !row.verdict.is_failure(),
            "{} vs {} (se {})",
            row.estimate,
            row.target,
            row.stderr
        );
    }

    #[test]
    fn limit_checks_refuse_subcritical_models() {
        // Death-heavy single-type model: λ = a(m−1) < 0.
        let model = BranchingModel::new(
            vec![1.0],
            vec![OffspringLaw::new(vec![
                Atom {
                    counts: vec![0],
                    prob: 0.75,
                },
                Atom {
                    counts: vec![2],
                    prob: 0.25,
                },
            ])],
        );
        let ctx = ModelContext::new("sub", model).unwrap();
        assert!(ctx.spec.lambda < 0.0);
        let rows = limit_checks(&ctx, &LimitCheckConfig::reference(TypeIndex(0), 1));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].verdict, Verdict::Refused);
    }

    #[test]
    fn limit_checks_single_type_small_scale() {
        // Everything is exact for the doubling model; run the bundle at a
        // reduced scale to keep the test fast.
        let ctx = m1_ctx();
        let mut cfg = LimitCheckConfig::reference(TypeIndex(0), 4);
        cfg.t_pop = 8.0;
        cfg.u = 4.0;
        cfg.n_ks = 60;
        cfg.n_pop = 60;
        cfg.t_survival = 8.0;
        cfg.n_survival = 2000;
        cfg.t_time_avg = 8.0;
        cfg.n_time_avg = 6;
        cfg.t_grid = vec![1.0, 2.0];
        cfg.n_martingale = 2000;
        cfg.trunk_horizon = 200.0;
        cfg.trunk_reps = 64;
        let rows = limit_checks(&ctx, &cfg);
        for row in &rows {
            assert!(
                !row.verdict.is_failure(),
                "{}: estimate {} target {}",
                row.check,
                row.estimate,
                row.target
            );
        }
    }

    #[test]
    fn task_ids_differ_across_checks() {
        let a = task_of("size_bias", "F=constant_one;t=1");
        let b = task_of("size_bias", "F=constant_one;t=2");
        let c = task_of("feynman_kac", "F=constant_one;t=1");
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
