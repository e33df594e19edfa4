//! Perron-Frobenius eigendata and everything derived from it.
//!
//! For a validating model with first-moment generator `A`, this module
//! computes the principal eigenvalue `λ` with positive left/right
//! eigenvectors `π, h` (normalized so `⟨π,1⟩ = ⟨π,h⟩ = 1`), the ancestral
//! distribution `α_i = π_i h_i`, the retrospective mutation chain with
//! generator `G`, its time reversal and the mutation-only generator `G̃`,
//! the size-biased offspring laws, the matrix exponential `e^{tA}`, the
//! Donsker-Varadhan level-2 rate function of a chain generator, and the
//! variational principle `λ = max_ν [⟨ν,r⟩ − I_G̃(ν)]`.
//!
//! Matrices here are tiny, so the eigensolver is a plain power iteration on
//! a nonnegative shift of `A`, run separately on `A` and its transpose.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, max_abs_diff, Matrix};
use crate::model::{Atom, BranchingModel, MeanData, OffspringLaw, TypeIndex};

/// Componentwise relative tolerance for the eigen-residuals of `π` and `h`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-10;
/// Successive power iterates must agree to this in max-norm.
const POWER_ITER_TOL: f64 = 1e-13;
const POWER_ITER_CAP: u64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error(
        "power iteration did not converge within {iters} iterations; \
         final iterate step {step:e}"
    )]
    NoConvergence { iters: u64, step: f64 },
    #[error("eigen residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("not a probability vector: {0}")]
    NotProbability(String),
    #[error("optimizer did not converge; best value found {best}")]
    OptimizerStalled { best: f64 },
}

/// Principal eigendata of the first-moment generator.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Principal eigenvalue of `A` (growth rate, units 1/time).
    pub lambda: f64,
    /// Left eigenvector, normalized to a probability vector.
    pub pi: Vec<f64>,
    /// Right eigenvector, normalized so `⟨π, h⟩ = 1`.
    pub h: Vec<f64>,
    /// Ancestral distribution `α_i = π_i h_i`.
    pub alpha: Vec<f64>,
}

impl SpectralData {
    /// Compute `(λ, π, h, α)` for the generator in `mean`.
    pub fn compute(mean: &MeanData) -> Result<Self, SpectralError> {
        let a = &mean.a;
        let n = a.dim();
        // Shift so the matrix is nonnegative with strictly positive diagonal:
        // off-diagonals of A are already ≥ 0, and s exceeds every −a_ii, so
        // the shifted matrix is primitive and power iteration converges.
        let neg_diag = (0..n).fold(0.0f64, |m, i| m.max(-a.get(i, i)));
        let s = 1.0 + neg_diag;
        let b = a.shift(s);

        let h_raw = power_iteration(&b)?;
        let pi_raw = power_iteration(&b.transpose())?;

        // Rayleigh quotient with both eigenvectors is more accurate than the
        // per-side iterate scaling.
        let lambda = dot(&pi_raw, &a.mul_vec(&h_raw)) / dot(&pi_raw, &h_raw);

        let pi_sum: f64 = pi_raw.iter().sum();
        let pi: Vec<f64> = pi_raw.iter().map(|x| x / pi_sum).collect();
        let ph = dot(&pi, &h_raw);
        let h: Vec<f64> = h_raw.iter().map(|x| x / ph).collect();
        let alpha: Vec<f64> = pi.iter().zip(&h).map(|(p, q)| p * q).collect();

        let data = Self {
            lambda,
            pi,
            h,
            alpha,
        };
        let residual = data.max_residual(a);
        if residual > EIGEN_RESIDUAL_TOL {
            return Err(SpectralError::ResidualTooLarge {
                residual,
                tol: EIGEN_RESIDUAL_TOL,
            });
        }
        Ok(data)
    }

    /// Largest componentwise relative eigen-residual over both eigenvectors.
    pub fn max_residual(&self, a: &Matrix) -> f64 {
        let ah = a.mul_vec(&self.h);
        let pia = a.vec_mul(&self.pi);
        let mut worst = 0.0f64;
        for i in 0..a.dim() {
            let scale = 1.0 + self.lambda.abs();
            worst = worst.max((ah[i] - self.lambda * self.h[i]).abs() / (scale * self.h[i]));
            worst = worst.max((pia[i] - self.lambda * self.pi[i]).abs() / (scale * self.pi[i]));
        }
        worst
    }

    /// The ancestral distribution `α` (also stored in `self.alpha`).
    pub fn ancestral_distribution(&self) -> &[f64] {
        &self.alpha
    }
}

/// Power iteration for the principal eigenvector of a nonnegative primitive
/// matrix. Returns the eigenvector scaled to unit max-norm.
fn power_iteration(b: &Matrix) -> Result<Vec<f64>, SpectralError> {
    let n = b.dim();
    let mut v = vec![1.0 / n as f64; n];
    let mut step = f64::INFINITY;
    for _ in 0..POWER_ITER_CAP {
        let mut w = b.mul_vec(&v);
        let norm = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            return Err(SpectralError::NoConvergence {
                iters: POWER_ITER_CAP,
                step: f64::INFINITY,
            });
        }
        for x in &mut w {
            *x /= norm;
        }
        step = max_abs_diff(&w, &v);
        v = w;
        if step < POWER_ITER_TOL {
            return Ok(v);
        }
    }
    Err(SpectralError::NoConvergence {
        iters: POWER_ITER_CAP,
        step,
    })
}

// ── Retrospective mutation chain and derived generators ─────────────────

/// The retrospective mutation chain: exponential holding time with parameter
/// `a_i + λ` in state `i`, then a jump to `j` with probability
/// `p_ij = m_ij h_j / ((1 + λ/a_i) h_i)`. Self-jumps (`p_ii > 0`) are kept
/// in the jump matrix; merging them into holding times is left to the
/// simulation layer.
#[derive(Debug, Clone)]
pub struct RetrospectiveChain {
    pub generator: Matrix,
    pub holding_rates: Vec<f64>,
    pub jump_probs: Matrix,
}

impl RetrospectiveChain {
    pub fn new(model: &BranchingModel, mean: &MeanData, spec: &SpectralData) -> Self {
        let n = model.num_types();
        let lambda = spec.lambda;
        let mut jump = Matrix::zeros(n);
        let mut gen = Matrix::zeros(n);
        let holding: Vec<f64> = model.split_rates().iter().map(|a| a + lambda).collect();
        for i in 0..n {
            let a_i = model.split_rates()[i];
            let c_i = 1.0 + lambda / a_i;
            for j in 0..n {
                let p = mean.m.get(i, j) * spec.h[j] / (c_i * spec.h[i]);
                jump.set(i, j, p);
                let delta = if i == j { 1.0 } else { 0.0 };
                gen.set(i, j, holding[i] * (p - delta));
            }
        }
        Self {
            generator: gen,
            holding_rates: holding,
            jump_probs: jump,
        }
    }

    /// The equivalent conjugation form `g_ij = h_i⁻¹ (a_ij − λ δ_ij) h_j`,
    /// computed independently of the jump-chain form for cross-checking.
    pub fn conjugation_form(mean: &MeanData, spec: &SpectralData) -> Matrix {
        let n = mean.a.dim();
        let mut g = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                g.set(
                    i,
                    j,
                    (mean.a.get(i, j) - spec.lambda * delta) * spec.h[j] / spec.h[i],
                );
            }
        }
        g
    }
}

/// Time reversal `Ḡ` of the retrospective chain and the mutation-only
/// generator `G̃` with `g̃_ij = a_i m_ij − a_i m_i δ_ij`, which satisfies the
/// decomposition `a_ij = g̃_ij + r_i δ_ij`.
#[derive(Debug, Clone)]
pub struct DerivedGenerators {
    pub g_rev: Matrix,
    pub g_tilde: Matrix,
}

impl DerivedGenerators {
    pub fn new(model: &BranchingModel, mean: &MeanData, spec: &SpectralData) -> Self {
        let n = model.num_types();
        // ḡ_ij = π_j (a_ji − λ δ_ij) π_i⁻¹
        let mut g_rev = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                g_rev.set(
                    i,
                    j,
                    spec.pi[j] * (mean.a.get(j, i) - spec.lambda * delta) / spec.pi[i],
                );
            }
        }
        let mut g_tilde = Matrix::zeros(n);
        for i in 0..n {
            let a_i = model.split_rates()[i];
            let m_i = mean.row_means[i];
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                g_tilde.set(i, j, a_i * mean.m.get(i, j) - a_i * m_i * delta);
            }
        }
        Self { g_rev, g_tilde }
    }

    /// The equivalent reversal form `ḡ_ij = α_j g_ji α_i⁻¹`, computed
    /// independently for cross-checking.
    pub fn reversal_form(chain: &RetrospectiveChain, spec: &SpectralData) -> Matrix {
        let n = chain.generator.dim();
        let mut g = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                g.set(
                    i,
                    j,
                    spec.alpha[j] * chain.generator.get(j, i) / spec.alpha[i],
                );
            }
        }
        g
    }
}

// ── Size-biased offspring laws ───────────────────────────────────────────

/// Size-biased offspring laws: `p̂_i(κ) ∝ ⟨κ,h⟩ p_i(κ)` (trunk law of the
/// h-weighted biased tree, normalizer `c_i h_i` with `c_i = 1 + λ/a_i`) and
/// `p̃_i(κ) ∝ ‖κ‖ p_i(κ)` (uniform selection variant, normalizer `m_i`).
/// Zero-offspring atoms carry zero weight and are dropped.
#[derive(Debug, Clone)]
pub struct BiasedLaws {
    pub c: Vec<f64>,
    pub p_hat: Vec<OffspringLaw>,
    pub p_tilde: Vec<OffspringLaw>,
}

impl BiasedLaws {
    pub fn new(model: &BranchingModel, mean: &MeanData, spec: &SpectralData) -> Self {
        let n = model.num_types();
        let c: Vec<f64> = model
            .split_rates()
            .iter()
            .map(|a| 1.0 + spec.lambda / a)
            .collect();
        let mut p_hat = Vec::with_capacity(n);
        let mut p_tilde = Vec::with_capacity(n);
        for i in 0..n {
            p_hat.push(reweighted_law(model.offspring(TypeIndex(i)), |atom| {
                atom.counts
                    .iter()
                    .zip(&spec.h)
                    .map(|(&k, h)| k as f64 * h)
                    .sum()
            }));
            let _ = mean; // normalization uses the exact atom sums
            p_tilde.push(reweighted_law(model.offspring(TypeIndex(i)), |atom| {
                atom.total() as f64
            }));
        }
        Self { c, p_hat, p_tilde }
    }
}

/// Reweight a law by a nonnegative atom weight and renormalize exactly over
/// the surviving atoms.
fn reweighted_law(law: &OffspringLaw, weight: impl Fn(&Atom) -> f64) -> OffspringLaw {
    let weights: Vec<f64> = law.atoms.iter().map(|a| weight(a) * a.prob).collect();
    let total: f64 = weights.iter().sum();
    OffspringLaw::new(
        law.atoms
            .iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(a, w)| Atom {
                counts: a.counts.clone(),
                prob: w / total,
            })
            .collect(),
    )
}

// ── Matrix exponential ───────────────────────────────────────────────────

/// `e^{tA}` by scaling-and-squaring with a truncated Taylor series: the
/// scaled matrix has max-norm below 0.5 and the series stops once the next
/// term's norm drops below 1e-18.
pub fn matrix_exponential(a: &Matrix, t: f64) -> Matrix {
    let n = a.dim();
    if t == 0.0 {
        return Matrix::identity(n);
    }
    let at = a.scale(t);
    let norm = at.max_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = at.scale(0.5f64.powi(squarings as i32));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    let mut k = 1.0f64;
    loop {
        term = term.mul(&b).scale(1.0 / k);
        sum = sum.add(&term);
        if term.max_norm() < 1e-18 {
            break;
        }
        k += 1.0;
    }
    for _ in 0..squarings {
        sum = sum.mul(&sum);
    }
    sum
}

// ── Donsker-Varadhan level-2 rate function ───────────────────────────────

/// Reject vectors off the probability simplex beyond this.
pub const SIMPLEX_TOL: f64 = 1e-10;

fn check_simplex(nu: &[f64]) -> Result<Vec<f64>, SpectralError> {
    let sum: f64 = nu.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(SpectralError::NotProbability(format!(
            "components sum to {sum}"
        )));
    }
    if let Some(bad) = nu.iter().find(|&&x| x < -SIMPLEX_TOL) {
        return Err(SpectralError::NotProbability(format!(
            "negative component {bad}"
        )));
    }
    let clipped: Vec<f64> = nu.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    Ok(clipped.into_iter().map(|x| x / s).collect())
}

/// `I_G(ν) = sup_{v > 0} [ −Σ_i ν_i (Gv)_i / v_i ]`, the level-2 rate
/// function of the chain with generator `G`. Vanishes exactly at the chain's
/// stationary distribution.
///
/// The supremum is taken with `v = e^w` (positivity by construction, `w_0`
/// pinned to 0 as the scale gauge) by gradient ascent with backtracking line
/// search from 20 deterministic pseudo-random restarts.
pub fn rate_function(g: &Matrix, nu: &[f64]) -> Result<f64, SpectralError> {
    let nu = check_simplex(nu)?;
    let (value, _) = rate_function_sup(g, &nu, None, 20);
    Ok(value.max(0.0))
}

/// Inner maximization, returning the best `(value, w)`. `warm` seeds one
/// start from a previous solution.
fn rate_function_sup(
    g: &Matrix,
    nu: &[f64],
    warm: Option<&[f64]>,
    restarts: u32,
) -> (f64, Vec<f64>) {
    let n = g.dim();
    if n == 1 {
        return (0.0, vec![0.0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a7e_f0);
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut try_start = |w0: Vec<f64>| {
        let (val, w) = ascend_dv(g, nu, w0);
        if val > best.0 {
            best = (val, w);
        }
    };
    try_start(vec![0.0; n]);
    if let Some(w) = warm {
        try_start(w.to_vec());
    }
    for _ in 0..restarts {
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        w[0] = 0.0;
        try_start(w);
    }
    best
}

/// Objective `φ(w) = −Σ_i ν_i e^{−w_i} (G e^w)_i` and its gradient.
fn dv_objective(g: &Matrix, nu: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let n = g.dim();
    let ew: Vec<f64> = w.iter().map(|x| x.exp()).collect();
    let gew = g.mul_vec(&ew);
    let mut val = 0.0;
    for i in 0..n {
        val -= nu[i] * gew[i] / ew[i];
    }
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += nu[i] / ew[i] * g.get(i, k);
        }
        grad[k] = nu[k] / ew[k] * gew[k] - ew[k] * s;
    }
    grad[0] = 0.0; // gauge: w_0 ≡ 0
    (val, grad)
}

fn ascend_dv(g: &Matrix, nu: &[f64], mut w: Vec<f64>) -> (f64, Vec<f64>) {
    let (mut val, mut grad) = dv_objective(g, nu, &w);
    for _ in 0..500 {
        let gnorm2: f64 = grad.iter().map(|x| x * x).sum();
        if gnorm2.sqrt() < 1e-12 {
            break;
        }
        let mut step = 1.0;
        let mut advanced = false;
        while step > 1e-18 {
            let w_new: Vec<f64> = w.iter().zip(&grad).map(|(x, d)| x + step * d).collect();
            let (val_new, grad_new) = dv_objective(g, nu, &w_new);
            if val_new >= val + 1e-4 * step * gnorm2 {
                w = w_new;
                val = val_new;
                grad = grad_new;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    (val, w)
}

// ── Variational principle ────────────────────────────────────────────────

/// Numerically solve `max_{ν ∈ P(S)} [⟨ν, r⟩ − I_G̃(ν)]`, whose value is `λ`
/// and whose argmax is the ancestral distribution `α`.
///
/// Projected gradient ascent over the simplex from the barycenter and
/// several interior restarts, with a barycentric grid (step 0.01, for up to
/// three types) as a safety net; the envelope theorem supplies the gradient
/// `r_i + (G̃ v*)_i / v*_i` at the inner maximizer `v*`.
pub fn variational_lambda(
    model: &BranchingModel,
    mean: &MeanData,
    spec: &SpectralData,
) -> Result<(f64, Vec<f64>), SpectralError> {
    let g_tilde = DerivedGenerators::new(model, mean, spec).g_tilde;
    let r = &mean.r;
    let n = g_tilde.dim();
    if n == 1 {
        return Ok((r[0], vec![1.0]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x0b9ec7);
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / n as f64; n]];
    for _ in 0..9 {
        let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = raw.iter().sum();
        starts.push(raw.into_iter().map(|x| x / s).collect());
    }
    if n <= 3 {
        if let Some(best_grid) = grid_argmax(&g_tilde, r, 0.01) {
            starts.push(best_grid);
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let (val, nu) = ascend_variational(&g_tilde, r, start);
        if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
            best = Some((val, nu));
        }
    }
    best.ok_or(SpectralError::OptimizerStalled { best: f64::NAN })
}

fn objective_variational(g: &Matrix, r: &[f64], nu: &[f64], warm: Option<&[f64]>) -> (f64, Vec<f64>) {
    let (rate, w) = rate_function_sup(g, nu, warm, 2);
    (dot(nu, r) - rate, w)
}

fn ascend_variational(g: &Matrix, r: &[f64], mut nu: Vec<f64>) -> (f64, Vec<f64>) {
    let n = g.dim();
    let floor = 1e-12;
    let clamp = |v: Vec<f64>| -> Vec<f64> {
        let clipped: Vec<f64> = v.into_iter().map(|x| x.max(floor)).collect();
        let s: f64 = clipped.iter().sum();
        clipped.into_iter().map(|x| x / s).collect()
    };
    nu = clamp(nu);
    let (mut val, mut w) = objective_variational(g, r, &nu, None);
    for _ in 0..2000 {
        // Envelope gradient at the inner maximizer v* = e^w.
        let ew: Vec<f64> = w.iter().map(|x| x.exp()).collect();
        let gew = g.mul_vec(&ew);
        let grad: Vec<f64> = (0..n).map(|i| r[i] + gew[i] / ew[i]).collect();

        let mut step = 0.5;
        let mut advanced = false;
        while step > 1e-16 {
            let trial: Vec<f64> = nu.iter().zip(&grad).map(|(x, d)| x + step * d).collect();
            let trial = clamp(project_simplex(&trial));
            let (val_new, w_new) = objective_variational(g, r, &trial, Some(&w));
            if val_new > val + 1e-12 {
                nu = trial;
                val = val_new;
                w = w_new;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    (val, nu)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let candidate = (acc - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            tau = candidate;
        }
    }
    let out: Vec<f64> = y.iter().map(|&v| (v - tau).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    out.into_iter().map(|x| x / s).collect()
}

/// Best point of the barycentric grid with the given step (2 or 3 types).
fn grid_argmax(g: &Matrix, r: &[f64], step: f64) -> Option<Vec<f64>> {
    let n = g.dim();
    let m = (1.0 / step).round() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |nu: Vec<f64>| {
        if nu.iter().any(|&x| x <= 0.0) {
            return;
        }
        let (rate, _) = rate_function_sup(g, &nu, None, 1);
        let val = dot(&nu, r) - rate;
        if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
            best = Some((val, nu));
        }
    };
    match n {
        2 => {
            for i in 0..=m {
                let x = i as f64 * step;
                consider(vec![x, 1.0 - x]);
            }
        }
        3 => {
            for i in 0..=m {
                for j in 0..=(m - i) {
                    let x = i as f64 * step;
                    let y = j as f64 * step;
                    consider(vec![x, y, 1.0 - x - y]);
                }
            }
        }
        _ => return None,
    }
    best.map(|(_, nu)| nu)
}
