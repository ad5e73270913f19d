//! Ruelle transfer operator, leading eigendata, pressure, normalization,
//! Gibbs measures, entropy, and the asymptotic-variance (Fisher) metric.
//!
//! A potential B of depth ≤ k+1 acts exactly on functions stored at the
//! working depth k: the transfer matrix is d^k × d^k with d nonzero entries
//! per row, applied in gather form. Markov potentials (depth 2) are exact at
//! every working depth ≥ 1.

use crate::error::{Error, Result};
use crate::par;
use crate::symbolic::{cell_count, CylinderFunction, CylinderMeasure};

/// Numerical tolerances used across the crate.
pub mod tol {
    /// sup|ℒ_A 1 − 1| for a potential to count as normalized.
    pub const NORMALIZATION: f64 = 1e-10;
    /// ℒ-residual and mean for tangent vectors.
    pub const KERNEL: f64 = 1e-10;
    /// Power-iteration convergence.
    pub const EIGEN: f64 = 1e-13;
    /// Zero-mean precondition for variance inputs.
    pub const MEAN: f64 = 1e-8;
    /// ℒ1 = 1 residual required of interpolated Jacobian families.
    pub const FAMILY_JACOBIAN: f64 = 1e-12;
}

/// Default iteration cap for the power method.
pub const MAX_POWER_ITER: usize = 100_000;

/// A potential together with its normalization status.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    function: CylinderFunction,
    normalized: bool,
}

impl Potential {
    /// Wrap a raw (not necessarily normalized) potential.
    pub fn raw(function: CylinderFunction) -> Self {
        Potential {
            function,
            normalized: false,
        }
    }

    /// Wrap a potential after verifying sup|ℒ_B 1 − 1| ≤ tolerance at the
    /// given working depth.
    pub fn normalized(function: CylinderFunction, working_depth: usize) -> Result<Self> {
        let residual = normalization_residual(&function, working_depth)?;
        if residual > tol::NORMALIZATION {
            return Err(Error::NotNormalized { residual });
        }
        Ok(Potential {
            function,
            normalized: true,
        })
    }

    /// Wrap a potential the caller has already proven normalized.
    pub(crate) fn normalized_unchecked(function: CylinderFunction) -> Self {
        Potential {
            function,
            normalized: true,
        }
    }

    pub fn function(&self) -> &CylinderFunction {
        &self.function
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn depth(&self) -> usize {
        self.function.depth()
    }

    pub fn alphabet_size(&self) -> usize {
        self.function.alphabet_size()
    }

    /// The Jacobian J = e^B.
    pub fn jacobian(&self) -> CylinderFunction {
        self.function.exp()
    }

    /// Leading eigendata of ℒ_B at the given working depth.
    pub fn gibbs(&self, working_depth: usize) -> Result<GibbsData> {
        leading_eigendata(&self.function, working_depth, tol::EIGEN, MAX_POWER_ITER)
    }
}

/// (ℒ_B f)(x) = Σ_a e^{B(a·x)} f(a·x), computed at working depth k.
///
/// Both `b` and `f` may have depth up to k+1; the output has depth k.
pub fn apply_ruelle(
    b: &CylinderFunction,
    f: &CylinderFunction,
    working_depth: usize,
) -> Result<CylinderFunction> {
    let weights = b.refine(working_depth + 1)?.exp();
    apply_with_weights(&weights, f, working_depth)
}

/// Same as [`apply_ruelle`] with the weights e^B already materialised at
/// depth k+1; used by iteration loops.
fn apply_with_weights(
    weights: &CylinderFunction,
    f: &CylinderFunction,
    working_depth: usize,
) -> Result<CylinderFunction> {
    let d = weights.alphabet_size();
    if f.alphabet_size() != d {
        return Err(Error::AlphabetMismatch(f.alphabet_size(), d));
    }
    if f.depth() > working_depth + 1 {
        return Err(Error::DepthMismatch {
            function: f.depth(),
            data: working_depth + 1,
        });
    }
    let n = cell_count(d, working_depth)?;
    cell_count(d, working_depth + 1)?;
    let ff = f.refine(working_depth + 1)?;
    let w = weights.values();
    let fv = ff.values();
    let out = par::tabulate(n, |x| {
        let mut acc = 0.0;
        for a in 0..d {
            let u = a * n + x;
            acc += w[u] * fv[u];
        }
        acc
    });
    CylinderFunction::from_values(d, working_depth, out)
}

/// Adjoint action on depth-k weight tables: (ℒ*ν)[u₁…u_k] aggregates
/// e^{B(u)} ν[u₂…u_{k+1}] over the depth-(k+1) words u.
fn adjoint_with_weights(
    weights: &CylinderFunction,
    nu: &[f64],
    working_depth: usize,
) -> Result<Vec<f64>> {
    let d = weights.alphabet_size();
    let n = cell_count(d, working_depth)?;
    if nu.len() != n {
        return Err(Error::LengthMismatch {
            got: nu.len(),
            expected: n,
        });
    }
    let w = weights.values();
    let out = par::tabulate(n, |y| {
        let mut acc = 0.0;
        for b in 0..d {
            let u = y * d + b;
            acc += w[u] * nu[u % n];
        }
        acc
    });
    Ok(out)
}

/// sup|ℒ_B 1 − 1| at the given working depth.
pub fn normalization_residual(b: &CylinderFunction, working_depth: usize) -> Result<f64> {
    let one = CylinderFunction::constant(b.alphabet_size(), 1.0)?;
    let image = apply_ruelle(b, &one, working_depth)?;
    Ok(image.map(|v| v - 1.0).sup_norm())
}

/// Leading eigendata of a Ruelle operator: eigenvalue, eigenfunction,
/// eigenmeasure, Gibbs measure and the normalized potential Π(B).
#[derive(Debug, Clone)]
pub struct GibbsData {
    working_depth: usize,
    eigenvalue: f64,
    eigenfunction: CylinderFunction,
    eigenmeasure: CylinderMeasure,
    measure: CylinderMeasure,
    normalized_potential: CylinderFunction,
    forward_residual: f64,
    adjoint_residual: f64,
    normalization_residual: f64,
    iterations: usize,
}

impl GibbsData {
    pub fn working_depth(&self) -> usize {
        self.working_depth
    }

    pub fn alphabet_size(&self) -> usize {
        self.normalized_potential.alphabet_size()
    }

    pub fn eigenvalue(&self) -> f64 {
        self.eigenvalue
    }

    /// Pressure P(B) = log λ_B.
    pub fn pressure(&self) -> f64 {
        self.eigenvalue.ln()
    }

    pub fn eigenfunction(&self) -> &CylinderFunction {
        &self.eigenfunction
    }

    pub fn eigenmeasure(&self) -> &CylinderMeasure {
        &self.eigenmeasure
    }

    /// The Gibbs (equilibrium) measure μ_B ∝ h_B · ν at the working depth.
    pub fn measure(&self) -> &CylinderMeasure {
        &self.measure
    }

    /// Π(B) = B + log h_B − log h_B∘σ − log λ_B, stored compressed.
    pub fn normalized_potential(&self) -> &CylinderFunction {
        &self.normalized_potential
    }

    /// Π(B) as a [`Potential`] tagged normalized.
    pub fn potential(&self) -> Potential {
        Potential::normalized_unchecked(self.normalized_potential.clone())
    }

    /// The Jacobian e^{Π(B)} of the Gibbs measure.
    pub fn jacobian(&self) -> CylinderFunction {
        self.normalized_potential.exp()
    }

    pub fn forward_residual(&self) -> f64 {
        self.forward_residual
    }

    pub fn adjoint_residual(&self) -> f64 {
        self.adjoint_residual
    }

    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// The Gibbs measure at an arbitrary depth: marginalized below the
    /// working depth, extended by μ[a·w] = e^{Π(a·w)} μ[w] above it.
    pub fn measure_at_depth(&self, depth: usize) -> Result<CylinderMeasure> {
        if depth <= self.working_depth {
            return self.measure.marginalize(depth);
        }
        let d = self.alphabet_size();
        let mut weights = self.measure.weights().to_vec();
        let mut current = self.working_depth;
        while current < depth {
            let pot = self.normalized_potential.refine(current + 1)?;
            let n = weights.len();
            let total_cells = cell_count(d, current + 1)?;
            let pv = pot.values();
            let mut next = par::tabulate(total_cells, |u| pv[u].exp() * weights[u % n]);
            let mass = par::sum(&next);
            for v in &mut next {
                *v /= mass;
            }
            weights = next;
            current += 1;
        }
        CylinderMeasure::from_weights(d, depth, weights)
    }

    /// ∫ f dμ_B, extending the measure to the depth of f when needed.
    pub fn integrate(&self, f: &CylinderFunction) -> Result<f64> {
        if f.depth() <= self.measure.depth() {
            self.measure.integrate(f)
        } else {
            self.measure_at_depth(f.depth())?.integrate(f)
        }
    }

    /// Entropy of μ_B: −∫ Π(B) dμ_B.
    pub fn entropy(&self) -> Result<f64> {
        Ok(-self.integrate(&self.normalized_potential)?)
    }

    /// Shift-invariance defect |∫f∘σ dμ − ∫f dμ|.
    pub fn invariance_defect(&self, f: &CylinderFunction) -> Result<f64> {
        let direct = self.integrate(f)?;
        let shifted = self.integrate(&f.compose_shift()?)?;
        Ok((shifted - direct).abs())
    }

    pub(crate) fn from_parts(
        working_depth: usize,
        eigenvalue: f64,
        eigenfunction: CylinderFunction,
        eigenmeasure: CylinderMeasure,
        measure: CylinderMeasure,
        normalized_potential: CylinderFunction,
        normalization_residual: f64,
    ) -> Self {
        GibbsData {
            working_depth,
            eigenvalue,
            eigenfunction,
            eigenmeasure,
            measure,
            normalized_potential,
            forward_residual: 0.0,
            adjoint_residual: 0.0,
            normalization_residual,
            iterations: 0,
        }
    }
}

/// Power iteration for the leading eigendata of ℒ_B.
///
/// Deterministic all-ones start, sup-norm normalization for the
/// eigenfunction and mass normalization for the adjoint eigenmeasure.
pub fn leading_eigendata(
    b: &CylinderFunction,
    working_depth: usize,
    tolerance: f64,
    max_iter: usize,
) -> Result<GibbsData> {
    let d = b.alphabet_size();
    if b.depth() > working_depth + 1 {
        return Err(Error::DepthMismatch {
            function: b.depth(),
            data: working_depth + 1,
        });
    }
    let n = cell_count(d, working_depth)?;
    let weights = b.refine(working_depth + 1)?.exp();

    // forward iteration for h
    let mut h = CylinderFunction::from_values(d, working_depth, vec![1.0; n])?;
    let mut lambda = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut diff = f64::INFINITY;
    while iterations < max_iter {
        let image = apply_with_weights(&weights, &h, working_depth)?;
        let new_lambda = image.sup_norm();
        if !(new_lambda > 0.0) || image.min_value() <= 0.0 {
            return Err(Error::Internal(format!(
                "non-positive power iterate at iteration {iterations}"
            )));
        }
        let next = image.scale(1.0 / new_lambda);
        diff = next.sub(&h)?.sup_norm();
        let lambda_shift = (new_lambda - lambda).abs();
        h = next;
        lambda = new_lambda;
        iterations += 1;
        if diff <= tolerance && lambda_shift <= tolerance * lambda.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual: diff,
        });
    }
    let forward_residual = apply_with_weights(&weights, &h, working_depth)?
        .sub(&h.scale(lambda))?
        .sup_norm();

    // adjoint iteration for the eigenmeasure
    let mut nu = vec![1.0 / n as f64; n];
    let mut adj_iter = 0;
    let mut adj_converged = false;
    let mut lambda_adj = lambda;
    while adj_iter < max_iter {
        let image = adjoint_with_weights(&weights, &nu, working_depth)?;
        let mass = par::sum(&image);
        if !(mass > 0.0) {
            return Err(Error::Internal(
                "non-positive adjoint iterate".to_string(),
            ));
        }
        let next: Vec<f64> = image.iter().map(|v| v / mass).collect();
        let diff = next
            .iter()
            .zip(&nu)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        nu = next;
        lambda_adj = mass;
        adj_iter += 1;
        if diff <= tolerance {
            adj_converged = true;
            break;
        }
    }
    if !adj_converged {
        return Err(Error::NonConvergence {
            iterations: adj_iter,
            residual: f64::INFINITY,
        });
    }
    let adjoint_image = adjoint_with_weights(&weights, &nu, working_depth)?;
    let adjoint_residual = adjoint_image
        .iter()
        .zip(&nu)
        .fold(0.0f64, |m, (a, b)| m.max((a - lambda_adj * b).abs()));

    // Gibbs measure μ ∝ h ν
    let mut mu: Vec<f64> = h.values().iter().zip(&nu).map(|(a, b)| a * b).collect();
    let mass = par::sum(&mu);
    for v in &mut mu {
        *v /= mass;
    }
    let measure = CylinderMeasure::from_weights(d, working_depth, mu)?;
    let eigenmeasure = CylinderMeasure::from_weights(d, working_depth, nu)?;

    // Π(B) = B + log h − log h∘σ − log λ
    let h_compressed = h.compress();
    let log_h = h_compressed.ln()?;
    let normalized_potential = b
        .add(&log_h)?
        .sub(&log_h.compose_shift()?)?
        .shift_by(-lambda.ln())
        .compress();
    let normalization_residual =
        normalization_residual(&normalized_potential, working_depth)?;

    Ok(GibbsData {
        working_depth,
        eigenvalue: lambda,
        eigenfunction: h_compressed,
        eigenmeasure,
        measure,
        normalized_potential,
        forward_residual,
        adjoint_residual,
        normalization_residual,
        iterations,
    })
}

/// Π(B): the normalized potential of B, with its eigendata.
pub fn normalize(b: &CylinderFunction, working_depth: usize) -> Result<(Potential, GibbsData)> {
    let gibbs = leading_eigendata(b, working_depth, tol::EIGEN, MAX_POWER_ITER)?;
    let residual = gibbs.normalization_residual();
    if residual > tol::NORMALIZATION {
        return Err(Error::NotNormalized { residual });
    }
    Ok((gibbs.potential(), gibbs))
}

/// Pressure P(B) = log λ_B at the given working depth.
pub fn pressure(b: &CylinderFunction, working_depth: usize) -> Result<f64> {
    Ok(leading_eigendata(b, working_depth, tol::EIGEN, MAX_POWER_ITER)?.pressure())
}

/// A tangent vector at a normalized base potential: an element of the
/// kernel of ℒ_A with zero μ_A-mean.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: CylinderFunction,
    values: CylinderFunction,
    kernel_residual: f64,
    mean: f64,
}

impl TangentVector {
    pub fn function(&self) -> &CylinderFunction {
        &self.values
    }

    pub fn base(&self) -> &CylinderFunction {
        &self.base
    }

    pub fn kernel_residual(&self) -> f64 {
        self.kernel_residual
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn same_base(&self, other: &TangentVector) -> bool {
        self.base == other.base
    }
}

/// Project f onto the kernel of ℒ_A via f ↦ f − (ℒ_A f)∘σ.
///
/// Fixes kernel elements, annihilates constants, and the output has zero
/// μ_A-mean automatically.
pub fn kernel_project(gibbs: &GibbsData, f: &CylinderFunction) -> Result<TangentVector> {
    let k = gibbs.working_depth();
    let a = gibbs.normalized_potential();
    let lf = apply_ruelle(a, f, k)?;
    let values = f.sub(&lf.compose_shift()?)?.compress();
    finish_tangent(gibbs, values, f.sup_norm())
}

/// The binary projection 𝒯(φ) = φ·1_[0] − (J(𝔖) φ(𝔖)/J)·1_[1] built from the
/// values of φ on the cylinder [0]; d = 2 only.
pub fn kernel_project_binary(gibbs: &GibbsData, phi: &CylinderFunction) -> Result<TangentVector> {
    if gibbs.alphabet_size() != 2 {
        return Err(Error::BinaryOnly(gibbs.alphabet_size()));
    }
    let depth = phi.depth().max(gibbs.normalized_potential().depth()).max(1);
    let phi = phi.refine(depth)?;
    // keep only the [0]-restriction of phi
    let mut zero_half = phi.values().to_vec();
    let half = zero_half.len() / 2;
    for v in zero_half.iter_mut().skip(half) {
        *v = 0.0;
    }
    let phi0 = CylinderFunction::from_values(2, depth, zero_half)?;
    let jac = gibbs.jacobian().refine(depth)?;
    let jac_mirror = jac.mirror_to_one()?;
    let phi_mirror = phi0.mirror_to_one()?;
    let transported = jac_mirror
        .mul(&phi_mirror)?
        .zip_with(&jac, |num, den| num / den)?;
    let values = phi0.sub(&transported)?.compress();
    finish_tangent(gibbs, values, phi.sup_norm())
}

fn finish_tangent(
    gibbs: &GibbsData,
    values: CylinderFunction,
    scale: f64,
) -> Result<TangentVector> {
    let k = gibbs.working_depth();
    if values.depth() > k + 1 {
        return Err(Error::DepthMismatch {
            function: values.depth(),
            data: k + 1,
        });
    }
    let residual = apply_ruelle(gibbs.normalized_potential(), &values, k)?.sup_norm();
    let mean = gibbs.integrate(&values)?;
    let bound = tol::KERNEL * scale.max(1.0);
    if residual > bound || mean.abs() > bound {
        return Err(Error::Internal(format!(
            "kernel projection failed: residual {residual}, mean {mean}"
        )));
    }
    Ok(TangentVector {
        base: gibbs.normalized_potential().clone(),
        values,
        kernel_residual: residual,
        mean,
    })
}

/// Wrap an already-tangent function (validated) without projecting.
pub fn tangent_from_kernel(gibbs: &GibbsData, f: &CylinderFunction) -> Result<TangentVector> {
    finish_tangent(gibbs, f.compress(), f.sup_norm())
}

/// Kernel representative from the martingale–coboundary decomposition
/// f̄ = X − (u − u∘σ) with u = Σ_{n≥1} ℒ_Aⁿ f̄.
///
/// Unlike [`kernel_project`], this representative differs from f̄ only by a
/// coboundary, so its L²(μ) norm equals the asymptotic variance of f; it is
/// the derivative of the normalization map at the base in direction f. The
/// two projections coincide on functions already in the kernel.
pub fn martingale_project(gibbs: &GibbsData, f: &CylinderFunction) -> Result<TangentVector> {
    let k = gibbs.working_depth();
    let a = gibbs.normalized_potential();
    let f_bar = f.shift_by(-gibbs.integrate(f)?);
    let mut u = CylinderFunction::constant(f.alphabet_size(), 0.0)?;
    let mut iter = f_bar.clone();
    let mut tiny = 0;
    for _ in 0..400 {
        iter = apply_ruelle(a, &iter, k)?;
        u = u.add(&iter)?;
        let size = iter.sup_norm();
        if size <= 1e-17 * (1.0 + u.sup_norm()) {
            tiny += 1;
            if tiny >= 2 {
                break;
            }
        } else {
            tiny = 0;
        }
    }
    let values = f_bar.add(&u)?.sub(&u.compose_shift()?)?.compress();
    finish_tangent(gibbs, values, f.sup_norm())
}

/// g_A(X, Y) = ∫ X Y dμ_A.
pub fn metric_inner(gibbs: &GibbsData, x: &TangentVector, y: &TangentVector) -> Result<f64> {
    if !x.same_base(y) || x.base() != gibbs.normalized_potential() {
        return Err(Error::BaseMismatch);
    }
    gibbs.integrate(&x.function().mul(y.function())?)
}

/// Fisher information ∫ ξ² dμ_A of a tangent vector.
pub fn fisher_information(gibbs: &GibbsData, xi: &TangentVector) -> Result<f64> {
    metric_inner(gibbs, xi, xi)
}

/// Green–Kubo estimate of the asymptotic variance of a zero-mean function.
#[derive(Debug, Clone, Copy)]
pub struct VarianceEstimate {
    pub value: f64,
    pub tail_estimate: f64,
    pub terms_used: usize,
}

/// σ²(f) = ∫f²dμ + 2 Σ_{n=1}^{N} ∫ f·(f∘σⁿ) dμ, with the cross terms
/// computed as ∫(ℒⁿf)·f dμ so the depth never grows.
pub fn asymptotic_variance(
    gibbs: &GibbsData,
    f: &CylinderFunction,
    n_terms: usize,
) -> Result<VarianceEstimate> {
    let mean = gibbs.integrate(f)?;
    if mean.abs() > tol::MEAN * f.sup_norm().max(1.0) {
        return Err(Error::NonZeroMean(mean));
    }
    let k = gibbs.working_depth();
    let a = gibbs.normalized_potential();
    let mut value = gibbs.integrate(&f.mul(f)?)?;
    let mut iter = f.clone();
    let mut last = f64::INFINITY;
    let mut prev = f64::INFINITY;
    let mut used = 0;
    for _ in 0..n_terms {
        iter = apply_ruelle(a, &iter, k)?;
        let term = gibbs.integrate(&iter.mul(f)?)?;
        value += 2.0 * term;
        prev = last;
        last = term.abs();
        used += 1;
        if last == 0.0 {
            prev = 0.0;
            break;
        }
    }
    let tail_estimate = if used == 0 || last == 0.0 {
        0.0
    } else {
        let ratio = if prev.is_finite() && prev > 0.0 {
            (last / prev).min(0.99)
        } else {
            0.5
        };
        2.0 * last * ratio / (1.0 - ratio)
    };
    Ok(VarianceEstimate {
        value,
        tail_estimate,
        terms_used: used,
    })
}

/// Two-sided susceptibility Σ_{n∈ℤ} Cov_μ(f, ψ∘σⁿ): the derivative of
/// t ↦ ∫ f dμ_{A+tψ} at t = 0. Both one-sided tails are evaluated through
/// iterated transfer applications of the centered arguments.
pub fn two_sided_response(
    gibbs: &GibbsData,
    f: &CylinderFunction,
    psi: &CylinderFunction,
) -> Result<f64> {
    let k = gibbs.working_depth();
    let a = gibbs.normalized_potential();
    let f_bar = f.shift_by(-gibbs.integrate(f)?);
    let psi_bar = psi.shift_by(-gibbs.integrate(psi)?);

    let mut total = gibbs.integrate(&f_bar.mul(&psi_bar)?)?;
    for (lead, trail) in [(&f_bar, &psi_bar), (&psi_bar, &f_bar)] {
        let mut iter = (*lead).clone();
        let mut tiny = 0;
        for _ in 0..400 {
            iter = apply_ruelle(a, &iter, k)?;
            let term = gibbs.integrate(&iter.mul(trail)?)?;
            total += term;
            if term.abs() <= 1e-17 * (1.0 + total.abs()) {
                tiny += 1;
                if tiny >= 2 {
                    break;
                }
            } else {
                tiny = 0;
            }
        }
    }
    Ok(total)
}

/// Central finite difference of t ↦ P(log J₀ + tξ) at 0 against the exact
/// derivative ∫ξ dμ₀; returns (finite difference, closed form).
pub fn pressure_derivative_check(
    log_j0: &Potential,
    xi: &CylinderFunction,
    working_depth: usize,
    h_step: f64,
) -> Result<(f64, f64)> {
    let base = log_j0.function();
    let plus = pressure(&base.add(&xi.scale(h_step))?, working_depth)?;
    let minus = pressure(&base.add(&xi.scale(-h_step))?, working_depth)?;
    let lhs = (plus - minus) / (2.0 * h_step);
    let gibbs = log_j0.gibbs(working_depth)?;
    let rhs = gibbs.integrate(xi)?;
    Ok((lhs, rhs))
}
