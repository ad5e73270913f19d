//! KL-divergence calculus for Gibbs measures: one-parameter families of
//! Jacobians, derivative formulas validated against finite-difference
//! oracles, Pythagorean/triangle defects with regime classification, the
//! pressure-based Bregman generator with its Legendre transform, and
//! information projections over simplices of Jacobians.
//!
//! Two families interpolate a pair of Jacobians J₀, J₂:
//!
//! * the J-case 𝔍_λ = λJ₂ + (1−λ)J₀ (a Jacobian for every λ), and
//! * the log J-case potential λ log J₂ + (1−λ) log J₀, renormalized.
//!
//! First-problem derivatives (the moving measure in the second slot of
//! D_KL) need no measure differentiation and are single integrals. The
//! second-problem derivatives differentiate the Gibbs measure itself; the
//! leading integral must be completed by the two-sided correlation
//! (susceptibility) sum, which [`derivative_at`] evaluates through iterated
//! transfer applications. Both the full value and the leading term are
//! reported; they coincide exactly for i.i.d. (Bernoulli) data.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::symbolic::CylinderFunction;
use crate::transfer::{
    leading_eigendata, normalization_residual, tol, two_sided_response, GibbsData, Potential,
    MAX_POWER_ITER,
};

/// Shared working depth for divergence reports (d = 2).
pub const DEFAULT_WORKING_DEPTH: usize = 8;

/// Which argument of D_KL the family occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Slot {
    /// D(μ₁, μ_λ): the fixed measure comes first.
    First,
    /// D(μ_λ, μ₁): the family comes first.
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Endpoint {
    Zero,
    One,
}

/// How the pair (J₀, J₂) is interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FamilyKind {
    /// 𝔍_λ = λJ₂ + (1−λ)J₀.
    Jacobian,
    /// potential λ log J₂ + (1−λ) log J₀, renormalized.
    LogJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Minimize,
    Maximize,
}

/// Sign of d/dλ D(μ_λ, μ₁)|₀ classifies the triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    SecondLaw,
    Fluctuation,
    Stationary,
}

/// D_KL(μ_from | μ_to) = ∫(log J_from − log J_to) dμ_from.
pub fn kl(from: &GibbsData, to: &GibbsData) -> Result<f64> {
    if from.alphabet_size() != to.alphabet_size() {
        return Err(Error::AlphabetMismatch(
            from.alphabet_size(),
            to.alphabet_size(),
        ));
    }
    let diff = from
        .normalized_potential()
        .sub(to.normalized_potential())?;
    from.integrate(&diff)
}

/// The mixture family 𝔍_λ = λJ₂ + (1−λ)J₀ of Jacobians.
#[derive(Debug, Clone)]
pub struct JFamily {
    j0: CylinderFunction,
    j2: CylinderFunction,
}

impl JFamily {
    pub fn new(a0: &Potential, a2: &Potential) -> Result<Self> {
        require_normalized(a0)?;
        require_normalized(a2)?;
        Ok(JFamily {
            j0: a0.jacobian(),
            j2: a2.jacobian(),
        })
    }

    /// The Jacobian at parameter λ (λ may leave [0,1] slightly for
    /// finite-difference probing as long as positivity survives).
    pub fn jacobian_at(&self, lambda: f64) -> Result<CylinderFunction> {
        let j = self
            .j0
            .zip_with(&self.j2, |a, b| (1.0 - lambda) * a + lambda * b)?;
        if j.min_value() <= 0.0 {
            return Err(Error::NonPositive {
                context: "interpolated Jacobian",
                value: j.min_value(),
            });
        }
        Ok(j)
    }

    /// The normalized potential log 𝔍_λ, with the ℒ1 = 1 residual verified
    /// to the family tolerance.
    pub fn potential_at(&self, lambda: f64, working_depth: usize) -> Result<Potential> {
        let log_j = self.jacobian_at(lambda)?.ln()?;
        let residual = normalization_residual(&log_j, working_depth)?;
        if residual > tol::FAMILY_JACOBIAN {
            return Err(Error::NotNormalized { residual });
        }
        Potential::normalized(log_j, working_depth)
    }

    pub fn gibbs_at(&self, lambda: f64, working_depth: usize) -> Result<GibbsData> {
        let pot = self.potential_at(lambda, working_depth)?;
        leading_eigendata(pot.function(), working_depth, tol::EIGEN, MAX_POWER_ITER)
    }
}

/// The log-scale family: equilibrium states of λ log J₂ + (1−λ) log J₀.
#[derive(Debug, Clone)]
pub struct LogJFamily {
    a0: CylinderFunction,
    a2: CylinderFunction,
}

impl LogJFamily {
    pub fn new(a0: &Potential, a2: &Potential) -> Result<Self> {
        require_normalized(a0)?;
        require_normalized(a2)?;
        Ok(LogJFamily {
            a0: a0.function().clone(),
            a2: a2.function().clone(),
        })
    }

    pub fn raw_potential_at(&self, lambda: f64) -> Result<CylinderFunction> {
        self.a0
            .zip_with(&self.a2, |a, b| (1.0 - lambda) * a + lambda * b)
    }

    /// Gibbs data of the renormalized potential 𝔍^λ.
    pub fn gibbs_at(&self, lambda: f64, working_depth: usize) -> Result<GibbsData> {
        let raw = self.raw_potential_at(lambda)?;
        leading_eigendata(&raw, working_depth, tol::EIGEN, MAX_POWER_ITER)
    }
}

fn require_normalized(p: &Potential) -> Result<()> {
    if !p.is_normalized() {
        return Err(Error::NotNormalized { residual: f64::NAN });
    }
    Ok(())
}

/// A derivative of λ ↦ D_KL along a family, as the oracle-validated value
/// together with the single-integral leading term.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeReport {
    /// The derivative: leading term plus the correlation (susceptibility)
    /// tail whenever the Gibbs measure itself moves.
    pub value: f64,
    /// The bare integral without correlation corrections; equals `value`
    /// for first-problem derivatives and for i.i.d. data.
    pub leading_term: f64,
}

/// Closed-form derivative of λ ↦ D_KL along the family at an endpoint.
///
/// Supported combinations: every slot/endpoint for the J-case; λ = 0 only
/// for the log J-case (requesting λ = 1 there is an explicit error, it is
/// not extrapolated).
pub fn derivative_at(
    kind: FamilyKind,
    a0: &Potential,
    a2: &Potential,
    slot: Slot,
    endpoint: Endpoint,
    target: &GibbsData,
    working_depth: usize,
) -> Result<DerivativeReport> {
    require_normalized(a0)?;
    require_normalized(a2)?;
    let k = working_depth;
    match (kind, slot, endpoint) {
        (FamilyKind::Jacobian, Slot::First, Endpoint::Zero) => {
            // ∫ (1 − J₂/J₀) dμ₁
            let integrand = a0
                .jacobian()
                .zip_with(&a2.jacobian(), |j0, j2| 1.0 - j2 / j0)?;
            let v = target.integrate(&integrand)?;
            Ok(DerivativeReport {
                value: v,
                leading_term: v,
            })
        }
        (FamilyKind::Jacobian, Slot::First, Endpoint::One) => {
            // −∫ (J₂ − J₀)/J₂ dμ₁
            let integrand = a0
                .jacobian()
                .zip_with(&a2.jacobian(), |j0, j2| (j0 - j2) / j2)?;
            let v = target.integrate(&integrand)?;
            Ok(DerivativeReport {
                value: v,
                leading_term: v,
            })
        }
        (FamilyKind::Jacobian, Slot::Second, Endpoint::Zero) => {
            let base = a0.gibbs(k)?;
            let xi = a0
                .jacobian()
                .zip_with(&a2.jacobian(), |j0, j2| (j2 - j0) / j0)?;
            second_problem_derivative(&base, a0, target, &xi)
        }
        (FamilyKind::Jacobian, Slot::Second, Endpoint::One) => {
            let base = a2.gibbs(k)?;
            let xi = a0
                .jacobian()
                .zip_with(&a2.jacobian(), |j0, j2| (j2 - j0) / j2)?;
            second_problem_derivative(&base, a2, target, &xi)
        }
        (FamilyKind::LogJacobian, Slot::First, Endpoint::Zero) => {
            // −∫ξ dμ₁ + ∫ξ dμ⁰ with ξ = log J₂ − log J₀
            let xi = a2.function().sub(a0.function())?;
            let base = a0.gibbs(k)?;
            let v = -target.integrate(&xi)? + base.integrate(&xi)?;
            Ok(DerivativeReport {
                value: v,
                leading_term: v,
            })
        }
        (FamilyKind::LogJacobian, Slot::Second, Endpoint::Zero) => {
            let base = a0.gibbs(k)?;
            let xi = a2.function().sub(a0.function())?;
            second_problem_derivative(&base, a0, target, &xi)
        }
        (FamilyKind::LogJacobian, _, Endpoint::One) => Err(Error::Unsupported(
            "derivative_at",
            "the log J-case derivative is only available at the λ = 0 endpoint",
        )),
    }
}

/// d/dλ D(μ_λ, μ₁) at a base measure with family direction ψ: the leading
/// integral ∫(log J_base − log J₁)ψ dμ plus the susceptibility tail.
fn second_problem_derivative(
    base: &GibbsData,
    base_potential: &Potential,
    target: &GibbsData,
    psi: &CylinderFunction,
) -> Result<DerivativeReport> {
    let f = base_potential
        .function()
        .sub(target.normalized_potential())?;
    let value = two_sided_response(base, &f, psi)?;
    let leading_term = base.integrate(&f.mul(psi)?)?;
    Ok(DerivativeReport {
        value,
        leading_term,
    })
}

/// Richardson-extrapolated central finite difference of λ ↦ D_KL along the
/// family; the independent oracle for [`derivative_at`].
pub fn fd_oracle_derivative(
    kind: FamilyKind,
    a0: &Potential,
    a2: &Potential,
    slot: Slot,
    endpoint: Endpoint,
    target: &GibbsData,
    working_depth: usize,
) -> Result<f64> {
    let at = match endpoint {
        Endpoint::Zero => 0.0,
        Endpoint::One => 1.0,
    };
    let divergence = |lambda: f64| -> Result<f64> {
        let gibbs = match kind {
            FamilyKind::Jacobian => JFamily::new(a0, a2)?.gibbs_at(lambda, working_depth)?,
            FamilyKind::LogJacobian => LogJFamily::new(a0, a2)?.gibbs_at(lambda, working_depth)?,
        };
        match slot {
            Slot::First => kl(target, &gibbs),
            Slot::Second => kl(&gibbs, target),
        }
    };
    let central =
        |h: f64| -> Result<f64> { Ok((divergence(at + h)? - divergence(at - h)?) / (2.0 * h)) };
    // steps 1e−3 and 1e−4; ratio-10 Richardson elimination of the O(h²) term
    let d1 = central(1e-3)?;
    let d2 = central(1e-4)?;
    Ok((100.0 * d2 - d1) / 99.0)
}

/// All ordered KL divergences of the triple.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KlTable {
    pub d01: f64,
    pub d02: f64,
    pub d10: f64,
    pub d12: f64,
    pub d20: f64,
    pub d21: f64,
}

/// Divergence report for a triple (μ₀, μ₁, μ₂): all six KL values, the
/// derivative formulas, Pythagorean/triangle defects computed two ways,
/// and the regime tag.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceReport {
    pub kl: KlTable,
    pub second_j_at0: DerivativeReport,
    pub second_j_at1: DerivativeReport,
    pub first_j_at0: DerivativeReport,
    pub first_j_at1: DerivativeReport,
    pub first_logj_at0: DerivativeReport,
    pub second_logj_at0: DerivativeReport,
    /// ∫(log J₀ − log J₁)dμ₂ − ∫(log J₀ − log J₁)dμ₀ (≥ 0 ⟺ type-1
    /// Pythagorean inequality).
    pub type1_pythagorean_defect: f64,
    /// Same defect recomputed as D(μ₂,μ₁) − D(μ₂,μ₀) − D(μ₀,μ₁).
    pub type1_defect_via_kl: f64,
    /// ∫(log J₀ − log J₂)dμ₁ − ∫(log J₀ − log J₂)dμ₀ (≥ 0 ⟺ type-2).
    pub type2_pythagorean_defect: f64,
    /// Same defect recomputed as D(μ₁,μ₂) − D(μ₁,μ₀) − D(μ₀,μ₂).
    pub type2_defect_via_kl: f64,
    /// Positive ⟺ the corresponding triangle inequality is strict.
    pub type1_triangle_defect: f64,
    pub type2_triangle_defect: f64,
    pub regime: Regime,
}

/// Evaluate every defect and derivative for the triple (μ₀, μ₁, μ₂).
pub fn defects(
    a0: &Potential,
    a1: &Potential,
    a2: &Potential,
    working_depth: usize,
) -> Result<DivergenceReport> {
    let k = working_depth;
    let g0 = a0.gibbs(k)?;
    let g1 = a1.gibbs(k)?;
    let g2 = a2.gibbs(k)?;

    let table = KlTable {
        d01: kl(&g0, &g1)?,
        d02: kl(&g0, &g2)?,
        d10: kl(&g1, &g0)?,
        d12: kl(&g1, &g2)?,
        d20: kl(&g2, &g0)?,
        d21: kl(&g2, &g1)?,
    };

    let diff01 = a0.function().sub(a1.function())?;
    let diff02 = a0.function().sub(a2.function())?;
    let type1 = g2.integrate(&diff01)? - g0.integrate(&diff01)?;
    let type2 = g1.integrate(&diff02)? - g0.integrate(&diff02)?;

    let second_j_at0 =
        derivative_at(FamilyKind::Jacobian, a0, a2, Slot::Second, Endpoint::Zero, &g1, k)?;
    let second_j_at1 =
        derivative_at(FamilyKind::Jacobian, a0, a2, Slot::Second, Endpoint::One, &g1, k)?;
    let first_j_at0 =
        derivative_at(FamilyKind::Jacobian, a0, a2, Slot::First, Endpoint::Zero, &g1, k)?;
    let first_j_at1 =
        derivative_at(FamilyKind::Jacobian, a0, a2, Slot::First, Endpoint::One, &g1, k)?;
    let first_logj_at0 =
        derivative_at(FamilyKind::LogJacobian, a0, a2, Slot::First, Endpoint::Zero, &g1, k)?;
    let second_logj_at0 =
        derivative_at(FamilyKind::LogJacobian, a0, a2, Slot::Second, Endpoint::Zero, &g1, k)?;

    let scale = second_j_at0.value.abs().max(1.0);
    let regime = if second_j_at0.value > 1e-12 * scale {
        Regime::SecondLaw
    } else if second_j_at0.value < -1e-12 * scale {
        Regime::Fluctuation
    } else {
        Regime::Stationary
    };

    Ok(DivergenceReport {
        second_j_at0,
        second_j_at1,
        first_j_at0,
        first_j_at1,
        first_logj_at0,
        second_logj_at0,
        type1_pythagorean_defect: type1,
        type1_defect_via_kl: table.d21 - table.d20 - table.d01,
        type2_pythagorean_defect: type2,
        type2_defect_via_kl: table.d12 - table.d10 - table.d02,
        type1_triangle_defect: -type1,
        type2_triangle_defect: -type2,
        regime,
        kl: table,
    })
}

/// The pressure generator P₁(λ) = P(λ(log J₂ − log J₀) + log J₀), its
/// derivative at 0, the Bregman divergence, and the Legendre transform.
#[derive(Debug, Clone)]
pub struct Bregman {
    a0: Potential,
    xi: CylinderFunction,
    working_depth: usize,
}

impl Bregman {
    pub fn new(a0: &Potential, a2: &Potential, working_depth: usize) -> Result<Self> {
        require_normalized(a0)?;
        require_normalized(a2)?;
        Ok(Bregman {
            a0: a0.clone(),
            xi: a2.function().sub(a0.function())?,
            working_depth,
        })
    }

    /// P₁(λ); P₁(0) = P₁(1) = 0 because both endpoints are normalized.
    pub fn generator(&self, lambda: f64) -> Result<f64> {
        let pot = self.a0.function().add(&self.xi.scale(lambda))?;
        Ok(leading_eigendata(&pot, self.working_depth, tol::EIGEN, MAX_POWER_ITER)?.pressure())
    }

    /// P₁′(0) = ∫(log J₂ − log J₀) dμ⁰.
    pub fn generator_derivative_at_zero(&self) -> Result<f64> {
        let base = self.a0.gibbs(self.working_depth)?;
        base.integrate(&self.xi)
    }

    /// The Bregman divergence B = P₁(1) − P₁(0) − P₁′(0) = −P₁′(0), which
    /// equals D_KL(μ⁰ | μ¹).
    pub fn divergence(&self) -> Result<f64> {
        Ok(-self.generator_derivative_at_zero()?)
    }

    /// Legendre transform P₁*(η) = sup_{λ∈[0,1]} (λη − P₁(λ)); P₁ is convex
    /// along the affine line, so the objective is concave and golden-section
    /// search applies (endpoints included).
    pub fn legendre(&self, eta: f64) -> Result<f64> {
        let objective = |lambda: f64| -> Result<f64> { Ok(lambda * eta - self.generator(lambda)?) };
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let mut f1 = objective(x1)?;
        let mut f2 = objective(x2)?;
        for _ in 0..60 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = objective(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = objective(x1)?;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let interior = f1.max(f2);
        Ok(interior.max(objective(0.0)?).max(objective(1.0)?))
    }
}

/// An information-projection problem over the simplex spanned by a finite
/// set of Jacobian vertices.
#[derive(Debug, Clone)]
pub struct SimplexProblem {
    pub vertices: Vec<Potential>,
    pub mode: Mode,
    pub slot: Slot,
    pub kind: FamilyKind,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectOptions {
    pub working_depth: usize,
    pub max_rounds: usize,
    /// First-order certificate tolerance for the vertex inequalities.
    pub certificate_tol: f64,
    pub golden_iters: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            working_depth: DEFAULT_WORKING_DEPTH,
            max_rounds: 40,
            certificate_tol: 1e-8,
            golden_iters: 70,
        }
    }
}

/// Result of a simplex projection with its first-order certificate.
#[derive(Debug, Clone, Serialize)]
pub struct Projection {
    /// Barycentric coordinates of the optimizer.
    pub coordinates: Vec<f64>,
    pub value: f64,
    /// Directional derivative toward each vertex at the optimizer.
    pub certificate: Vec<f64>,
    /// All vertex inequalities hold within the tolerance.
    pub certificate_ok: bool,
    /// Max problems only: the optimizer sits on the simplex boundary.
    pub on_boundary: bool,
    /// Index of the winning start (vertices first, barycenter last).
    pub start_index: usize,
    pub rounds: usize,
}

struct SimplexWork<'a> {
    problem: &'a SimplexProblem,
    target: &'a GibbsData,
    opts: ProjectOptions,
}

impl SimplexWork<'_> {
    /// Normalized potential of the barycentric point c.
    fn potential(&self, coords: &[f64]) -> Result<Potential> {
        match self.problem.kind {
            FamilyKind::Jacobian => {
                let mut j: Option<CylinderFunction> = None;
                for (c, vertex) in coords.iter().zip(&self.problem.vertices) {
                    let scaled = vertex.jacobian().scale(*c);
                    j = Some(match j {
                        None => scaled,
                        Some(acc) => acc.add(&scaled)?,
                    });
                }
                let log_j = j.unwrap().ln()?;
                // convex combinations of Jacobians stay normalized
                Potential::normalized(log_j, self.opts.working_depth)
            }
            FamilyKind::LogJacobian => {
                let mut b: Option<CylinderFunction> = None;
                for (c, vertex) in coords.iter().zip(&self.problem.vertices) {
                    let scaled = vertex.function().scale(*c);
                    b = Some(match b {
                        None => scaled,
                        Some(acc) => acc.add(&scaled)?,
                    });
                }
                let gibbs = leading_eigendata(
                    &b.unwrap(),
                    self.opts.working_depth,
                    tol::EIGEN,
                    MAX_POWER_ITER,
                )?;
                Ok(gibbs.potential())
            }
        }
    }

    fn objective(&self, coords: &[f64]) -> Result<f64> {
        let pot = self.potential(coords)?;
        let gibbs = pot.gibbs(self.opts.working_depth)?;
        match self.problem.slot {
            Slot::First => kl(self.target, &gibbs),
            Slot::Second => kl(&gibbs, self.target),
        }
    }

    /// Directional derivative of the objective along the edge from the
    /// current point toward each vertex (the λ = 0 end of the connecting
    /// family); these are the certificate quantities.
    fn vertex_derivatives(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let current = self.potential(coords)?;
        let mut out = Vec::with_capacity(self.problem.vertices.len());
        for (r, vertex) in self.problem.vertices.iter().enumerate() {
            if (coords[r] - 1.0).abs() < 1e-14 {
                out.push(0.0);
                continue;
            }
            let d = derivative_at(
                self.problem.kind,
                &current,
                vertex,
                self.problem.slot,
                Endpoint::Zero,
                self.target,
                self.opts.working_depth,
            )?;
            out.push(d.value);
        }
        Ok(out)
    }

    /// Golden-section line search on the edge toward vertex r.
    fn line_search(&self, coords: &[f64], r: usize) -> Result<(Vec<f64>, f64)> {
        let blend = |t: f64| -> Vec<f64> {
            coords
                .iter()
                .enumerate()
                .map(|(i, c)| (1.0 - t) * c + if i == r { t } else { 0.0 })
                .collect()
        };
        let sign = match self.problem.mode {
            Mode::Minimize => 1.0,
            Mode::Maximize => -1.0,
        };
        let eval = |t: f64| -> Result<f64> { Ok(sign * self.objective(&blend(t))?) };
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let mut f1 = eval(x1)?;
        let mut f2 = eval(x2)?;
        for _ in 0..self.opts.golden_iters {
            if f1 > f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = eval(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = eval(x1)?;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        let mut best_t = if f1 < f2 { x1 } else { x2 };
        let mut best = f1.min(f2);
        for t in [0.0, 1.0] {
            let v = eval(t)?;
            if v < best {
                best = v;
                best_t = t;
            }
        }
        Ok((blend(best_t), sign * best))
    }

    fn run_from(&self, start: &[f64]) -> Result<(Vec<f64>, f64, usize)> {
        let mut coords = start.to_vec();
        let mut value = self.objective(&coords)?;
        let mut rounds = 0;
        for _ in 0..self.opts.max_rounds {
            let derivs = self.vertex_derivatives(&coords)?;
            let pick = match self.problem.mode {
                Mode::Minimize => derivs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
                    .map(|(i, &d)| (i, d)),
                Mode::Maximize => derivs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, &d)| (i, d)),
            };
            let Some((r, d)) = pick else { break };
            let improving = match self.problem.mode {
                Mode::Minimize => d < -self.opts.certificate_tol,
                Mode::Maximize => d > self.opts.certificate_tol,
            };
            if !improving {
                break;
            }
            rounds += 1;
            let (next, next_value) = self.line_search(&coords, r)?;
            let improved = match self.problem.mode {
                Mode::Minimize => next_value < value - 1e-15,
                Mode::Maximize => next_value > value + 1e-15,
            };
            if !improved {
                break;
            }
            coords = next;
            value = next_value;
        }
        Ok((coords, value, rounds))
    }
}

/// Multi-start conditional-gradient projection onto the simplex with a
/// first-order certificate at the result. Starts are every vertex plus the
/// barycenter; ties break toward the lowest start index, so the outcome is
/// deterministic (starts may be evaluated concurrently).
pub fn project_simplex(
    problem: &SimplexProblem,
    target: &GibbsData,
    opts: ProjectOptions,
) -> Result<Projection> {
    let w = problem.vertices.len();
    if w < 2 {
        return Err(Error::InvalidArgument(
            "simplex needs at least two vertices".to_string(),
        ));
    }
    for v in &problem.vertices {
        require_normalized(v)?;
    }
    for i in 0..w {
        for j in i + 1..w {
            let gap = problem.vertices[i]
                .function()
                .sub(problem.vertices[j].function())?
                .sup_norm();
            if gap == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "simplex vertices {i} and {j} coincide"
                )));
            }
        }
    }
    let work = SimplexWork {
        problem,
        target,
        opts,
    };

    let mut starts: Vec<Vec<f64>> = (0..w)
        .map(|r| {
            let mut c = vec![0.0; w];
            c[r] = 1.0;
            c
        })
        .collect();
    starts.push(vec![1.0 / w as f64; w]);

    let outcomes = par::map_collect(&starts, |start| work.run_from(start));
    let mut best: Option<(usize, Vec<f64>, f64, usize)> = None;
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let (coords, value, rounds) = outcome?;
        let better = match &best {
            None => true,
            Some((_, _, best_value, _)) => match problem.mode {
                Mode::Minimize => value < *best_value - 1e-15,
                Mode::Maximize => value > *best_value + 1e-15,
            },
        };
        if better {
            best = Some((idx, coords, value, rounds));
        }
    }
    let (start_index, coordinates, value, rounds) =
        best.ok_or_else(|| Error::Internal("no simplex start succeeded".to_string()))?;

    let certificate = work.vertex_derivatives(&coordinates)?;
    let certificate_ok = match problem.mode {
        Mode::Minimize => certificate.iter().all(|&d| d >= -opts.certificate_tol),
        Mode::Maximize => certificate.iter().all(|&d| d <= opts.certificate_tol),
    };
    let min_coord = coordinates.iter().cloned().fold(f64::INFINITY, f64::min);
    let on_boundary = min_coord <= 1e-6;

    Ok(Projection {
        coordinates,
        value,
        certificate,
        certificate_ok,
        on_boundary,
        start_index,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::MarkovGibbs;

    const K: usize = 8;

    fn mama() -> (MarkovGibbs, MarkovGibbs, MarkovGibbs) {
        (
            MarkovGibbs::from_rs(0.2, 0.2).unwrap(),
            MarkovGibbs::from_rs(0.15, 0.92).unwrap(),
            MarkovGibbs::from_rs(0.9, 0.12).unwrap(),
        )
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(a.abs()).max(1e-12)
    }

    #[test]
    fn kl_basics() {
        let (m0, m1, _) = mama();
        let g0 = m0.exact_gibbs_data(K).unwrap();
        let g1 = m1.exact_gibbs_data(K).unwrap();
        assert!(kl(&g0, &g0).unwrap().abs() < 1e-15);
        // against the closed Markov value
        assert!((kl(&g0, &g1).unwrap() - m0.kl(&m1).unwrap()).abs() < 1e-12);
        // asymmetry
        assert!((kl(&g0, &g1).unwrap() - kl(&g1, &g0).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn stationary_family_has_zero_derivatives() {
        let (m0, m1, _) = mama();
        let a0 = m0.log_jacobian();
        let g1 = m1.exact_gibbs_data(K).unwrap();
        for slot in [Slot::First, Slot::Second] {
            for endpoint in [Endpoint::Zero, Endpoint::One] {
                let d =
                    derivative_at(FamilyKind::Jacobian, a0, a0, slot, endpoint, &g1, K).unwrap();
                assert!(d.value.abs() < 1e-12, "J-case {slot:?} {endpoint:?}");
            }
            let d = derivative_at(FamilyKind::LogJacobian, a0, a0, slot, Endpoint::Zero, &g1, K)
                .unwrap();
            assert!(d.value.abs() < 1e-12, "logJ-case {slot:?}");
        }
    }

    #[test]
    fn logj_endpoint_one_is_rejected() {
        let (m0, m1, m2) = mama();
        let g1 = m1.exact_gibbs_data(K).unwrap();
        let err = derivative_at(
            FamilyKind::LogJacobian,
            m0.log_jacobian(),
            m2.log_jacobian(),
            Slot::Second,
            Endpoint::One,
            &g1,
            K,
        );
        assert!(matches!(err, Err(Error::Unsupported(_, _))));
    }

    #[test]
    fn mama_derivatives_match_fd_oracles() {
        let (m0, m1, m2) = mama();
        let a0 = m0.log_jacobian();
        let a2 = m2.log_jacobian();
        let g1 = m1.exact_gibbs_data(K).unwrap();
        let cases = [
            (FamilyKind::Jacobian, Slot::First, Endpoint::Zero),
            (FamilyKind::Jacobian, Slot::First, Endpoint::One),
            (FamilyKind::Jacobian, Slot::Second, Endpoint::Zero),
            (FamilyKind::Jacobian, Slot::Second, Endpoint::One),
            (FamilyKind::LogJacobian, Slot::First, Endpoint::Zero),
            (FamilyKind::LogJacobian, Slot::Second, Endpoint::Zero),
        ];
        for (kind, slot, endpoint) in cases {
            let closed = derivative_at(kind, a0, a2, slot, endpoint, &g1, K).unwrap();
            let oracle = fd_oracle_derivative(kind, a0, a2, slot, endpoint, &g1, K).unwrap();
            assert!(
                rel_err(closed.value, oracle) < 1e-6,
                "{kind:?} {slot:?} {endpoint:?}: closed {} vs oracle {}",
                closed.value,
                oracle
            );
        }
    }

    #[test]
    fn mama_frozen_values() {
        let (m0, m1, m2) = mama();
        let a0 = m0.log_jacobian();
        let a2 = m2.log_jacobian();
        let g1 = m1.exact_gibbs_data(K).unwrap();

        // the paper prints 0.2750 for this symbol: it is the leading term
        let d = derivative_at(FamilyKind::Jacobian, a0, a2, Slot::Second, Endpoint::Zero, &g1, K)
            .unwrap();
        assert!((d.leading_term - 0.2750529988534392).abs() < 1e-10);
        assert!((d.value + 0.0973531497).abs() < 1e-7, "value {}", d.value);

        let d = derivative_at(FamilyKind::Jacobian, a0, a2, Slot::First, Endpoint::Zero, &g1, K)
            .unwrap();
        assert!((d.value - 0.34784946236559144).abs() < 1e-12);

        let d = derivative_at(
            FamilyKind::LogJacobian,
            a0,
            a2,
            Slot::First,
            Endpoint::Zero,
            &g1,
            K,
        )
        .unwrap();
        assert!((d.value + 0.1391256022543116).abs() < 1e-10);

        let d = derivative_at(
            FamilyKind::LogJacobian,
            a0,
            a2,
            Slot::Second,
            Endpoint::Zero,
            &g1,
            K,
        )
        .unwrap();
        assert!((d.leading_term - 0.2594345390894336).abs() < 1e-10);

        let d = derivative_at(FamilyKind::Jacobian, a0, a2, Slot::Second, Endpoint::One, &g1, K)
            .unwrap();
        assert!((d.leading_term - 2.507635517712918).abs() < 1e-9);
    }

    #[test]
    fn first_problem_derivative_vanishes_at_own_base() {
        // ∫(1 − J₂/J₀)dμ₀ = 0: the direction is in the kernel
        let (m0, _, m2) = mama();
        let g0 = m0.exact_gibbs_data(K).unwrap();
        let d = derivative_at(
            FamilyKind::Jacobian,
            m0.log_jacobian(),
            m2.log_jacobian(),
            Slot::First,
            Endpoint::Zero,
            &g0,
            K,
        )
        .unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn defects_consistency_and_regime() {
        let (m0, m1, m2) = mama();
        let report = defects(m0.log_jacobian(), m1.log_jacobian(), m2.log_jacobian(), K).unwrap();
        // the MaMa type-1 defect
        assert!((report.type1_pythagorean_defect + 0.357820186587).abs() < 1e-9);
        // two routes agree
        assert!((report.type1_pythagorean_defect - report.type1_defect_via_kl).abs() < 1e-12);
        assert!((report.type2_pythagorean_defect - report.type2_defect_via_kl).abs() < 1e-12);
        // the oracle-validated derivative is negative: fluctuation regime
        assert_eq!(report.regime, Regime::Fluctuation);
    }

    #[test]
    fn degenerate_triple_reduces_to_pair_identities() {
        let (m0, m1, _) = mama();
        let report = defects(m0.log_jacobian(), m1.log_jacobian(), m0.log_jacobian(), K).unwrap();
        assert!(report.second_j_at0.value.abs() < 1e-12);
        assert_eq!(report.regime, Regime::Stationary);
        // with J₂ = J₀ the type-2 defect collapses to zero
        assert!(report.type2_pythagorean_defect.abs() < 1e-12);
        assert!(report.kl.d02.abs() < 1e-14);
    }

    #[test]
    fn bernoulli_three_way_identity() {
        // at i.i.d. triples the derivative, the type-1 defect and the
        // closed form coincide
        let p0 = 0.3;
        let p1 = 0.55;
        let p2 = 0.7;
        let mk = |p: f64| {
            MarkovGibbs::new(crate::markov::StochasticMatrix::bernoulli(&[p, 1.0 - p]).unwrap())
                .unwrap()
        };
        let (b0, b1, b2) = (mk(p0), mk(p1), mk(p2));
        let report = defects(b0.log_jacobian(), b1.log_jacobian(), b2.log_jacobian(), K).unwrap();
        let closed = (p0 - p2) * ((1.0 - p0).ln() - p0.ln() - (1.0 - p1).ln() + p1.ln());
        assert!((report.second_j_at0.value - closed).abs() < 1e-12);
        assert!((report.type1_pythagorean_defect - closed).abs() < 1e-12);
        assert!((report.second_j_at0.leading_term - closed).abs() < 1e-12);
    }

    #[test]
    fn logj_family_recovers_endpoints() {
        let (m0, _, m2) = mama();
        let family = LogJFamily::new(m0.log_jacobian(), m2.log_jacobian()).unwrap();
        let g0 = family.gibbs_at(0.0, K).unwrap();
        let exact0 = m0.exact_gibbs_data(K).unwrap();
        let worst = g0
            .measure()
            .weights()
            .iter()
            .zip(exact0.measure().weights())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 1e-10, "endpoint 0 mismatch {worst}");
        let g1 = family.gibbs_at(1.0, K).unwrap();
        let exact2 = m2.exact_gibbs_data(K).unwrap();
        let worst = g1
            .measure()
            .weights()
            .iter()
            .zip(exact2.measure().weights())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 1e-10, "endpoint 1 mismatch {worst}");
    }

    #[test]
    fn jfamily_stays_normalized() {
        let (m0, _, m2) = mama();
        let family = JFamily::new(m0.log_jacobian(), m2.log_jacobian()).unwrap();
        for i in 0..=10 {
            let lambda = i as f64 / 10.0;
            assert!(family.potential_at(lambda, K).is_ok(), "λ = {lambda}");
        }
    }

    #[test]
    fn bregman_properties() {
        let (m0, _, m2) = mama();
        let breg = Bregman::new(m0.log_jacobian(), m2.log_jacobian(), K).unwrap();
        assert!(breg.generator(0.0).unwrap().abs() < 1e-10);
        assert!(breg.generator(1.0).unwrap().abs() < 1e-10);

        // P₁′(0) against a finite difference
        let h = 1e-4;
        let fd = (breg.generator(h).unwrap() - breg.generator(-h).unwrap()) / (2.0 * h);
        let closed = breg.generator_derivative_at_zero().unwrap();
        assert!((fd - closed).abs() < 1e-6, "fd {fd} closed {closed}");

        // B = D_KL(μ⁰, μ¹) via the independent markov route
        let b = breg.divergence().unwrap();
        assert!((b - m0.kl(&m2).unwrap()).abs() < 1e-10);

        // Legendre touching point at η = P₁′(0)
        assert!(breg.legendre(closed).unwrap().abs() < 1e-8);
    }

    #[test]
    fn bregman_degenerate_family() {
        let (m0, _, _) = mama();
        let breg = Bregman::new(m0.log_jacobian(), m0.log_jacobian(), K).unwrap();
        assert!(breg.generator(0.5).unwrap().abs() < 1e-12);
        assert!(breg.divergence().unwrap().abs() < 1e-12);
        assert!((breg.legendre(0.7).unwrap() - 0.7).abs() < 1e-9);
        assert!(breg.legendre(-0.4).unwrap().abs() < 1e-9);
    }

    #[test]
    fn simplex_vertex_target_minimum() {
        let (m0, m1, m2) = mama();
        let problem = SimplexProblem {
            vertices: vec![
                m0.log_jacobian().clone(),
                m1.log_jacobian().clone(),
                m2.log_jacobian().clone(),
            ],
            mode: Mode::Minimize,
            slot: Slot::First,
            kind: FamilyKind::Jacobian,
        };
        let target = m1.exact_gibbs_data(K).unwrap();
        let proj = project_simplex(&problem, &target, ProjectOptions::default()).unwrap();
        assert!(proj.value.abs() < 1e-9, "value {}", proj.value);
        assert!(proj.certificate_ok);
        assert!((proj.coordinates[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simplex_two_vertex_matches_grid() {
        let (m0, m1, m2) = mama();
        let problem = SimplexProblem {
            vertices: vec![m0.log_jacobian().clone(), m2.log_jacobian().clone()],
            mode: Mode::Minimize,
            slot: Slot::First,
            kind: FamilyKind::Jacobian,
        };
        let target = m1.exact_gibbs_data(K).unwrap();
        let proj = project_simplex(&problem, &target, ProjectOptions::default()).unwrap();

        // dense grid oracle over the edge
        let family = JFamily::new(m0.log_jacobian(), m2.log_jacobian()).unwrap();
        let mut best_t = 0.0;
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let t = i as f64 / 2000.0;
            let g = family.gibbs_at(t, K).unwrap();
            let v = kl(&target, &g).unwrap();
            if v < best {
                best = v;
                best_t = t;
            }
        }
        assert!(
            (proj.coordinates[1] - best_t).abs() < 1e-3,
            "argmin {} vs grid {}",
            proj.coordinates[1],
            best_t
        );
        assert!((proj.value - best).abs() < 1e-6);
    }

    #[test]
    fn simplex_max_lands_on_vertex_with_certificate() {
        let (m0, m1, m2) = mama();
        let problem = SimplexProblem {
            vertices: vec![m0.log_jacobian().clone(), m2.log_jacobian().clone()],
            mode: Mode::Maximize,
            slot: Slot::First,
            kind: FamilyKind::Jacobian,
        };
        let target = m1.exact_gibbs_data(K).unwrap();
        let proj = project_simplex(&problem, &target, ProjectOptions::default()).unwrap();
        assert!(proj.on_boundary, "coords {:?}", proj.coordinates);
        assert!(proj.certificate_ok, "certificate {:?}", proj.certificate);
        let v0 = kl(&target, &m0.exact_gibbs_data(K).unwrap()).unwrap();
        let v2 = kl(&target, &m2.exact_gibbs_data(K).unwrap()).unwrap();
        assert!((proj.value - v0.max(v2)).abs() < 1e-9);
    }
}
