//! Constructive Haar and Fourier-like bases on the binary shift, with the
//! verification suite: Gram matrices, kernel residuals, uniform C⁰/L²
//! bounds, Bowen ratios, change-of-variables identities and a numerical
//! σ-algebra generation probe.
//!
//! Three Haar-type layers, all indexed by finite words x:
//!
//! * `e_[x]` — orthonormal L²(μ) Haar elements (Markov or general Gibbs);
//! * `a_x`, `b_x` — kernel elements for Markov chains; `b_x` is the
//!   C⁰-bounded rescaling √μ([x·0])·a_x whose values lie in a finite set;
//! * `𝔞_x` — kernel elements for general Gibbs measures, built by
//!   transporting a Haar element from [0] to [1] with the −J(𝔖)/J factor.
//!
//! Summing one layer over all words of a fixed length and normalizing
//! produces the Fourier-like aggregates γ_n (Markov kernel), ρ_n (L²) and
//! ρ̂_n (Gibbs kernel), whose C⁰ norms stay bounded above and away from
//! zero; at the maximal-entropy chain γ_n reproduces the sign pattern of
//! the ±1 functions β_{n+2}.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::MarkovGibbs;
use crate::symbolic::{cell_count, CylinderFunction, CylinderMeasure, Word};
use crate::transfer::{apply_ruelle, GibbsData};

/// Which construction a family consists of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisKind {
    MarkovE,
    MarkovA,
    MarkovB,
    MarkovGamma,
    GibbsE,
    GibbsRho,
    KernelFrakA,
    KernelRhoHat,
    MaxentAlpha,
    MaxentBeta,
}

impl BasisKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "markov-e" => BasisKind::MarkovE,
            "markov-a" => BasisKind::MarkovA,
            "markov-b" => BasisKind::MarkovB,
            "markov-gamma" => BasisKind::MarkovGamma,
            "gibbs-e" => BasisKind::GibbsE,
            "gibbs-rho" => BasisKind::GibbsRho,
            "kernel-frak-a" => BasisKind::KernelFrakA,
            "kernel-rho-hat" => BasisKind::KernelRhoHat,
            "maxent-alpha" => BasisKind::MaxentAlpha,
            "maxent-beta" => BasisKind::MaxentBeta,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown basis kind `{other}`"
                )))
            }
        })
    }

    /// Kernel families must annihilate under the transfer operator.
    pub fn is_kernel(self) -> bool {
        matches!(
            self,
            BasisKind::MarkovA
                | BasisKind::MarkovB
                | BasisKind::MarkovGamma
                | BasisKind::KernelFrakA
                | BasisKind::KernelRhoHat
                | BasisKind::MaxentBeta
        )
    }

    /// Families indexed by words rather than by a single integer.
    pub fn word_indexed(self) -> bool {
        matches!(
            self,
            BasisKind::MarkovE
                | BasisKind::MarkovA
                | BasisKind::MarkovB
                | BasisKind::GibbsE
                | BasisKind::KernelFrakA
        )
    }
}

fn require_binary(d: usize) -> Result<()> {
    if d != 2 {
        return Err(Error::BinaryOnly(d));
    }
    Ok(())
}

fn word_index(x: &Word) -> usize {
    x.index()
}

/// Haar element (eq-style) for a Markov chain:
/// e_[x] = μ([x])^{−1/2} [√(P_{x_n,1}/P_{x_n,0}) 1_{[x0]} − √(P_{x_n,0}/P_{x_n,1}) 1_{[x1]}].
pub fn markov_haar_e(m: &MarkovGibbs, x: &Word) -> Result<CylinderFunction> {
    require_binary(m.alphabet_size())?;
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "haar elements need a nonempty word".to_string(),
        ));
    }
    let mu = m.cylinder_measure(n)?;
    let mu_x = mu.weight_at(word_index(x));
    let xn = *x.symbols().last().unwrap() as usize;
    let p0 = m.matrix().entry(xn, 0);
    let p1 = m.matrix().entry(xn, 1);
    let cells = cell_count(2, n + 1)?;
    let mut values = vec![0.0; cells];
    values[2 * word_index(x)] = (p1 / p0).sqrt() / mu_x.sqrt();
    values[2 * word_index(x) + 1] = -(p0 / p1).sqrt() / mu_x.sqrt();
    CylinderFunction::from_values(2, n + 1, values)
}

/// Kernel element a_x = c₀ e_[0x] − c₁ e_[1x] with
/// c_j = √π_{x₁} / (√π_j √P_{j,x₁}).
pub fn markov_kernel_a(m: &MarkovGibbs, x: &Word) -> Result<CylinderFunction> {
    require_binary(m.alphabet_size())?;
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "kernel elements need a nonempty word".to_string(),
        ));
    }
    let pi = m.stationary();
    let x1 = x.symbols()[0] as usize;
    let c0 = pi[x1].sqrt() / (pi[0].sqrt() * m.matrix().entry(0, x1).sqrt());
    let c1 = pi[x1].sqrt() / (pi[1].sqrt() * m.matrix().entry(1, x1).sqrt());
    let e0 = markov_haar_e(m, &x.prepend(0)?)?;
    let e1 = markov_haar_e(m, &x.prepend(1)?)?;
    e0.scale(c0).sub(&e1.scale(c1))
}

/// b_x = √μ([x·0]) a_x — the C⁰-bounded rescaling whose four values lie in
/// a finite set as x ranges over all words.
pub fn markov_kernel_b(m: &MarkovGibbs, x: &Word) -> Result<CylinderFunction> {
    let n = x.len();
    let mu = m.cylinder_measure(n + 1)?;
    let mu_x0 = mu.weight_at(2 * word_index(x));
    Ok(markov_kernel_a(m, x)?.scale(mu_x0.sqrt()))
}

/// γ_n = Σ_{|x|=n} b_x, L²(μ)-normalized: the Fourier-like kernel basis of
/// a Markov chain.
pub fn markov_gamma(m: &MarkovGibbs, n: usize) -> Result<CylinderFunction> {
    require_binary(m.alphabet_size())?;
    if n == 0 {
        return Err(Error::InvalidArgument("gamma needs n >= 1".to_string()));
    }
    let cells = cell_count(2, n)?;
    let mut sum: Option<CylinderFunction> = None;
    for i in 0..cells {
        let x = Word::from_index(2, n, i)?;
        let b = markov_kernel_b(m, &x)?;
        sum = Some(match sum {
            None => b,
            Some(acc) => acc.add(&b)?,
        });
    }
    let gamma = sum.unwrap();
    let mu = m.cylinder_measure(gamma.depth())?;
    let norm = mu.integrate(&gamma.mul(&gamma)?)?.sqrt();
    Ok(gamma.scale(1.0 / norm))
}

/// General-Gibbs Haar element
/// e_x = √(μ[x1]/(μ[x0]μ[x])) 1_[x0] − √(μ[x0]/(μ[x1]μ[x])) 1_[x1].
///
/// The measure must be materialised at depth ≥ |x|+1.
pub fn gibbs_haar_e(mu: &CylinderMeasure, x: &Word) -> Result<CylinderFunction> {
    require_binary(mu.alphabet_size())?;
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "haar elements need a nonempty word".to_string(),
        ));
    }
    if mu.depth() < n + 1 {
        return Err(Error::DepthMismatch {
            function: n + 1,
            data: mu.depth(),
        });
    }
    let fine = mu.marginalize(n + 1)?;
    let m0 = fine.weight_at(2 * word_index(x));
    let m1 = fine.weight_at(2 * word_index(x) + 1);
    let mx = m0 + m1;
    let cells = cell_count(2, n + 1)?;
    let mut values = vec![0.0; cells];
    values[2 * word_index(x)] = (m1 / (m0 * mx)).sqrt();
    values[2 * word_index(x) + 1] = -(m0 / (m1 * mx)).sqrt();
    CylinderFunction::from_values(2, n + 1, values)
}

/// ρ_n = Σ_{|x|=n} √μ([x]) e_x, normalized: the Fourier-like L²(μ) basis.
pub fn gibbs_rho(mu: &CylinderMeasure, n: usize) -> Result<CylinderFunction> {
    require_binary(mu.alphabet_size())?;
    if n == 0 {
        return Err(Error::InvalidArgument("rho needs n >= 1".to_string()));
    }
    if mu.depth() < n + 1 {
        return Err(Error::DepthMismatch {
            function: n + 1,
            data: mu.depth(),
        });
    }
    let coarse = mu.marginalize(n)?;
    let cells = cell_count(2, n)?;
    let mut sum: Option<CylinderFunction> = None;
    for i in 0..cells {
        let x = Word::from_index(2, n, i)?;
        let c = gibbs_haar_e(mu, &x)?.scale(coarse.weight_at(i).sqrt());
        sum = Some(match sum {
            None => c,
            Some(acc) => acc.add(&c)?,
        });
    }
    let rho = sum.unwrap();
    let fine = mu.marginalize(rho.depth())?;
    let norm = fine.integrate(&rho.mul(&rho)?)?.sqrt();
    Ok(rho.scale(1.0 / norm))
}

/// Kernel element 𝔞_x for a general Gibbs Jacobian: the Haar element
/// c_[0x] on the cylinder [0], transported to [1] with the −J(𝔖)/J factor.
pub fn kernel_frak_a(gibbs: &GibbsData, x: &Word) -> Result<CylinderFunction> {
    require_binary(gibbs.alphabet_size())?;
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "kernel elements need a nonempty word".to_string(),
        ));
    }
    let mu = gibbs.measure_at_depth(n + 2)?;
    let zero_x = x.prepend(0)?;
    let m0 = mu.weight_at(2 * word_index(&zero_x));
    let m1 = mu.weight_at(2 * word_index(&zero_x) + 1);
    let amp_plus = (m1 / m0).sqrt();
    let amp_minus = (m0 / m1).sqrt();

    let cells = cell_count(2, n + 2)?;
    // the [0]-side Haar bracket c_[0x]
    let mut zero_side = vec![0.0; cells];
    zero_side[2 * word_index(&zero_x)] = amp_plus;
    zero_side[2 * word_index(&zero_x) + 1] = -amp_minus;
    let zero_side = CylinderFunction::from_values(2, n + 2, zero_side)?;

    // the same bracket placed on [1x0], [1x1]
    let one_x = x.prepend(1)?;
    let mut bracket = vec![0.0; cells];
    bracket[2 * word_index(&one_x)] = amp_plus;
    bracket[2 * word_index(&one_x) + 1] = -amp_minus;
    let bracket = CylinderFunction::from_values(2, n + 2, bracket)?;

    let jac = gibbs.jacobian();
    let jac = jac.refine(jac.depth().max(1))?;
    let transported = jac
        .mirror_to_one()?
        .mul(&bracket)?
        .zip_with(&jac, |num, den| num / den)?;
    zero_side.sub(&transported)
}

/// ρ̂_n = Σ_{|x|=n} 𝔞_x, normalized: the Fourier-like kernel basis for a
/// general Gibbs Jacobian.
pub fn kernel_rho_hat(gibbs: &GibbsData, n: usize) -> Result<CylinderFunction> {
    require_binary(gibbs.alphabet_size())?;
    if n == 0 {
        return Err(Error::InvalidArgument("rho-hat needs n >= 1".to_string()));
    }
    let cells = cell_count(2, n)?;
    let mut sum: Option<CylinderFunction> = None;
    for i in 0..cells {
        let x = Word::from_index(2, n, i)?;
        let a = kernel_frak_a(gibbs, &x)?;
        sum = Some(match sum {
            None => a,
            Some(acc) => acc.add(&a)?,
        });
    }
    let rho = sum.unwrap();
    let mu = gibbs.measure_at_depth(rho.depth())?;
    let norm = mu.integrate(&rho.mul(&rho)?)?.sqrt();
    Ok(rho.scale(1.0 / norm))
}

/// α_n: +1 on cylinders with even lexicographic index, −1 on odd ones
/// (equivalently (−1)^{x_n}); orthogonal to the kernel of ℒ_{−log 2}.
pub fn maxent_alpha(n: usize) -> Result<CylinderFunction> {
    if n < 2 {
        return Err(Error::InvalidArgument("alpha needs n >= 2".to_string()));
    }
    let cells = cell_count(2, n)?;
    let values = (0..cells)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    CylinderFunction::from_values(2, n, values)
}

/// β_n: equal to α_n on [0] and to −α_n∘𝔖 on [1]; β₁ = 1_[0] − 1_[1].
/// All β_n lie in the kernel of ℒ_{−log 2}.
pub fn maxent_beta(n: usize) -> Result<CylinderFunction> {
    if n == 0 {
        return Err(Error::InvalidArgument("beta needs n >= 1".to_string()));
    }
    if n == 1 {
        return CylinderFunction::from_values(2, 1, vec![1.0, -1.0]);
    }
    let cells = cell_count(2, n)?;
    let values = (0..cells)
        .map(|i| {
            let x1 = i >> (n - 1);
            let xn = i & 1;
            if (x1 + xn) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    CylinderFunction::from_values(2, n, values)
}

/// One materialised basis element with its verification numbers.
#[derive(Debug, Clone, Serialize)]
pub struct BasisElement {
    pub label: String,
    pub depth: usize,
    #[serde(skip)]
    pub function: CylinderFunction,
    pub c0_norm: f64,
    pub l2_norm: f64,
    pub kernel_residual: Option<f64>,
}

/// Per-family norm bounds over the materialised prefix.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub c0_min: f64,
    pub c0_max: f64,
    pub l2_min: f64,
    pub l2_max: f64,
}

/// A materialised basis-family prefix plus the measure it is verified
/// against.
#[derive(Debug, Clone)]
pub struct BasisFamily {
    pub kind: BasisKind,
    pub elements: Vec<BasisElement>,
    pub measure: CylinderMeasure,
}

/// Context a family is built from.
pub enum BasisSource<'a> {
    Markov(&'a MarkovGibbs),
    Gibbs(&'a GibbsData),
    MaxEnt,
}

/// Materialise a family prefix: aggregate kinds (γ_n, ρ_n, ρ̂_n, α_n, β_n)
/// up to index `n_max`, word-indexed kinds over all words of length ≤ n_max.
pub fn build_family(kind: BasisKind, source: &BasisSource, n_max: usize) -> Result<BasisFamily> {
    let mut raw: Vec<(String, CylinderFunction)> = Vec::new();
    match (kind, source) {
        (BasisKind::MarkovE | BasisKind::MarkovA | BasisKind::MarkovB, BasisSource::Markov(m)) => {
            for n in 1..=n_max {
                let cells = cell_count(2, n)?;
                for i in 0..cells {
                    let x = Word::from_index(2, n, i)?;
                    let f = match kind {
                        BasisKind::MarkovE => markov_haar_e(m, &x)?,
                        BasisKind::MarkovA => markov_kernel_a(m, &x)?,
                        _ => markov_kernel_b(m, &x)?,
                    };
                    raw.push((format!("{:?}", x.symbols()), f));
                }
            }
        }
        (BasisKind::MarkovGamma, BasisSource::Markov(m)) => {
            for n in 1..=n_max {
                raw.push((format!("gamma_{n}"), markov_gamma(m, n)?));
            }
        }
        (BasisKind::GibbsE, BasisSource::Gibbs(g)) => {
            let mu = g.measure_at_depth(n_max + 1)?;
            for n in 1..=n_max {
                let cells = cell_count(2, n)?;
                for i in 0..cells {
                    let x = Word::from_index(2, n, i)?;
                    raw.push((format!("{:?}", x.symbols()), gibbs_haar_e(&mu, &x)?));
                }
            }
        }
        (BasisKind::GibbsRho, BasisSource::Gibbs(g)) => {
            let mu = g.measure_at_depth(n_max + 1)?;
            for n in 1..=n_max {
                raw.push((format!("rho_{n}"), gibbs_rho(&mu, n)?));
            }
        }
        (BasisKind::KernelFrakA, BasisSource::Gibbs(g)) => {
            for n in 1..=n_max {
                let cells = cell_count(2, n)?;
                for i in 0..cells {
                    let x = Word::from_index(2, n, i)?;
                    raw.push((format!("{:?}", x.symbols()), kernel_frak_a(g, &x)?));
                }
            }
        }
        (BasisKind::KernelRhoHat, BasisSource::Gibbs(g)) => {
            for n in 1..=n_max {
                raw.push((format!("rho_hat_{n}"), kernel_rho_hat(g, n)?));
            }
        }
        (BasisKind::MaxentAlpha, BasisSource::MaxEnt) => {
            for n in 2..=n_max.max(2) {
                raw.push((format!("alpha_{n}"), maxent_alpha(n)?));
            }
        }
        (BasisKind::MaxentBeta, BasisSource::MaxEnt) => {
            for n in 1..=n_max {
                raw.push((format!("beta_{n}"), maxent_beta(n)?));
            }
        }
        _ => {
            return Err(Error::InvalidArgument(
                "basis kind does not match the supplied source".to_string(),
            ))
        }
    }

    let max_depth = raw.iter().map(|(_, f)| f.depth()).max().unwrap_or(1);
    let measure = match source {
        BasisSource::Markov(m) => m.cylinder_measure(max_depth.max(2))?,
        BasisSource::Gibbs(g) => g.measure_at_depth(max_depth)?,
        BasisSource::MaxEnt => CylinderMeasure::uniform(2, max_depth)?,
    };
    let potential = match source {
        BasisSource::Markov(m) => Some(m.log_jacobian().function().clone()),
        BasisSource::Gibbs(g) => Some(g.normalized_potential().clone()),
        BasisSource::MaxEnt => Some(CylinderFunction::constant(2, -(2.0f64.ln()))?),
    };

    let mut elements = Vec::with_capacity(raw.len());
    for (label, f) in raw {
        let l2 = measure.integrate(&f.mul(&f)?)?.sqrt();
        let kernel_residual = if kind.is_kernel() {
            let pot = potential.as_ref().unwrap();
            let k_eval = f.depth().max(pot.depth()).max(2) - 1;
            Some(apply_ruelle(pot, &f, k_eval)?.sup_norm())
        } else {
            None
        };
        elements.push(BasisElement {
            label,
            depth: f.depth(),
            c0_norm: f.sup_norm(),
            l2_norm: l2,
            kernel_residual,
            function: f,
        });
    }
    Ok(BasisFamily {
        kind,
        elements,
        measure,
    })
}

impl BasisFamily {
    /// Gram matrix of the family in L²(μ).
    pub fn gram(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.elements.len();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let prod = self.elements[i]
                    .function
                    .mul(&self.elements[j].function)?;
                let v = self.measure.integrate(&prod)?;
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        Ok(g)
    }

    /// (max |off-diagonal|, max |diagonal − 1|) of the Gram matrix.
    pub fn gram_defects(&self) -> Result<(f64, f64)> {
        let g = self.gram()?;
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i == j {
                    diag = diag.max((v - 1.0).abs());
                } else {
                    off = off.max(v.abs());
                }
            }
        }
        Ok((off, diag))
    }

    /// Largest transfer-operator residual over the family (kernel kinds).
    pub fn max_kernel_residual(&self) -> f64 {
        self.elements
            .iter()
            .filter_map(|e| e.kernel_residual)
            .fold(0.0, f64::max)
    }

    pub fn bounds(&self) -> BoundsReport {
        let mut r = BoundsReport {
            c0_min: f64::INFINITY,
            c0_max: 0.0,
            l2_min: f64::INFINITY,
            l2_max: 0.0,
        };
        for e in &self.elements {
            r.c0_min = r.c0_min.min(e.c0_norm);
            r.c0_max = r.c0_max.max(e.c0_norm);
            r.l2_min = r.l2_min.min(e.l2_norm);
            r.l2_max = r.l2_max.max(e.l2_norm);
        }
        r
    }

    /// ⟨fᵢ, g_j⟩ across two families sharing a measure.
    pub fn cross_gram(&self, other: &BasisFamily) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![vec![0.0; other.elements.len()]; self.elements.len()];
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in other.elements.iter().enumerate() {
                let prod = a.function.mul(&b.function)?;
                out[i][j] = self.measure.integrate(&prod)?;
            }
        }
        Ok(out)
    }
}

/// Bowen-ratio summary for one depth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BowenDepthReport {
    pub depth: usize,
    /// min over cylinders of μ[x] / Π_{j<n} J(σʲ y) with y the
    /// lexicographic-minimal point of [x].
    pub k1_hat: f64,
    pub k2_hat: f64,
    /// extremes of the sibling ratios μ[x0]/μ[x1] at this depth.
    pub ratio01_min: f64,
    pub ratio01_max: f64,
}

/// Evaluate the Bowen bounds for every requested depth.
pub fn bowen_ratio_check(
    gibbs: &GibbsData,
    depths: impl IntoIterator<Item = usize>,
) -> Result<Vec<BowenDepthReport>> {
    require_binary(gibbs.alphabet_size())?;
    let jac = gibbs.jacobian();
    let p = jac.depth();
    let mut out = Vec::new();
    for n in depths {
        if n == 0 {
            return Err(Error::InvalidArgument("bowen depth >= 1".to_string()));
        }
        let mu = gibbs.measure_at_depth(n)?;
        let fine = gibbs.measure_at_depth(n + 1)?;
        let cells = cell_count(2, n)?;
        let mut k1 = f64::INFINITY;
        let mut k2 = 0.0f64;
        let mut r_min = f64::INFINITY;
        let mut r_max = 0.0f64;
        for i in 0..cells {
            let word = Word::from_index(2, n, i)?;
            // Birkhoff product of J along the zero-padded representative
            let mut padded: Vec<u8> = word.symbols().to_vec();
            padded.extend(std::iter::repeat(0).take(p));
            let mut product = 1.0;
            for j in 0..n {
                let end = (j + p).min(padded.len());
                let w = Word::new(2, padded[j..end].to_vec())?;
                product *= jac.eval(&w)?;
            }
            let ratio = mu.weight_at(i) / product;
            k1 = k1.min(ratio);
            k2 = k2.max(ratio);
            let sibling = fine.weight_at(2 * i) / fine.weight_at(2 * i + 1);
            r_min = r_min.min(sibling);
            r_max = r_max.max(sibling);
        }
        out.push(BowenDepthReport {
            depth: n,
            k1_hat: k1,
            k2_hat: k2,
            ratio01_min: r_min,
            ratio01_max: r_max,
        });
    }
    Ok(out)
}

/// Both sides of the change-of-variables identities.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChangeOfVariablesReport {
    /// ∫_{[0]} f dμ vs ∫ f(τ₀·) J(τ₀·) dμ.
    pub tau0: (f64, f64),
    /// ∫_{[1]} f dμ vs ∫ f(τ₁·) J(τ₁·) dμ.
    pub tau1: (f64, f64),
    /// ∫_{[0]} f dμ vs ∫_{[1]} J(𝔖) f(𝔖)/J dμ.
    pub mirror: (f64, f64),
}

/// Evaluate the τ₀/τ₁ Radon–Nikodym identities and the 𝔖-transport
/// identity for a function f (its values on the relevant cylinder are
/// what matters).
pub fn change_of_variables_check(
    gibbs: &GibbsData,
    f: &CylinderFunction,
) -> Result<ChangeOfVariablesReport> {
    require_binary(gibbs.alphabet_size())?;
    let jac = gibbs.jacobian();
    let depth = f.depth().max(jac.depth()).max(1);
    let f = f.refine(depth)?;
    let jac = jac.refine(depth)?;
    let half = f.values().len() / 2;

    // restrictions to [0] and [1]
    let ind0: Vec<f64> = (0..f.values().len())
        .map(|i| if i < half { f.value_at(i) } else { 0.0 })
        .collect();
    let ind1: Vec<f64> = (0..f.values().len())
        .map(|i| if i >= half { f.value_at(i) } else { 0.0 })
        .collect();
    let f0 = CylinderFunction::from_values(2, depth, ind0)?;
    let f1 = CylinderFunction::from_values(2, depth, ind1)?;

    // composition with the inverse branches: (g∘τ_a)(y) = g(a·y) is the
    // corresponding half of the value table read at depth-1 shallower
    let compose_tau = |g: &CylinderFunction, a: usize| -> Result<CylinderFunction> {
        let vals = g.values();
        let h = vals.len() / 2;
        CylinderFunction::from_values(2, depth - 1, vals[a * h..(a + 1) * h].to_vec())
    };

    let lhs0 = gibbs.integrate(&f0)?;
    let rhs0 = gibbs.integrate(&compose_tau(&f, 0)?.mul(&compose_tau(&jac, 0)?)?)?;
    let lhs1 = gibbs.integrate(&f1)?;
    let rhs1 = gibbs.integrate(&compose_tau(&f, 1)?.mul(&compose_tau(&jac, 1)?)?)?;

    let transported = jac
        .mirror_to_one()?
        .mul(&f0.mirror_to_one()?)?
        .zip_with(&jac, |num, den| num / den)?;
    let rhs_mirror = gibbs.integrate(&transported)?;

    Ok(ChangeOfVariablesReport {
        tau0: (lhs0, rhs0),
        tau1: (lhs1, rhs1),
        mirror: (lhs0, rhs_mirror),
    })
}

/// Numerical σ-algebra generation probe: weighted least squares of every
/// depth-`target_depth` cylinder indicator on the monomials (up to
/// `max_degree`) of the family elements that fit inside `probe_depth`.
/// Returns the worst weighted-L² residual.
pub fn generation_probe(
    family: &BasisFamily,
    probe_depth: usize,
    target_depth: usize,
    max_degree: usize,
) -> Result<f64> {
    let elements: Vec<&CylinderFunction> = family
        .elements
        .iter()
        .filter(|e| e.depth <= probe_depth)
        .map(|e| &e.function)
        .collect();
    if elements.is_empty() {
        return Err(Error::InvalidArgument(
            "no family elements fit inside the probe depth".to_string(),
        ));
    }
    let cells = cell_count(2, probe_depth)?;
    let mu = family.measure.marginalize(probe_depth)?;
    let sqrt_w: Vec<f64> = mu.weights().iter().map(|w| w.sqrt()).collect();

    // monomial features: constant + all multisets of elements up to degree
    let mut features: Vec<Vec<f64>> = vec![vec![1.0; cells]];
    let refined: Vec<Vec<f64>> = elements
        .iter()
        .map(|f| Ok(f.refine(probe_depth)?.values().to_vec()))
        .collect::<Result<_>>()?;
    let mut stack: Vec<(usize, Vec<f64>)> = vec![(0, vec![1.0; cells])];
    for _ in 0..max_degree {
        let mut next = Vec::new();
        for (start, vals) in &stack {
            for (e, rv) in refined.iter().enumerate().skip(*start) {
                let prod: Vec<f64> = vals.iter().zip(rv).map(|(a, b)| a * b).collect();
                features.push(prod.clone());
                next.push((e, prod));
            }
        }
        stack = next;
    }

    let rows = cells;
    let cols = features.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(rows, cols);
    for (j, feat) in features.iter().enumerate() {
        for i in 0..rows {
            m[(i, j)] = feat[i] * sqrt_w[i];
        }
    }
    let svd = m.svd(true, true);

    let block = cell_count(2, probe_depth - target_depth)?;
    let mut worst = 0.0f64;
    for c in 0..cell_count(2, target_depth)? {
        let mut b = nalgebra::DVector::<f64>::zeros(rows);
        for i in 0..rows {
            if i / block == c {
                b[i] = sqrt_w[i];
            }
        }
        let coef = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::Internal(format!("least squares failed: {e}")))?;
        let mut residual = 0.0;
        for i in 0..rows {
            let mut fit = 0.0;
            for (j, feat) in features.iter().enumerate() {
                fit += feat[i] * sqrt_w[i] * coef[j];
            }
            residual += (fit - b[i]) * (fit - b[i]);
        }
        worst = worst.max(residual.sqrt());
    }
    Ok(worst)
}
