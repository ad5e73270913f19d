//! Closed-form Gibbs objects for stationary Markov chains: stationary
//! vectors, depth-2 Jacobian potentials, cylinder measures, entropy and
//! KL divergence. This is the exact oracle layer for everything else.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symbolic::{cell_count, CylinderFunction, CylinderMeasure};
use crate::transfer::{normalization_residual, GibbsData, Potential};

/// Row-stochastic matrix with strictly positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size < 2 {
            return Err(Error::AlphabetTooSmall(size));
        }
        let mut entries = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::LengthMismatch {
                    got: row.len(),
                    expected: size,
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-14 {
                return Err(Error::NotStochastic { row: i, sum });
            }
            for &p in row {
                if p <= 0.0 || p >= 1.0 {
                    return Err(Error::NonPositive {
                        context: "transition probability in (0,1)",
                        value: p,
                    });
                }
                entries.push(p);
            }
        }
        Ok(StochasticMatrix { size, entries })
    }

    /// The (r,s) chart of binary chains: P = [[r, 1−r], [1−s, s]].
    pub fn from_rs(r: f64, s: f64) -> Result<Self> {
        StochasticMatrix::new(vec![vec![r, 1.0 - r], vec![1.0 - s, s]])
    }

    /// A Bernoulli (i.i.d.) chain: every row equals `p`.
    pub fn bernoulli(p: &[f64]) -> Result<Self> {
        StochasticMatrix::new(vec![p.to_vec(); p.len()])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }
}

/// Stationary probability vector: πP = π, Σπ = 1.
pub fn stationary_vector(p: &StochasticMatrix) -> Result<Vec<f64>> {
    let d = p.size();
    // solve (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = p.entry(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..d {
        m[(d - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(d);
    rhs[d - 1] = 1.0;
    let pi = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("singular stationary system".to_string()))?;
    Ok(pi.iter().copied().collect())
}

/// A Markov chain with its Gibbs data in closed form.
#[derive(Debug, Clone)]
pub struct MarkovGibbs {
    matrix: StochasticMatrix,
    stationary: Vec<f64>,
    log_jacobian: Potential,
}

impl MarkovGibbs {
    pub fn new(matrix: StochasticMatrix) -> Result<Self> {
        let d = matrix.size();
        let pi = stationary_vector(&matrix)?;
        // J on the cylinder [x₁,x₂] is π_{x₁} P_{x₁x₂} / π_{x₂}; for d = 2
        // detailed balance makes this the paper's transposed entry P_{x₂,x₁}.
        let mut values = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                values[i * d + j] = (pi[i] * matrix.entry(i, j) / pi[j]).ln();
            }
        }
        let f = CylinderFunction::from_values(d, 2, values)?;
        if d == 2 {
            for i in 0..2 {
                for j in 0..2 {
                    let gap = (f.value_at(i * 2 + j).exp() - matrix.entry(j, i)).abs();
                    if gap > 1e-13 {
                        return Err(Error::Internal(format!(
                            "binary detailed balance violated: |J - P^T| = {gap}"
                        )));
                    }
                }
            }
        }
        let residual = normalization_residual(&f, 2)?;
        if residual > 1e-13 {
            return Err(Error::Internal(format!(
                "Markov Jacobian failed L1 = 1: residual {residual}"
            )));
        }
        let log_jacobian = Potential::normalized(f, 2)?;
        Ok(MarkovGibbs {
            matrix,
            stationary: pi,
            log_jacobian,
        })
    }

    pub fn from_rs(r: f64, s: f64) -> Result<Self> {
        MarkovGibbs::new(StochasticMatrix::from_rs(r, s)?)
    }

    pub fn matrix(&self) -> &StochasticMatrix {
        &self.matrix
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// The normalized potential log J (depth 2).
    pub fn log_jacobian(&self) -> &Potential {
        &self.log_jacobian
    }

    pub fn alphabet_size(&self) -> usize {
        self.matrix.size()
    }

    /// μ[x₁…x_n] = π_{x₁} P_{x₁x₂} … P_{x_{n−1}x_n}.
    pub fn cylinder_measure(&self, depth: usize) -> Result<CylinderMeasure> {
        if depth == 0 {
            return Err(Error::InvalidArgument(
                "cylinder measure needs depth >= 1".to_string(),
            ));
        }
        let d = self.alphabet_size();
        cell_count(d, depth)?;
        // build by depth recursion: μ_{m+1}[w·a] = μ_m[w] · P_{w_m, a}
        let mut weights: Vec<f64> = self.stationary.clone();
        let mut last_symbol: Vec<usize> = (0..d).collect();
        for _ in 1..depth {
            let mut next = Vec::with_capacity(weights.len() * d);
            let mut next_last = Vec::with_capacity(weights.len() * d);
            for (w, &ls) in weights.iter().zip(&last_symbol) {
                for a in 0..d {
                    next.push(w * self.matrix.entry(ls, a));
                    next_last.push(a);
                }
            }
            weights = next;
            last_symbol = next_last;
        }
        CylinderMeasure::from_weights(d, depth, weights)
    }

    /// −Σ_{r,s} π_r P_{rs} log P_{rs}.
    pub fn entropy(&self) -> f64 {
        let d = self.alphabet_size();
        let mut h = 0.0;
        for i in 0..d {
            for j in 0..d {
                let p = self.matrix.entry(i, j);
                h -= self.stationary[i] * p * p.ln();
            }
        }
        h
    }

    /// D_KL(μ_self | μ_other) = Σ over depth-2 cylinders of
    /// μ[x] (log J_self[x] − log J_other[x]).
    pub fn kl(&self, other: &MarkovGibbs) -> Result<f64> {
        let d = self.alphabet_size();
        if other.alphabet_size() != d {
            return Err(Error::AlphabetMismatch(d, other.alphabet_size()));
        }
        let mu = self.cylinder_measure(2)?;
        let diff = self
            .log_jacobian
            .function()
            .sub(other.log_jacobian.function())?;
        mu.integrate(&diff)
    }

    /// Exact Gibbs eigendata at a working depth, bypassing power iteration:
    /// λ = 1, h ≡ 1, ν = μ = the product-formula measure.
    pub fn exact_gibbs_data(&self, working_depth: usize) -> Result<GibbsData> {
        let d = self.alphabet_size();
        let mu = self.cylinder_measure(working_depth.max(2))?;
        let mu = if working_depth >= 2 {
            mu
        } else {
            mu.marginalize(working_depth)?
        };
        let h = CylinderFunction::constant(d, 1.0)?;
        let residual = normalization_residual(self.log_jacobian.function(), working_depth.max(1))?;
        Ok(GibbsData::from_parts(
            mu.depth(),
            1.0,
            h,
            mu.clone(),
            mu,
            self.log_jacobian.function().clone(),
            residual,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::{leading_eigendata, tol, MAX_POWER_ITER};

    #[test]
    fn stationary_examples() {
        // r = s → (1/2, 1/2)
        let p = StochasticMatrix::from_rs(0.3, 0.3).unwrap();
        let pi = stationary_vector(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-14);

        // Bernoulli rows → π = the common row
        let p = StochasticMatrix::bernoulli(&[0.2, 0.5, 0.3]).unwrap();
        let pi = stationary_vector(&p).unwrap();
        assert!((pi[0] - 0.2).abs() < 1e-14);
        assert!((pi[1] - 0.5).abs() < 1e-14);

        // MaMa μ₁ matches the 2-state closed form
        let p = StochasticMatrix::from_rs(0.15, 0.92).unwrap();
        let pi = stationary_vector(&p).unwrap();
        let expect0 = (1.0 - 0.92) / (2.0 - 0.15 - 0.92);
        assert!((pi[0] - expect0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_examples() {
        // Bernoulli: J(x₁,…) = p_{x₁}
        let m = MarkovGibbs::new(StochasticMatrix::bernoulli(&[0.3, 0.7]).unwrap()).unwrap();
        let j = m.log_jacobian().jacobian();
        assert!((j.value_at(0) - 0.3).abs() < 1e-14);
        assert!((j.value_at(1) - 0.3).abs() < 1e-14);
        assert!((j.value_at(2) - 0.7).abs() < 1e-14);

        // binary: J on [i,j] equals P_{j,i}
        let m = MarkovGibbs::from_rs(0.2, 0.2).unwrap();
        let j = m.log_jacobian().jacobian();
        for i in 0..2 {
            for jj in 0..2 {
                assert!((j.value_at(i * 2 + jj) - m.matrix().entry(jj, i)).abs() < 1e-14);
            }
        }

        // symmetric P: J(x₁,x₂) = P_{x₁x₂}
        let m = MarkovGibbs::from_rs(0.4, 0.4).unwrap();
        let j = m.log_jacobian().jacobian();
        for i in 0..2 {
            for jj in 0..2 {
                assert!((j.value_at(i * 2 + jj) - m.matrix().entry(i, jj)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cylinder_measure_examples() {
        let m = MarkovGibbs::from_rs(0.15, 0.92).unwrap();
        let mu1 = m.cylinder_measure(1).unwrap();
        assert!((mu1.weight_at(0) - m.stationary()[0]).abs() < 1e-15);

        // refinement consistency is exact
        let mu5 = m.cylinder_measure(5).unwrap();
        let mu4 = m.cylinder_measure(4).unwrap();
        assert!(mu4.refinement_error(&mu5).unwrap() < 1e-15);
    }

    #[test]
    fn eigen_oracle_equivalence() {
        // power-iteration measure matches the product formula at depth 8
        for &(r, s) in &[(0.2, 0.2), (0.15, 0.92), (0.9, 0.12)] {
            let m = MarkovGibbs::from_rs(r, s).unwrap();
            let data =
                leading_eigendata(m.log_jacobian().function(), 8, tol::EIGEN, MAX_POWER_ITER)
                    .unwrap();
            assert!((data.eigenvalue() - 1.0).abs() < 1e-12);
            let exact = m.cylinder_measure(8).unwrap();
            let worst = data
                .measure()
                .weights()
                .iter()
                .zip(exact.weights())
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            assert!(worst < 1e-12, "measure mismatch {worst}");
        }
    }

    #[test]
    fn entropy_examples() {
        let m = MarkovGibbs::new(StochasticMatrix::bernoulli(&[0.5, 0.5]).unwrap()).unwrap();
        assert!((m.entropy() - 2.0f64.ln()).abs() < 1e-15);

        let m = MarkovGibbs::from_rs(0.2, 0.2).unwrap();
        let expect = -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        assert!((m.entropy() - expect).abs() < 1e-14);

        // equals −∫ log J dμ and the transfer-module entropy
        let data = m.exact_gibbs_data(6).unwrap();
        assert!((m.entropy() - data.entropy().unwrap()).abs() < 1e-12);
        let eig = leading_eigendata(m.log_jacobian().function(), 6, tol::EIGEN, MAX_POWER_ITER)
            .unwrap();
        assert!((m.entropy() - eig.entropy().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounds_on_random_chains() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.05 + 0.9 * ((seed >> 11) as f64 / (1u64 << 53) as f64)
        };
        for _ in 0..50 {
            let m = MarkovGibbs::from_rs(next(), next()).unwrap();
            let h = m.entropy();
            assert!(h >= 0.0 && h <= 2.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let m0 = MarkovGibbs::from_rs(0.2, 0.2).unwrap();
        assert!(m0.kl(&m0).unwrap().abs() < 1e-15);

        // Bernoulli pair reduces to the classical marginal KL
        let b0 = MarkovGibbs::new(StochasticMatrix::bernoulli(&[0.3, 0.7]).unwrap()).unwrap();
        let b1 = MarkovGibbs::new(StochasticMatrix::bernoulli(&[0.6, 0.4]).unwrap()).unwrap();
        let classical = 0.3f64 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
        assert!((b0.kl(&b1).unwrap() - classical).abs() < 1e-14);

        // asymmetry
        let m1 = MarkovGibbs::from_rs(0.15, 0.92).unwrap();
        assert!((m0.kl(&m1).unwrap() - m1.kl(&m0).unwrap()).abs() > 1e-3);

        // nonnegativity on a grid
        for &(r, s) in &[(0.1, 0.4), (0.6, 0.3), (0.85, 0.7)] {
            let a = MarkovGibbs::from_rs(r, s).unwrap();
            let b = MarkovGibbs::from_rs(s, r).unwrap();
            assert!(a.kl(&b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mama_defect_value() {
        // ∫(log J₁ − log J₀)dμ₀ + ∫(log J₀ − log J₁)dμ₂ = −0.3578
        let m0 = MarkovGibbs::from_rs(0.2, 0.2).unwrap();
        let m1 = MarkovGibbs::from_rs(0.15, 0.92).unwrap();
        let m2 = MarkovGibbs::from_rs(0.9, 0.12).unwrap();
        let diff01 = m1
            .log_jacobian()
            .function()
            .sub(m0.log_jacobian().function())
            .unwrap();
        let term0 = m0.cylinder_measure(2).unwrap().integrate(&diff01).unwrap();
        let term2 = m2
            .cylinder_measure(2)
            .unwrap()
            .integrate(&diff01.scale(-1.0))
            .unwrap();
        let defect = term0 + term2;
        assert!((defect + 0.3578).abs() < 5e-4, "defect {defect}");
        // frozen oracle value from the closed-form evaluation
        assert!((defect + 0.357820186587).abs() < 1e-10);
    }

    #[test]
    fn detailed_balance_identity_on_rs_grid() {
        for &r in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &s in &[0.15, 0.35, 0.55, 0.75, 0.95] {
                let m = MarkovGibbs::from_rs(r, s).unwrap();
                let pi = m.stationary();
                for x1 in 0..2 {
                    for x2 in 0..2 {
                        let lhs = pi[x1] * m.matrix().entry(x1, x2) / pi[x2];
                        let rhs = m.matrix().entry(x2, x1);
                        assert!((lhs - rhs).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_matrices() {
        assert!(StochasticMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).is_err());
    }
}
