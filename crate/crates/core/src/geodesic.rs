//! Geodesic integration: the closed-form Christoffel system on the (r,s)
//! Markov surface, numerically-computed geodesics on finite-dimensional
//! submanifold charts of the manifold of normalized potentials,
//! boundary-value shooting, and the Leibniz-rule / normalization-derivative
//! probes.
//!
//! The submanifold machinery is self-validating: the chart metric is
//! assembled from finite differences of the normalization map Π, and on a
//! Markov chart it can be cross-checked against the exact pullback metric
//! [`markov_surface_metric`] through the coordinate change.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::symbolic::CylinderFunction;
use crate::transfer::{
    apply_ruelle, leading_eigendata, tol, GibbsData, Potential, MAX_POWER_ITER,
};

/// Paths stop this far from the boundary of the open square.
pub const DOMAIN_MARGIN: f64 = 1e-6;

fn inside_domain(r: f64, s: f64) -> bool {
    r > DOMAIN_MARGIN && r < 1.0 - DOMAIN_MARGIN && s > DOMAIN_MARGIN && s < 1.0 - DOMAIN_MARGIN
}

/// The closed-form Christoffel pair (Γ¹₁₁, Γ²₂₂) of the Markov surface at
/// (r, s); Γ²₂₂ is Γ¹₁₁ under the coordinate swap.
pub fn christoffel(r: f64, s: f64) -> Result<(f64, f64)> {
    if !inside_domain(r, s) {
        return Err(Error::DomainExit { r, s });
    }
    let gamma = |u: f64, v: f64| -> Result<f64> {
        let radicand = -((u - 1.0) * u * (v - 1.0).powi(3)) / (u + v - 2.0).powi(3);
        if radicand <= 0.0 {
            return Err(Error::NonPositive {
                context: "christoffel radicand",
                value: radicand,
            });
        }
        Ok(-((2.0 * u - 1.0) * (v - 1.0)) / (2.0 * (u + v - 2.0)) / radicand.sqrt())
    };
    Ok((gamma(r, s)?, gamma(s, r)?))
}

/// Exact pullback of the asymptotic-variance metric to (r,s) coordinates:
/// g = diag(π₀/(r(1−r)), π₁/(s(1−s))). The coordinate fields ∂_r A, ∂_s A
/// are kernel elements with disjoint supports, so the metric is diagonal
/// and the Green–Kubo cross terms vanish.
pub fn markov_surface_metric(r: f64, s: f64) -> Result<(f64, f64)> {
    if !inside_domain(r, s) {
        return Err(Error::DomainExit { r, s });
    }
    let pi0 = (1.0 - s) / (2.0 - r - s);
    let pi1 = (1.0 - r) / (2.0 - r - s);
    Ok((pi0 / (r * (1.0 - r)), pi1 / (s * (1.0 - s))))
}

/// Position and velocity on the (r,s) surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeodesicState {
    pub r: f64,
    pub s: f64,
    pub dr: f64,
    pub ds: f64,
}

impl GeodesicState {
    pub fn new(r: f64, s: f64, dr: f64, ds: f64) -> Result<Self> {
        if !inside_domain(r, s) {
            return Err(Error::DomainExit { r, s });
        }
        if !(dr.is_finite() && ds.is_finite()) {
            return Err(Error::InvalidArgument("non-finite velocity".to_string()));
        }
        Ok(GeodesicState { r, s, dr, ds })
    }

    /// Rescale the velocity to unit norm in the exact surface metric.
    pub fn unit_speed(mut self) -> Result<Self> {
        let (grr, gss) = markov_surface_metric(self.r, self.s)?;
        let norm = (grr * self.dr * self.dr + gss * self.ds * self.ds).sqrt();
        if norm == 0.0 {
            return Ok(self);
        }
        self.dr /= norm;
        self.ds /= norm;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExitReason {
    Completed,
    DomainExit,
}

/// One sample of a Markov-surface path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarkovPathPoint {
    pub t: f64,
    pub r: f64,
    pub s: f64,
    pub dr: f64,
    pub ds: f64,
    /// g(γ′, γ′) in the exact surface metric.
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovPath {
    pub points: Vec<MarkovPathPoint>,
    pub exit: ExitReason,
    /// Largest step-halving error estimate accepted along the path.
    pub max_step_error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MarkovIntegrationOptions {
    /// Per-step error tolerance for the halving estimate.
    pub step_tol: f64,
    pub min_step: f64,
    /// Rescale the initial velocity to unit metric norm.
    pub unit_speed: bool,
}

impl Default for MarkovIntegrationOptions {
    fn default() -> Self {
        MarkovIntegrationOptions {
            step_tol: 1e-9,
            min_step: 1e-7,
            unit_speed: true,
        }
    }
}

type State4 = [f64; 4];

fn markov_rhs(y: &State4) -> Result<State4> {
    let (g1, g2) = christoffel(y[0], y[1])?;
    Ok([y[2], y[3], g1 * y[2] * y[2], g2 * y[3] * y[3]])
}

fn rk4_step(y: &State4, h: f64, rhs: &impl Fn(&State4) -> Result<State4>) -> Result<State4> {
    let k1 = rhs(y)?;
    let mut y2 = *y;
    for i in 0..4 {
        y2[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = rhs(&y2)?;
    for i in 0..4 {
        y2[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = rhs(&y2)?;
    for i in 0..4 {
        y2[i] = y[i] + h * k3[i];
    }
    let k4 = rhs(&y2)?;
    let mut out = *y;
    for i in 0..4 {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Integrate the closed-form system d²u/dt² = Γ(u)(du/dt)² by classical
/// RK4 with a step-halving error estimate; leaving the ε-interior of the
/// square ends the path cleanly with `ExitReason::DomainExit`.
pub fn integrate_markov_geodesic(
    state: GeodesicState,
    t_max: f64,
    step: f64,
    opts: MarkovIntegrationOptions,
) -> Result<MarkovPath> {
    if !(t_max > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidArgument(
            "t_max and step must be positive".to_string(),
        ));
    }
    let state = if opts.unit_speed {
        state.unit_speed()?
    } else {
        state
    };
    let mut y: State4 = [state.r, state.s, state.dr, state.ds];
    let mut t = 0.0;
    let mut h = step;
    let mut max_err = 0.0f64;
    let mut points = Vec::new();
    let record = |points: &mut Vec<MarkovPathPoint>, t: f64, y: &State4| -> Result<()> {
        let (grr, gss) = markov_surface_metric(y[0], y[1])?;
        points.push(MarkovPathPoint {
            t,
            r: y[0],
            s: y[1],
            dr: y[2],
            ds: y[3],
            energy: grr * y[2] * y[2] + gss * y[3] * y[3],
        });
        Ok(())
    };
    record(&mut points, t, &y)?;

    while t < t_max - 1e-12 {
        let h_now = h.min(t_max - t);
        // one full step vs two half steps; domain violations end the path
        let attempt = (|| -> Result<(State4, f64)> {
            let full = rk4_step(&y, h_now, &markov_rhs)?;
            let half = rk4_step(&y, 0.5 * h_now, &markov_rhs)?;
            let fine = rk4_step(&half, 0.5 * h_now, &markov_rhs)?;
            let err = (0..4).fold(0.0f64, |m, i| m.max((full[i] - fine[i]).abs()));
            Ok((fine, err))
        })();
        match attempt {
            Err(Error::DomainExit { .. }) | Err(Error::NonPositive { .. }) => {
                return Ok(MarkovPath {
                    points,
                    exit: ExitReason::DomainExit,
                    max_step_error: max_err,
                });
            }
            Err(e) => return Err(e),
            Ok((next, err)) => {
                if err > opts.step_tol {
                    h *= 0.5;
                    if h < opts.min_step {
                        return Err(Error::StepUnderflow {
                            estimate: err,
                            tol: opts.step_tol,
                        });
                    }
                    continue;
                }
                if !inside_domain(next[0], next[1]) {
                    return Ok(MarkovPath {
                        points,
                        exit: ExitReason::DomainExit,
                        max_step_error: max_err,
                    });
                }
                max_err = max_err.max(err);
                t += h_now;
                y = next;
                record(&mut points, t, &y)?;
            }
        }
    }
    Ok(MarkovPath {
        points,
        exit: ExitReason::Completed,
        max_step_error: max_err,
    })
}

/// A chart of the m-dimensional submanifold Π(A₀ + Σ tᵢ ēᵢ): a normalized
/// base potential and an orthonormal kernel basis, with the steps of the
/// finite-difference machinery.
#[derive(Debug, Clone)]
pub struct SubmanifoldChart {
    base: Potential,
    basis: Vec<CylinderFunction>,
    bound: f64,
    working_depth: usize,
    /// Step for first derivatives of Π.
    pub pi_step: f64,
    /// Step for derivatives of the metric.
    pub metric_step: f64,
}

impl SubmanifoldChart {
    pub fn new(
        base: Potential,
        basis: Vec<CylinderFunction>,
        bound: f64,
        working_depth: usize,
    ) -> Result<Self> {
        if !base.is_normalized() {
            return Err(Error::NotNormalized { residual: f64::NAN });
        }
        if basis.is_empty() || bound <= 0.0 {
            return Err(Error::InvalidArgument(
                "chart needs a nonempty basis and a positive bound".to_string(),
            ));
        }
        let gibbs = base.gibbs(working_depth)?;
        for (i, e) in basis.iter().enumerate() {
            let residual = apply_ruelle(base.function(), e, working_depth)?.sup_norm();
            if residual > tol::KERNEL * e.sup_norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "basis vector {i} is not in the kernel (residual {residual})"
                )));
            }
        }
        for i in 0..basis.len() {
            for j in i..basis.len() {
                let inner = gibbs.integrate(&basis[i].mul(&basis[j])?)?;
                let expect = if i == j { 1.0 } else { 0.0 };
                if (inner - expect).abs() > 1e-8 {
                    return Err(Error::InvalidArgument(format!(
                        "basis is not orthonormal: <e{i}, e{j}> = {inner}"
                    )));
                }
            }
        }
        Ok(SubmanifoldChart {
            base,
            basis,
            bound,
            working_depth,
            pi_step: 1e-5,
            metric_step: 1e-4,
        })
    }

    /// The m = 2 chart over a Markov base point, spanned by the normalized
    /// coordinate directions of the surface (depth-2 kernel functions in
    /// the Markov-gamma span).
    pub fn markov(r: f64, s: f64, bound: f64, working_depth: usize) -> Result<Self> {
        let m = crate::markov::MarkovGibbs::from_rs(r, s)?;
        let (grr, gss) = markov_surface_metric(r, s)?;
        let d_r = CylinderFunction::from_values(
            2,
            2,
            vec![1.0 / r, 0.0, -1.0 / (1.0 - r), 0.0],
        )?;
        let d_s = CylinderFunction::from_values(
            2,
            2,
            vec![0.0, -1.0 / (1.0 - s), 0.0, 1.0 / s],
        )?;
        SubmanifoldChart::new(
            m.log_jacobian().clone(),
            vec![d_r.scale(1.0 / grr.sqrt()), d_s.scale(1.0 / gss.sqrt())],
            bound,
            working_depth,
        )
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn base(&self) -> &Potential {
        &self.base
    }

    pub fn basis(&self) -> &[CylinderFunction] {
        &self.basis
    }

    pub fn working_depth(&self) -> usize {
        self.working_depth
    }

    fn check_coords(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.basis.len() {
            return Err(Error::LengthMismatch {
                got: coords.len(),
                expected: self.basis.len(),
            });
        }
        for &c in coords {
            if c.abs() >= self.bound {
                return Err(Error::ChartBound {
                    value: c,
                    bound: self.bound,
                });
            }
        }
        Ok(())
    }

    fn raw_potential(&self, coords: &[f64]) -> Result<CylinderFunction> {
        self.check_coords(coords)?;
        let mut pot = self.base.function().clone();
        for (c, e) in coords.iter().zip(&self.basis) {
            pot = pot.add(&e.scale(*c))?;
        }
        Ok(pot)
    }

    /// Eigendata (and therefore Π and μ) at the chart point.
    pub fn gibbs_at(&self, coords: &[f64]) -> Result<GibbsData> {
        let raw = self.raw_potential(coords)?;
        leading_eigendata(&raw, self.working_depth, tol::EIGEN, MAX_POWER_ITER)
    }

    /// Π(A₀ + Σ tᵢēᵢ) as a cylinder function.
    pub fn normalized_at(&self, coords: &[f64]) -> Result<CylinderFunction> {
        Ok(self.gibbs_at(coords)?.normalized_potential().clone())
    }

    /// (r, s) of the chart point — Markov charts only (depth-2 image).
    pub fn rs_at(&self, coords: &[f64]) -> Result<(f64, f64)> {
        let pot = self.normalized_at(coords)?;
        if pot.depth() > 2 {
            return Err(Error::Unsupported(
                "rs_at",
                "the chart image is not a depth-2 (Markov) potential",
            ));
        }
        let f = pot.refine(2)?;
        Ok((f.value_at(0).exp(), f.value_at(3).exp()))
    }

    /// Coordinate vector field X_i = D_QΠ(ēᵢ) by central differences of Π.
    pub fn coordinate_field(&self, coords: &[f64], i: usize) -> Result<CylinderFunction> {
        let mut plus = coords.to_vec();
        let mut minus = coords.to_vec();
        plus[i] += self.pi_step;
        minus[i] -= self.pi_step;
        let p = self.normalized_at(&plus)?;
        let m = self.normalized_at(&minus)?;
        Ok(p.sub(&m)?.scale(1.0 / (2.0 * self.pi_step)))
    }

    /// First fundamental form M_m(t): (M)ᵢⱼ = ∫ Xᵢ Xⱼ dμ_t, validated
    /// symmetric positive definite.
    pub fn metric(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dimension();
        let gibbs = self.gibbs_at(coords)?;
        let fields: Vec<CylinderFunction> = (0..m)
            .map(|i| self.coordinate_field(coords, i))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = gibbs.integrate(&fields[i].mul(&fields[j])?)?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        if out.clone().cholesky().is_none() {
            return Err(Error::ChartDegenerate);
        }
        Ok(out)
    }

    /// Christoffel symbols Γᵏᵢⱼ(t) from central differences of the metric.
    pub fn christoffels(&self, coords: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let m = self.dimension();
        let metric = self.metric(coords)?;
        let inverse = metric
            .clone()
            .try_inverse()
            .ok_or(Error::ChartDegenerate)?;
        let mut grads = Vec::with_capacity(m);
        for i in 0..m {
            let mut plus = coords.to_vec();
            let mut minus = coords.to_vec();
            plus[i] += self.metric_step;
            minus[i] -= self.metric_step;
            let dp = self.metric(&plus)?;
            let dm = self.metric(&minus)?;
            grads.push((dp - dm) / (2.0 * self.metric_step));
        }
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut gk = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let mut acc = 0.0;
                    for l in 0..m {
                        acc += inverse[(k, l)]
                            * (grads[i][(j, l)] + grads[j][(i, l)] - grads[l][(i, j)]);
                    }
                    gk[(i, j)] = 0.5 * acc;
                }
            }
            out.push(gk);
        }
        Ok(out)
    }
}

/// One sample of a chart geodesic.
#[derive(Debug, Clone, Serialize)]
pub struct ChartPathPoint {
    pub t: f64,
    pub coords: Vec<f64>,
    pub velocity: Vec<f64>,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartPath {
    pub points: Vec<ChartPathPoint>,
    /// max |e(t) − e(0)| / e(0) along the path.
    pub energy_drift: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ChartIntegrationOptions {
    pub unit_speed: bool,
    /// Relative energy-drift budget; exceeded drift halves the step and
    /// retries before failing.
    pub energy_tol: f64,
    pub max_refinements: usize,
}

impl Default for ChartIntegrationOptions {
    fn default() -> Self {
        ChartIntegrationOptions {
            unit_speed: true,
            energy_tol: 1e-4,
            max_refinements: 3,
        }
    }
}

/// RK4 integration of the chart geodesic equation t″ = −Γ(t)(t′, t′) with
/// the energy g(γ′,γ′) recorded at every step.
pub fn integrate_submanifold_geodesic(
    chart: &SubmanifoldChart,
    start: &[f64],
    velocity: &[f64],
    t_max: f64,
    step: f64,
    opts: ChartIntegrationOptions,
) -> Result<ChartPath> {
    let m = chart.dimension();
    if start.len() != m || velocity.len() != m {
        return Err(Error::LengthMismatch {
            got: start.len().max(velocity.len()),
            expected: m,
        });
    }
    let mut v0 = velocity.to_vec();
    if opts.unit_speed {
        let metric = chart.metric(start)?;
        let vv = DVector::from_column_slice(&v0);
        let norm = (vv.transpose() * &metric * &vv)[(0, 0)].sqrt();
        if norm > 0.0 {
            for v in &mut v0 {
                *v /= norm;
            }
        }
    }

    let mut h = step;
    for _ in 0..=opts.max_refinements {
        let path = integrate_chart_fixed(chart, start, &v0, t_max, h)?;
        if path.energy_drift <= opts.energy_tol || v0.iter().all(|&v| v == 0.0) {
            return Ok(path);
        }
        h *= 0.5;
    }
    Err(Error::StepUnderflow {
        estimate: f64::NAN,
        tol: opts.energy_tol,
    })
}

fn integrate_chart_fixed(
    chart: &SubmanifoldChart,
    start: &[f64],
    velocity: &[f64],
    t_max: f64,
    h: f64,
) -> Result<ChartPath> {
    let m = chart.dimension();
    let rhs = |coords: &[f64], vel: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let gammas = chart.christoffels(coords)?;
        let mut acc = vec![0.0; m];
        for k in 0..m {
            let mut a = 0.0;
            for i in 0..m {
                for j in 0..m {
                    a += gammas[k][(i, j)] * vel[i] * vel[j];
                }
            }
            acc[k] = -a;
        }
        Ok((vel.to_vec(), acc))
    };

    let energy_at = |coords: &[f64], vel: &[f64]| -> Result<f64> {
        let metric = chart.metric(coords)?;
        let vv = DVector::from_column_slice(vel);
        Ok((vv.transpose() * &metric * &vv)[(0, 0)])
    };

    let mut coords = start.to_vec();
    let mut vel = velocity.to_vec();
    let mut t = 0.0;
    let e0 = energy_at(&coords, &vel)?;
    let mut drift = 0.0f64;
    let mut points = vec![ChartPathPoint {
        t,
        coords: coords.clone(),
        velocity: vel.clone(),
        energy: e0,
    }];
    let steps = (t_max / h).round() as usize;
    for _ in 0..steps {
        // classical RK4 on the first-order system (coords, vel)
        let (k1c, k1v) = rhs(&coords, &vel)?;
        let c2: Vec<f64> = coords.iter().zip(&k1c).map(|(c, k)| c + 0.5 * h * k).collect();
        let v2: Vec<f64> = vel.iter().zip(&k1v).map(|(v, k)| v + 0.5 * h * k).collect();
        let (k2c, k2v) = rhs(&c2, &v2)?;
        let c3: Vec<f64> = coords.iter().zip(&k2c).map(|(c, k)| c + 0.5 * h * k).collect();
        let v3: Vec<f64> = vel.iter().zip(&k2v).map(|(v, k)| v + 0.5 * h * k).collect();
        let (k3c, k3v) = rhs(&c3, &v3)?;
        let c4: Vec<f64> = coords.iter().zip(&k3c).map(|(c, k)| c + h * k).collect();
        let v4: Vec<f64> = vel.iter().zip(&k3v).map(|(v, k)| v + h * k).collect();
        let (k4c, k4v) = rhs(&c4, &v4)?;
        for i in 0..m {
            coords[i] += h / 6.0 * (k1c[i] + 2.0 * k2c[i] + 2.0 * k3c[i] + k4c[i]);
            vel[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        t += h;
        let e = energy_at(&coords, &vel)?;
        if e0 > 0.0 {
            drift = drift.max((e - e0).abs() / e0);
        }
        points.push(ChartPathPoint {
            t,
            coords: coords.clone(),
            velocity: vel.clone(),
            energy: e,
        });
    }
    Ok(ChartPath {
        points,
        energy_drift: drift,
    })
}

/// Result of boundary-value shooting on a chart.
#[derive(Debug, Clone, Serialize)]
pub struct ShootResult {
    pub velocity: Vec<f64>,
    pub endpoint_error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ShootOptions {
    pub max_iter: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub integration_step: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            max_iter: 50,
            tolerance: 1e-6,
            fd_step: 1e-6,
            integration_step: 1e-2,
        }
    }
}

/// Damped-Newton shooting: find the initial velocity whose time-T geodesic
/// from `from` ends at `to` (coordinates), with a finite-difference
/// Jacobian. Deterministic; fails with the residual if Newton stagnates.
pub fn shoot(
    chart: &SubmanifoldChart,
    from: &[f64],
    to: &[f64],
    t_total: f64,
    opts: ShootOptions,
) -> Result<ShootResult> {
    let m = chart.dimension();
    let endpoint = |v: &[f64]| -> Result<Vec<f64>> {
        let fixed = ChartIntegrationOptions {
            unit_speed: false,
            energy_tol: f64::INFINITY,
            max_refinements: 0,
        };
        let path =
            integrate_submanifold_geodesic(chart, from, v, t_total, opts.integration_step, fixed)?;
        Ok(path.points.last().unwrap().coords.clone())
    };
    let residual = |v: &[f64]| -> Result<DVector<f64>> {
        let end = endpoint(v)?;
        Ok(DVector::from_iterator(
            m,
            end.iter().zip(to).map(|(a, b)| a - b),
        ))
    };

    let mut v: Vec<f64> = from.iter().zip(to).map(|(a, b)| (b - a) / t_total).collect();
    let mut res = residual(&v)?;
    let mut best = res.norm();
    if best <= opts.tolerance {
        return Ok(ShootResult {
            velocity: v,
            endpoint_error: best,
            iterations: 0,
        });
    }
    for iteration in 1..=opts.max_iter {
        // finite-difference Jacobian of the endpoint map
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[j] += opts.fd_step;
            vm[j] -= opts.fd_step;
            let rp = residual(&vp)?;
            let rm = residual(&vm)?;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * opts.fd_step);
            }
        }
        let delta = jac.lu().solve(&res).ok_or(Error::ShootingFailed {
            residual: best,
            iterations: iteration,
        })?;
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..6 {
            let candidate: Vec<f64> = v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi - alpha * delta[i])
                .collect();
            let cand_res = residual(&candidate)?;
            if cand_res.norm() < best {
                v = candidate;
                res = cand_res;
                best = res.norm();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if best <= opts.tolerance {
            return Ok(ShootResult {
                velocity: v,
                endpoint_error: best,
                iterations: iteration,
            });
        }
        if !accepted {
            return Err(Error::ShootingFailed {
                residual: best,
                iterations: iteration,
            });
        }
    }
    Err(Error::ShootingFailed {
        residual: best,
        iterations: opts.max_iter,
    })
}

/// Both sides of the Leibniz rule
/// d/dt ∫Y(t) dμ_{γ(t)} = ∫Y′(t) dμ + ∫Y(t) X(t) dμ along the analytic
/// curve γ(t) = Π(A₀ + tξ), with Y a tangent field supplied as a closure.
pub fn leibniz_check(
    base: &Potential,
    xi: &CylinderFunction,
    field: &dyn Fn(f64) -> Result<CylinderFunction>,
    t: f64,
    h: f64,
    working_depth: usize,
) -> Result<(f64, f64)> {
    let gibbs_at = |u: f64| -> Result<GibbsData> {
        let pot = base.function().add(&xi.scale(u))?;
        leading_eigendata(&pot, working_depth, tol::EIGEN, MAX_POWER_ITER)
    };
    let integral = |u: f64| -> Result<f64> { gibbs_at(u)?.integrate(&field(u)?) };
    let lhs = (integral(t + h)? - integral(t - h)?) / (2.0 * h);

    let here = gibbs_at(t)?;
    let y_prime = field(t + h)?.sub(&field(t - h)?)?.scale(1.0 / (2.0 * h));
    let x = gibbs_at(t + h)?
        .normalized_potential()
        .sub(gibbs_at(t - h)?.normalized_potential())?
        .scale(1.0 / (2.0 * h));
    let rhs = here.integrate(&y_prime)? + here.integrate(&field(t)?.mul(&x)?)?;
    Ok((lhs, rhs))
}

/// Empirical finite-difference estimate of sup‖D_BΠ(ē) − ē‖ over a set of
/// probe directions; at a normalized base the deviation vanishes to
/// discretization error.
#[derive(Debug, Clone, Serialize)]
pub struct DpiProbeReport {
    pub per_direction: Vec<f64>,
    pub max_deviation: f64,
}

pub fn dpi_probe(
    at: &CylinderFunction,
    directions: &[CylinderFunction],
    h: f64,
    working_depth: usize,
) -> Result<DpiProbeReport> {
    let mut per = Vec::with_capacity(directions.len());
    for dir in directions {
        let plus = leading_eigendata(
            &at.add(&dir.scale(h))?,
            working_depth,
            tol::EIGEN,
            MAX_POWER_ITER,
        )?;
        let minus = leading_eigendata(
            &at.add(&dir.scale(-h))?,
            working_depth,
            tol::EIGEN,
            MAX_POWER_ITER,
        )?;
        let derivative = plus
            .normalized_potential()
            .sub(minus.normalized_potential())?
            .scale(1.0 / (2.0 * h));
        per.push(derivative.sub(dir)?.sup_norm());
    }
    let max = per.iter().cloned().fold(0.0, f64::max);
    Ok(DpiProbeReport {
        per_direction: per,
        max_deviation: max,
    })
}

/// A fan of directions (cos θ, sin θ) used by the figure presets.
pub fn direction_fan(count: usize) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            (theta.cos(), theta.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn christoffel_zero_lines_and_regression() {
        for s in [0.1, 0.3, 0.7, 0.9] {
            let (g1, _) = christoffel(0.5, s).unwrap();
            assert_eq!(g1, 0.0);
            let (_, g2) = christoffel(s, 0.5).unwrap();
            assert_eq!(g2, 0.0);
        }
        // swap symmetry
        let (a1, a2) = christoffel(0.35, 0.15).unwrap();
        let (b1, b2) = christoffel(0.15, 0.35).unwrap();
        assert_eq!(a1, b2);
        assert_eq!(a2, b1);
        // frozen values of the closed formulas
        assert!((a1 - 0.41776949505910466).abs() < 1e-14);
        assert!((a2 - 1.4890247043403093).abs() < 1e-13);
        // boundary input errors
        assert!(christoffel(0.0, 0.5).is_err());
        assert!(christoffel(0.5, 1.0).is_err());
    }

    #[test]
    fn surface_metric_regression() {
        let (grr, gss) = markov_surface_metric(0.35, 0.15).unwrap();
        // frozen from the closed form pi0/(r(1-r)), pi1/(s(1-s))
        assert!((grr - 2.490842490842491).abs() < 1e-12);
        assert!((gss - 3.3986928104575163).abs() < 1e-12);
    }

    #[test]
    fn half_line_is_invariant() {
        let state = GeodesicState::new(0.5, 0.3, 0.0, 1.0).unwrap();
        let path =
            integrate_markov_geodesic(state, 1.0, 1e-3, MarkovIntegrationOptions::default())
                .unwrap();
        let worst = path
            .points
            .iter()
            .fold(0.0f64, |m, p| m.max((p.r - 0.5).abs()));
        assert!(worst <= 1e-9, "r drifted {worst}");
    }

    #[test]
    fn swap_symmetry_of_paths() {
        let a = integrate_markov_geodesic(
            GeodesicState::new(0.3, 0.7, 0.8, -0.2).unwrap(),
            0.5,
            1e-3,
            MarkovIntegrationOptions::default(),
        )
        .unwrap();
        let b = integrate_markov_geodesic(
            GeodesicState::new(0.7, 0.3, -0.2, 0.8).unwrap(),
            0.5,
            1e-3,
            MarkovIntegrationOptions::default(),
        )
        .unwrap();
        assert_eq!(a.points.len(), b.points.len());
        let worst = a.points.iter().zip(&b.points).fold(0.0f64, |m, (p, q)| {
            m.max((p.r - q.s).abs()).max((p.s - q.r).abs())
        });
        assert!(worst <= 1e-10, "swap symmetry defect {worst}");
    }

    #[test]
    fn rk4_order_check() {
        // halving h reduces the endpoint error by ~16x on a smooth path
        let state = GeodesicState::new(0.4, 0.45, 1.0, 0.5).unwrap();
        let opts = MarkovIntegrationOptions {
            step_tol: f64::INFINITY,
            ..Default::default()
        };
        let endpoint = |h: f64| {
            let p = integrate_markov_geodesic(state, 0.4, h, opts).unwrap();
            let last = p.points.last().unwrap();
            (last.r, last.s)
        };
        let reference = endpoint(1e-4);
        let coarse = endpoint(8e-3);
        let fine = endpoint(4e-3);
        let err_coarse =
            ((coarse.0 - reference.0).powi(2) + (coarse.1 - reference.1).powi(2)).sqrt();
        let err_fine = ((fine.0 - reference.0).powi(2) + (fine.1 - reference.1).powi(2)).sqrt();
        let ratio = err_coarse / err_fine;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "RK4 order ratio {ratio} (errors {err_coarse} / {err_fine})"
        );
    }

    #[test]
    fn fan_paths_complete_or_exit_cleanly() {
        for &(r, s) in &[(0.5, 0.5), (0.35, 0.15)] {
            let mut deviations = Vec::new();
            for (dx, dy) in direction_fan(16) {
                let state = GeodesicState::new(r, s, dx, dy).unwrap();
                let path = integrate_markov_geodesic(
                    state,
                    2.0,
                    1e-2,
                    MarkovIntegrationOptions::default(),
                )
                .unwrap();
                for p in &path.points {
                    assert!(inside_domain(p.r, p.s));
                }
                // deviation from the chord through the endpoints
                let first = path.points.first().unwrap();
                let last = path.points.last().unwrap();
                let (ax, ay) = (first.r, first.s);
                let (bx, by) = (last.r - ax, last.s - ay);
                let len = (bx * bx + by * by).sqrt();
                if len > 1e-6 {
                    let worst = path
                        .points
                        .iter()
                        .map(|p| ((p.r - ax) * by - (p.s - ay) * bx).abs() / len)
                        .fold(0.0f64, f64::max);
                    deviations.push(worst);
                }
            }
            // curvature of the traces: at least one non-exceptional path bends
            let max_dev = deviations.iter().cloned().fold(0.0f64, f64::max);
            assert!(max_dev > 1e-3, "fan from ({r},{s}) looks straight: {max_dev}");
        }
    }

    #[test]
    fn chart_metric_is_identity_at_base() {
        let chart = SubmanifoldChart::markov(0.35, 0.15, 0.5, 6).unwrap();
        let m = chart.metric(&[0.0, 0.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (m[(i, j)] - expect).abs() < 1e-6,
                    "M(0)[{i}{j}] = {}",
                    m[(i, j)]
                );
            }
        }
    }

    #[test]
    fn one_dimensional_chart_metric_is_positive() {
        let chart = SubmanifoldChart::markov(0.4, 0.6, 0.4, 6).unwrap();
        let one_dim = SubmanifoldChart::new(
            chart.base().clone(),
            vec![chart.basis()[0].clone()],
            0.4,
            6,
        )
        .unwrap();
        for c in [-0.3, -0.1, 0.0, 0.2, 0.35] {
            let m = one_dim.metric(&[c]).unwrap();
            assert!(m[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn chart_metric_matches_rs_pullback() {
        // coordinate-change oracle: M(t) = Jᵀ diag(g_rr, g_ss) J with J the
        // finite-difference Jacobian of the chart-to-(r,s) map
        let chart = SubmanifoldChart::markov(0.35, 0.15, 0.5, 6).unwrap();
        for coords in [[0.0, 0.0], [0.08, -0.05], [-0.1, 0.12]] {
            let m = chart.metric(&coords).unwrap();
            let h = 1e-5;
            let mut jac = [[0.0f64; 2]; 2];
            for j in 0..2 {
                let mut cp = coords;
                let mut cm = coords;
                cp[j] += h;
                cm[j] -= h;
                let (rp, sp) = chart.rs_at(&cp).unwrap();
                let (rm, sm) = chart.rs_at(&cm).unwrap();
                jac[0][j] = (rp - rm) / (2.0 * h);
                jac[1][j] = (sp - sm) / (2.0 * h);
            }
            let (r, s) = chart.rs_at(&coords).unwrap();
            let (grr, gss) = markov_surface_metric(r, s).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let pulled = grr * jac[0][i] * jac[0][j] + gss * jac[1][i] * jac[1][j];
                    assert!(
                        (m[(i, j)] - pulled).abs() < 1e-4,
                        "pullback mismatch at {coords:?}: {} vs {}",
                        m[(i, j)],
                        pulled
                    );
                }
            }
        }
    }

    #[test]
    fn zero_velocity_gives_constant_path() {
        let chart = SubmanifoldChart::markov(0.4, 0.6, 0.4, 5).unwrap();
        let path = integrate_submanifold_geodesic(
            &chart,
            &[0.05, -0.02],
            &[0.0, 0.0],
            0.2,
            0.05,
            ChartIntegrationOptions::default(),
        )
        .unwrap();
        for p in &path.points {
            assert!((p.coords[0] - 0.05).abs() < 1e-14);
            assert!((p.coords[1] + 0.02).abs() < 1e-14);
        }
    }

    #[test]
    fn chart_energy_is_conserved() {
        let chart = SubmanifoldChart::markov(0.45, 0.55, 0.6, 6).unwrap();
        let path = integrate_submanifold_geodesic(
            &chart,
            &[0.0, 0.0],
            &[1.0, 0.6],
            0.5,
            1e-2,
            ChartIntegrationOptions::default(),
        )
        .unwrap();
        assert!(
            path.energy_drift <= 1e-6,
            "energy drift {}",
            path.energy_drift
        );
        // unit-speed normalization: energy starts at 1
        assert!((path.points[0].energy - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shoot_trivial_and_consistency() {
        let chart = SubmanifoldChart::markov(0.45, 0.55, 0.6, 5).unwrap();
        let res =
            shoot(&chart, &[0.05, 0.0], &[0.05, 0.0], 0.2, ShootOptions::default()).unwrap();
        assert!(res.endpoint_error <= 1e-6);
        assert!(res.velocity.iter().all(|v| v.abs() < 1e-7));

        let target = [0.12, -0.08];
        let res = shoot(&chart, &[0.0, 0.0], &target, 0.25, ShootOptions::default()).unwrap();
        let path = integrate_submanifold_geodesic(
            &chart,
            &[0.0, 0.0],
            &res.velocity,
            0.25,
            1e-2,
            ChartIntegrationOptions {
                unit_speed: false,
                ..Default::default()
            },
        )
        .unwrap();
        let end = &path.points.last().unwrap().coords;
        let err = ((end[0] - target[0]).powi(2) + (end[1] - target[1]).powi(2)).sqrt();
        assert!(err <= 1e-6, "endpoint error {err}");
    }

    #[test]
    fn shoot_matches_direction_bisection_oracle() {
        // independent oracle: bisect the launch angle at fixed speed until
        // the endpoint direction passes through the target direction
        let chart = SubmanifoldChart::markov(0.45, 0.55, 0.6, 5).unwrap();
        let target = [0.1, 0.06];
        let t_total = 0.2;
        let res = shoot(&chart, &[0.0, 0.0], &target, t_total, ShootOptions::default()).unwrap();

        let speed = (res.velocity[0].powi(2) + res.velocity[1].powi(2)).sqrt();
        let endpoint_angle = |theta: f64| -> f64 {
            let v = [speed * theta.cos(), speed * theta.sin()];
            let p = integrate_submanifold_geodesic(
                &chart,
                &[0.0, 0.0],
                &v,
                t_total,
                1e-2,
                ChartIntegrationOptions {
                    unit_speed: false,
                    ..Default::default()
                },
            )
            .unwrap();
            let e = &p.points.last().unwrap().coords;
            (e[1].atan2(e[0])) - (target[1].atan2(target[0]))
        };
        let mut lo = -0.5f64;
        let mut hi = 0.9f64;
        assert!(endpoint_angle(lo) < 0.0 && endpoint_angle(hi) > 0.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if endpoint_angle(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let newton_theta = res.velocity[1].atan2(res.velocity[0]);
        assert!(
            (theta - newton_theta).abs() < 1e-4,
            "bisection {theta} vs newton {newton_theta}"
        );
    }

    #[test]
    fn leibniz_rule_on_markov_curve() {
        let m = crate::markov::MarkovGibbs::from_rs(0.4, 0.55).unwrap();
        let base = m.log_jacobian().clone();
        let g = base.gibbs(6).unwrap();
        // curve direction: a depth-2 kernel element
        let raw_dir = CylinderFunction::from_values(2, 2, vec![0.4, -0.1, 0.3, 0.2]).unwrap();
        let xi = crate::transfer::kernel_project(&g, &raw_dir)
            .unwrap()
            .function()
            .clone();

        // Y(t): the kernel projection of a fixed depth-3 function at γ(t)
        let y_raw = CylinderFunction::from_values(
            2,
            3,
            vec![0.7, -0.3, 0.1, 0.9, -0.6, 0.2, 0.4, -0.8],
        )
        .unwrap();
        let base_fn = base.function().clone();
        let xi_clone = xi.clone();
        let field = move |t: f64| -> Result<CylinderFunction> {
            let pot = base_fn.add(&xi_clone.scale(t))?;
            let gibbs = leading_eigendata(&pot, 6, tol::EIGEN, MAX_POWER_ITER)?;
            Ok(crate::transfer::kernel_project(&gibbs, &y_raw)?
                .function()
                .clone())
        };
        let (lhs, rhs) = leibniz_check(&base, &xi, &field, 0.05, 1e-4, 6).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5, "leibniz defect {}", lhs - rhs);

        // a field constant in t (tangent at the evaluation point): the
        // Y′ term of the right side vanishes
        let const_field = {
            let f = xi.clone();
            move |_t: f64| -> Result<CylinderFunction> { Ok(f.clone()) }
        };
        let (lhs, rhs) = leibniz_check(&base, &xi, &const_field, 0.0, 1e-4, 6).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5);
    }

    #[test]
    fn dpi_probe_is_identity_at_base() {
        let m = crate::markov::MarkovGibbs::from_rs(0.4, 0.55).unwrap();
        let g = m.log_jacobian().gibbs(6).unwrap();
        let dir = crate::transfer::kernel_project(
            &g,
            &CylinderFunction::from_values(2, 2, vec![1.0, -0.5, 0.25, 0.4]).unwrap(),
        )
        .unwrap()
        .function()
        .clone();
        let report = dpi_probe(m.log_jacobian().function(), &[dir], 1e-5, 6).unwrap();
        assert!(
            report.max_deviation < 1e-6,
            "D_AΠ deviation {}",
            report.max_deviation
        );
    }
}
