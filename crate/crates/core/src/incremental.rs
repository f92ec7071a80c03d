//! Incremental storage via numerical geodesics under the solved
//! state-dependent metric, and verification of the incremental dissipation
//! inequality along simulated trajectory pairs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::certificates::StorageForm;
use crate::error::GeodesicError;
use crate::expr::Expr;
use crate::lmi::{min_eigenvalue, QsrSupply, StorageBasis};
use crate::sets::SchedulingMap;
use crate::system::Trajectory;

/// Default number of path segments for geodesic discretization.
pub const DEFAULT_SEGMENTS: usize = 16;

/// State-dependent Riemannian metric `M(x)` induced by a solved storage.
///
/// With `StorageForm::Direct` the stored coefficients give `M` directly;
/// with `StorageForm::Inverse` they give the gain-form variable `X` and the
/// metric is `M(x) = γ·X(x)⁻¹`.
#[derive(Debug, Clone)]
pub struct StorageMetric {
    coeffs: Vec<DMatrix<f64>>,
    basis: StorageBasis,
    /// For each scheduling coordinate the basis may read: the state index
    /// it selects, or None for input-mapped coordinates.
    coord_state: Vec<Option<usize>>,
    /// dphi[i][j] = ∂φᵢ/∂p_j.
    dphi: Vec<Vec<Expr>>,
    form: StorageForm,
    gamma: f64,
    n_x: usize,
}

impl StorageMetric {
    pub fn new(
        coeffs: Vec<DMatrix<f64>>,
        basis: StorageBasis,
        map: &SchedulingMap,
        form: StorageForm,
        gamma: f64,
    ) -> Self {
        let n_x = coeffs[0].nrows();
        let n_p = map.n_p();
        let coord_state = (0..n_p)
            .map(|k| {
                if map.state_mapped[k] {
                    Some(map.indices[k])
                } else {
                    None
                }
            })
            .collect();
        let dphi = basis
            .exprs()
            .iter()
            .map(|e| (0..n_p).map(|j| e.diff(j)).collect())
            .collect();
        StorageMetric {
            coeffs,
            basis,
            coord_state,
            dphi,
            form,
            gamma,
            n_x,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    fn p_of(&self, x: &DVector<f64>) -> Vec<f64> {
        self.coord_state
            .iter()
            .map(|cs| cs.map_or(0.0, |s| x[s]))
            .collect()
    }

    fn raw_at(&self, p: &[f64]) -> Result<DMatrix<f64>, GeodesicError> {
        let phi = self
            .basis
            .eval(p)
            .map_err(|_| GeodesicError::MetricNotPositiveDefinite)?;
        let mut m = DMatrix::zeros(self.n_x, self.n_x);
        for (w, mi) in phi.iter().zip(&self.coeffs) {
            m += *w * mi;
        }
        Ok(m)
    }

    /// Metric value at a state.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, GeodesicError> {
        let p = self.p_of(x);
        let raw = self.raw_at(&p)?;
        match self.form {
            StorageForm::Direct => {
                if min_eigenvalue(&raw) <= 0.0 {
                    return Err(GeodesicError::MetricNotPositiveDefinite);
                }
                Ok(raw)
            }
            StorageForm::Inverse => {
                if min_eigenvalue(&raw) <= 0.0 {
                    return Err(GeodesicError::MetricNotPositiveDefinite);
                }
                let inv = raw
                    .try_inverse()
                    .ok_or(GeodesicError::MetricNotPositiveDefinite)?;
                Ok(self.gamma * inv)
            }
        }
    }

    /// Metric and its state-gradient `∂M/∂x_s` for all `s` at a state.
    pub fn eval_with_grad(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), GeodesicError> {
        let p = self.p_of(x);
        let raw = self.raw_at(&p)?;
        if min_eigenvalue(&raw) <= 0.0 {
            return Err(GeodesicError::MetricNotPositiveDefinite);
        }
        // dRaw/dx_s = Σ_i coeffs_i · Σ_{k sel s} ∂φ_i/∂p_k
        let mut draw = vec![DMatrix::zeros(self.n_x, self.n_x); self.n_x];
        for (i, mi) in self.coeffs.iter().enumerate() {
            for (k, cs) in self.coord_state.iter().enumerate() {
                if let Some(s) = cs {
                    let g = self.dphi[i][k]
                        .eval(&p)
                        .map_err(|_| GeodesicError::MetricNotPositiveDefinite)?;
                    if g != 0.0 {
                        draw[*s] += g * mi;
                    }
                }
            }
        }
        match self.form {
            StorageForm::Direct => Ok((raw, draw)),
            StorageForm::Inverse => {
                let inv = raw
                    .try_inverse()
                    .ok_or(GeodesicError::MetricNotPositiveDefinite)?;
                let m = self.gamma * &inv;
                // d(γX⁻¹)/dx = −γ X⁻¹ (dX/dx) X⁻¹ = −(1/γ) M (dX/dx) M
                let dm = draw
                    .iter()
                    .map(|dr| -(1.0 / self.gamma) * &m * dr * &m)
                    .collect();
                Ok((m, dm))
            }
        }
    }
}

/// Piecewise-linear path in state space with fixed endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePath {
    /// `N+1` waypoints from `x̃` to `x`.
    pub points: Vec<DVector<f64>>,
}

impl PiecewisePath {
    pub fn straight(x_from: &DVector<f64>, x_to: &DVector<f64>, n_seg: usize) -> Self {
        let points = (0..=n_seg)
            .map(|k| {
                let t = k as f64 / n_seg as f64;
                x_from + t * (x_to - x_from)
            })
            .collect();
        PiecewisePath { points }
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }
}

/// Discretized path energy `E = N · Σ_k Δx_kᵀ M(mid_k) Δx_k` (midpoint
/// rule).
pub fn path_energy(metric: &StorageMetric, path: &PiecewisePath) -> Result<f64, GeodesicError> {
    let n = path.segments();
    if n == 0 {
        return Err(GeodesicError::NoSegments);
    }
    let mut e = 0.0;
    for k in 0..n {
        let d = &path.points[k + 1] - &path.points[k];
        let mid = 0.5 * (&path.points[k + 1] + &path.points[k]);
        let m = metric.eval(&mid)?;
        e += (d.transpose() * m * &d)[(0, 0)];
    }
    Ok(e * n as f64)
}

fn energy_and_grad(
    metric: &StorageMetric,
    path: &PiecewisePath,
) -> Result<(f64, Vec<DVector<f64>>), GeodesicError> {
    let n = path.segments();
    let n_x = metric.n_x();
    let mut e = 0.0;
    // grad over interior waypoints 1..n-1
    let mut grad = vec![DVector::zeros(n_x); n + 1];
    for k in 0..n {
        let d = &path.points[k + 1] - &path.points[k];
        let mid = 0.5 * (&path.points[k + 1] + &path.points[k]);
        let (m, dm) = metric.eval_with_grad(&mid)?;
        e += (d.transpose() * &m * &d)[(0, 0)];
        let md = &m * &d;
        // ∂/∂x_{k}   : −2 M d + 0.5 dᵀ(∂M)d
        // ∂/∂x_{k+1} : +2 M d + 0.5 dᵀ(∂M)d
        for s in 0..n_x {
            let curv = 0.5 * (d.transpose() * &dm[s] * &d)[(0, 0)];
            grad[k][s] += -2.0 * md[s] + curv;
            grad[k + 1][s] += 2.0 * md[s] + curv;
        }
    }
    let scale = n as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok((e * scale, grad))
}

/// Locally minimal discretized path energy between two states.
///
/// Gradient descent with Armijo backtracking on the interior waypoints,
/// initialized with the straight line; stops when the interior gradient
/// norm drops below 1e−8 or after 500 iterations.
pub fn geodesic(
    metric: &StorageMetric,
    x_from: &DVector<f64>,
    x_to: &DVector<f64>,
    n_seg: usize,
) -> Result<(PiecewisePath, f64), GeodesicError> {
    if n_seg == 0 {
        return Err(GeodesicError::NoSegments);
    }
    let mut path = PiecewisePath::straight(x_from, x_to, n_seg);
    if (x_to - x_from).norm() == 0.0 {
        return Ok((path, 0.0));
    }
    let (mut energy, mut grad) = energy_and_grad(metric, &path)?;
    let mut step = 1.0;
    for _ in 0..500 {
        let gnorm: f64 = grad[1..n_seg]
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        if gnorm < 1e-8 || n_seg < 2 {
            break;
        }
        // Armijo backtracking along the negative interior gradient.
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = path.clone();
            for k in 1..n_seg {
                cand.points[k] -= step * &grad[k];
            }
            match energy_and_grad(metric, &cand) {
                Ok((ec, gc)) => {
                    if ec <= energy - 1e-4 * step * gnorm * gnorm {
                        path = cand;
                        energy = ec;
                        grad = gc;
                        accepted = true;
                        // Allow the step to grow back after a success.
                        step *= 2.0;
                        break;
                    }
                }
                Err(GeodesicError::MetricNotPositiveDefinite) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((path, energy))
}

/// Incremental storage `V_i(x, x̃)` = geodesic energy between the states.
pub fn incremental_storage(
    metric: &StorageMetric,
    x: &DVector<f64>,
    x_tilde: &DVector<f64>,
    n_seg: usize,
) -> Result<f64, GeodesicError> {
    Ok(geodesic(metric, x_tilde, x, n_seg)?.1)
}

/// Per-time-step record of the incremental dissipation inequality along a
/// trajectory pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IdReport {
    /// Incremental storage V_i(x(t), x̃(t)), t = 0..=T.
    pub vi: Vec<f64>,
    /// V_i(0) + Σ_{τ<t} s_i(τ).
    pub cumulative: Vec<f64>,
    /// cumulative − vi; nonnegative when the certificate holds.
    pub margin: Vec<f64>,
    /// Euclidean state distances.
    pub dist: Vec<f64>,
}

impl IdReport {
    pub fn min_margin(&self) -> f64 {
        self.margin.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `t,Vi,cumulative_supply_plus_init,margin,dist`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,Vi,cumulative_supply_plus_init,margin,dist\n");
        for t in 0..self.vi.len() {
            s.push_str(&format!(
                "{t},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.vi[t], self.cumulative[t], self.margin[t], self.dist[t]
            ));
        }
        s
    }
}

/// Evaluate the incremental dissipation inequality along a simulated
/// trajectory pair: at every `t ≤ T`,
/// `V_i(t) ≤ V_i(0) + Σ_{τ<t} s_i(τ)` with the paired-argument supply
/// `s_i(τ) = s(w(τ)−w̃(τ), z(τ)−z̃(τ))`.
pub fn verify_id(
    metric: &StorageMetric,
    supply: &QsrSupply,
    traj: &Trajectory,
    traj_ref: &Trajectory,
    n_seg: usize,
) -> Result<IdReport, GeodesicError> {
    let t_max = traj.horizon();
    if traj_ref.horizon() != t_max {
        return Err(GeodesicError::HorizonMismatch(t_max, traj_ref.horizon()));
    }
    let vi: Vec<f64> = (0..=t_max)
        .into_par_iter()
        .map(|t| incremental_storage(metric, &traj.x[t], &traj_ref.x[t], n_seg))
        .collect::<Result<_, _>>()?;
    let mut cumulative = Vec::with_capacity(t_max + 1);
    let mut acc = vi[0];
    cumulative.push(acc);
    for t in 0..t_max {
        let dw = &traj.w[t] - &traj_ref.w[t];
        let dz = &traj.z[t] - &traj_ref.z[t];
        acc += supply.value(&dw, &dz);
        cumulative.push(acc);
    }
    let margin: Vec<f64> = cumulative.iter().zip(&vi).map(|(c, v)| c - v).collect();
    let dist = convergence_metric(traj, traj_ref)?;
    Ok(IdReport {
        vi,
        cumulative,
        margin,
        dist,
    })
}

/// Euclidean distances `‖x(t) − x̃(t)‖` for `t = 0..=T`.
pub fn convergence_metric(
    traj: &Trajectory,
    traj_ref: &Trajectory,
) -> Result<Vec<f64>, GeodesicError> {
    if traj.horizon() != traj_ref.horizon() {
        return Err(GeodesicError::HorizonMismatch(
            traj.horizon(),
            traj_ref.horizon(),
        ));
    }
    Ok(traj
        .x
        .iter()
        .zip(&traj_ref.x)
        .map(|(a, b)| (a - b).norm())
        .collect())
}
