//! Stability and performance certificates derived from solved storage
//! functions: shifted Lyapunov functions, invariant level sets and tubes,
//! the sampled gain-transfer constant α, and the universal-shifted gain
//! bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CertificateError;
use crate::forms::SystemJacobians;
use crate::lmi::{max_eigenvalue, min_eigenvalue, QsrSupply, SolveResult, SolveStatus};
use crate::sets::{BoxRegion, Grid};
use crate::system::DtSystem;

/// Shifted Lyapunov function `V_s(x) = (f(x, w*) − x)ᵀ M₀ (f(x, w*) − x)`
/// built from a constant velocity storage matrix and a reference input.
#[derive(Debug, Clone)]
pub struct ShiftedLyapunov {
    sys: DtSystem,
    m0: DMatrix<f64>,
    w_star: DVector<f64>,
}

impl ShiftedLyapunov {
    pub fn new(sys: &DtSystem, m0: DMatrix<f64>, w_star: DVector<f64>) -> Self {
        assert!(
            min_eigenvalue(&m0) > 0.0,
            "shifted Lyapunov storage must be positive definite"
        );
        ShiftedLyapunov {
            sys: sys.clone(),
            m0,
            w_star,
        }
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64, CertificateError> {
        let d = self.sys.step(x, &self.w_star)? - x;
        Ok((d.transpose() * &self.m0 * &d)[(0, 0)])
    }
}

/// True iff the supply is nonpositive at zero input (`s(0, z) = zᵀRz ≤ 0`),
/// the sign condition under which dissipativity yields stability. With
/// `strict`, requires `R ≺ 0`.
pub fn check_supply_stability(supply: &QsrSupply, strict: bool) -> bool {
    let rmax = supply.r_max_eigenvalue();
    if strict {
        rmax < -1e-12
    } else {
        rmax <= 1e-12
    }
}

/// Sublevel set `{x : V_s(x) ≤ level}` certified to stay inside a region.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSet {
    pub level: f64,
}

/// Largest level whose sublevel set fits inside the region, found as the
/// minimum of `V_s` over densely sampled boundary faces.
pub fn level_set_fit(
    lyap: &ShiftedLyapunov,
    region: &BoxRegion,
    samples_per_face: usize,
) -> Result<InvariantSet, CertificateError> {
    let n = region.dim();
    let samples = samples_per_face.max(2);
    let mut level = f64::INFINITY;
    for face_dim in 0..n {
        for &bound in &[region.lo[face_dim], region.hi[face_dim]] {
            // Sample the face with a grid over the remaining dimensions.
            let per_dim = (samples as f64)
                .powf(1.0 / ((n.max(2) - 1) as f64))
                .ceil() as usize;
            let lo: Vec<f64> = (0..n)
                .filter(|&d| d != face_dim)
                .map(|d| region.lo[d])
                .collect();
            let hi: Vec<f64> = (0..n)
                .filter(|&d| d != face_dim)
                .map(|d| region.hi[d])
                .collect();
            if lo.is_empty() {
                let x = DVector::from_element(1, bound);
                level = level.min(lyap.eval(&x)?);
                continue;
            }
            let face = Grid::uniform(BoxRegion::new(lo, hi).unwrap(), per_dim.max(2));
            for pt in face.iter() {
                let mut x = DVector::zeros(n);
                let mut k = 0;
                for d in 0..n {
                    if d == face_dim {
                        x[d] = bound;
                    } else {
                        x[d] = pt[k];
                        k += 1;
                    }
                }
                level = level.min(lyap.eval(&x)?);
            }
        }
    }
    Ok(InvariantSet { level })
}

/// Time-varying sublevel set of the incremental storage around a reference
/// trajectory.
#[derive(Debug, Clone)]
pub struct InvariantTube {
    pub level: f64,
    pub reference: Vec<DVector<f64>>,
}

impl InvariantTube {
    pub fn horizon(&self) -> usize {
        self.reference.len().saturating_sub(1)
    }
}

/// Membership test `V_i(x, x̃(t)) ≤ level` with a caller-supplied
/// incremental storage evaluator.
pub fn tube_membership<E>(
    tube: &InvariantTube,
    vi: E,
    x: &DVector<f64>,
    t: usize,
) -> Result<bool, crate::error::GeodesicError>
where
    E: Fn(&DVector<f64>, &DVector<f64>) -> Result<f64, crate::error::GeodesicError>,
{
    if t >= tube.reference.len() {
        return Err(crate::error::GeodesicError::HorizonExceeded {
            t,
            horizon: tube.horizon(),
        });
    }
    Ok(vi(x, &tube.reference[t])? <= tube.level + 1e-12)
}

/// System in the restricted structure `x⁺ = f̃(x) + B·w`, `z = C·x` with
/// `C·B = 0`, identified from the full model.
#[derive(Debug, Clone)]
pub struct RestrictedForm {
    pub sys: DtSystem,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl RestrictedForm {
    /// Identify `B` and `C` from the Jacobians at the region center and
    /// verify by sampling that `∂f/∂w` and `∂h/∂x` are constant and
    /// `∂h/∂w = 0` over the region, then check `CB = 0` (tolerance 1e−10).
    pub fn identify(sys: &DtSystem, region: &BoxRegion) -> Result<Self, CertificateError> {
        let jac = SystemJacobians::new(sys);
        let n_x = sys.vars.n_x();
        let center = region.center();
        let fm0 = jac.eval(
            &DVector::from_column_slice(&center[..n_x]),
            &DVector::from_column_slice(&center[n_x..]),
        )?;
        // Probe on a coarse grid: structure violations are polynomial-visible.
        let probe = Grid::uniform(region.clone(), 3);
        for pt in probe.iter() {
            let fm = jac.eval(
                &DVector::from_column_slice(&pt[..n_x]),
                &DVector::from_column_slice(&pt[n_x..]),
            )?;
            if (&fm.b - &fm0.b).abs().max() > 1e-9 {
                return Err(CertificateError::NotRestrictedForm(
                    "input matrix B varies over the region".into(),
                ));
            }
            if (&fm.c - &fm0.c).abs().max() > 1e-9 {
                return Err(CertificateError::NotRestrictedForm(
                    "output matrix C varies over the region".into(),
                ));
            }
            if fm.d.abs().max() > 1e-9 {
                return Err(CertificateError::NotRestrictedForm(
                    "output has direct feedthrough".into(),
                ));
            }
        }
        let cb = &fm0.c * &fm0.b;
        let cb_max = cb.abs().max();
        if cb_max > 1e-10 {
            return Err(CertificateError::CbNotZero(cb_max));
        }
        Ok(RestrictedForm {
            sys: sys.clone(),
            b: fm0.b,
            c: fm0.c,
        })
    }
}

/// Sampled estimate of the constant α for which
/// `(⋆)ᵀ R C (Ā(x, x*) − I)(x − x*) ≤ α⁻¹ (⋆)ᵀ R C (x − x*)`
/// over all sampled pairs `(x, x*)`. Returns the smallest valid α; the
/// estimate is sampling-based, not certified.
pub fn estimate_alpha(
    rf: &RestrictedForm,
    r: &DMatrix<f64>,
    region: &BoxRegion,
    eq_region: &BoxRegion,
    samples_per_dim: usize,
    quad_nodes: usize,
) -> Result<f64, CertificateError> {
    let rmax = max_eigenvalue(r);
    if rmax > 1e-12 {
        return Err(CertificateError::RNotNegativeSemidefinite(rmax));
    }
    if r.abs().max() == 0.0 {
        return Ok(1.0);
    }
    let n_x = rf.sys.vars.n_x();
    let jac = SystemJacobians::new(&rf.sys);
    let w0 = DVector::zeros(rf.sys.vars.n_w());
    let x_grid = Grid::uniform(region.clone(), samples_per_dim);
    let eq_grid = Grid::uniform(eq_region.clone(), samples_per_dim);
    let eye = DMatrix::identity(n_x, n_x);

    let mut alpha = f64::NEG_INFINITY;
    let mut constrained = false;
    for xs in eq_grid.iter() {
        let x_star = DVector::from_column_slice(&xs);
        for xv in x_grid.iter() {
            let x = DVector::from_column_slice(&xv);
            let d = &x - &x_star;
            if d.norm() < 1e-12 {
                continue;
            }
            // Segment-averaged state Jacobian of the drift; the input enters
            // additively so the input value is irrelevant.
            let m = jac.eval_integral(&x, &w0, &x_star, &w0, quad_nodes)?;
            let lhs_vec = &rf.c * (&m.a - &eye) * &d;
            let rhs_vec = &rf.c * &d;
            let lhs = (lhs_vec.transpose() * r * &lhs_vec)[(0, 0)];
            let rhs = (rhs_vec.transpose() * r * &rhs_vec)[(0, 0)];
            if rhs >= -1e-14 {
                // No output separation: the constraint is vacuous.
                continue;
            }
            constrained = true;
            if lhs >= -1e-300 {
                // The left side vanishes: any α works for this pair.
                continue;
            }
            // lhs <= rhs/α with both negative  <=>  α >= rhs/lhs.
            alpha = alpha.max(rhs / lhs);
        }
    }
    if !constrained {
        return Err(CertificateError::Unconstrained);
    }
    if alpha <= 0.0 {
        return Err(CertificateError::NonPositiveAlpha(alpha));
    }
    Ok(alpha)
}

/// Universal-shifted gain bound `γ̃ = sqrt(α β² γ²)` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UspBound {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
}

pub fn usp_bound(alpha: f64, beta: f64, gamma: f64) -> Result<UspBound, CertificateError> {
    if alpha <= 0.0 {
        return Err(CertificateError::NonPositiveAlpha(alpha));
    }
    assert!(beta >= 0.0 && gamma >= 0.0);
    Ok(UspBound {
        alpha,
        beta,
        gamma,
        gamma_tilde: (alpha * beta * beta * gamma * gamma).sqrt(),
    })
}

/// How the stored coefficient matrices relate to the dissipation storage
/// `M(p)`: `direct` stores `M(p)` itself; `inverse` stores the congruent
/// gain-form variable `X(p)` with `M(p) = γ·X(p)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageForm {
    Direct,
    Inverse,
}

/// Serializable analysis certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub analysis: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Storage coefficient matrices, one per basis term, row-major.
    pub m: Vec<Vec<Vec<f64>>>,
    pub basis: Vec<String>,
    pub storage_form: StorageForm,
    pub alpha1: f64,
    pub alpha1_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
    pub region: RegionJson,
    pub grid: GridJson,
    pub system_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_sampled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_tilde: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionJson {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub p_counts: Vec<usize>,
    pub v_count: usize,
}

impl Certificate {
    /// Bundle a solve result with its provenance.
    #[allow(clippy::too_many_arguments)]
    pub fn from_solve(
        analysis: &str,
        result: &SolveResult,
        basis_texts: &[String],
        storage_form: StorageForm,
        alpha1: f64,
        region: &BoxRegion,
        p_counts: &[usize],
        v_count: usize,
        system_hash: &str,
    ) -> Self {
        Certificate {
            analysis: analysis.to_string(),
            status: result.status.to_string(),
            gamma: result.gamma,
            m: result
                .m
                .iter()
                .map(|mi| {
                    (0..mi.nrows())
                        .map(|r| mi.row(r).iter().copied().collect())
                        .collect()
                })
                .collect(),
            basis: basis_texts.to_vec(),
            storage_form,
            alpha1,
            alpha1_margin: result.alpha1_margin,
            alpha2: if result.status == SolveStatus::Infeasible {
                None
            } else {
                Some(result.alpha2)
            },
            region: RegionJson {
                lo: region.lo.clone(),
                hi: region.hi.clone(),
            },
            grid: GridJson {
                p_counts: p_counts.to_vec(),
                v_count,
            },
            system_hash: system_hash.to_string(),
            alpha: None,
            alpha_sampled: None,
            beta: None,
            gamma_tilde: None,
        }
    }

    /// Coefficient matrices back as dense matrices.
    pub fn m_matrices(&self) -> Vec<DMatrix<f64>> {
        self.m
            .iter()
            .map(|rows| {
                let n = rows.len();
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Content hash binding a certificate to a system: SHA-256 over the
/// canonicalized (printed) expressions, dimensions, and the sampling time
/// when the model came from discretization.
pub fn system_hash(sys: &DtSystem, ts: Option<f64>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let names = sys.vars.names();
    hasher.update(format!(
        "nx={};nw={};nz={};",
        sys.vars.n_x(),
        sys.vars.n_w(),
        sys.vars.n_z()
    ));
    for n in names {
        hasher.update(n.as_bytes());
        hasher.update(b";");
    }
    for e in sys.f.iter().chain(sys.h.iter()) {
        hasher.update(e.print(names).as_bytes());
        hasher.update(b";");
    }
    if let Some(ts) = ts {
        hasher.update(format!("ts={ts:.17e};"));
    }
    format!("{:x}", hasher.finalize())
}
