//! Grid-based matrix-inequality assembly and semidefinite solving.
//!
//! Decision variables are the symmetric coefficient matrices of a
//! scheduling-dependent storage `M(p) = Σ Mᵢ φᵢ(p)` plus, for gain
//! minimization, a scalar level `γ`. Every constraint is an affine positive
//! semidefinite block; affinity is guaranteed structurally by extracting the
//! constant and per-variable parts from a numeric block builder.

mod sdp;

use nalgebra::{DMatrix, DVector};

use crate::error::LmiError;
use crate::expr::{parse_with_names, Expr};
use crate::sets::{BoxRegion, Grid, GridEmbedding};

/// Quadratic supply rate `s(w, z) = wᵀQw + 2wᵀSz + zᵀRz`.
#[derive(Debug, Clone, PartialEq)]
pub struct QsrSupply {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl QsrSupply {
    /// Symmetrizes `q` and `r` on construction.
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, LmiError> {
        if !q.is_square() || !r.is_square() || s.nrows() != q.nrows() || s.ncols() != r.nrows() {
            return Err(LmiError::Dimension(format!(
                "supply blocks Q {}x{}, S {}x{}, R {}x{}",
                q.nrows(),
                q.ncols(),
                s.nrows(),
                s.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let q = 0.5 * (&q + q.transpose());
        let r = 0.5 * (&r + r.transpose());
        Ok(QsrSupply { q, s, r })
    }

    /// Gain supply `(γ²I, 0, −I)` encoding an ℓ2-gain bound of `γ`.
    pub fn l2_gain(gamma: f64, n_w: usize, n_z: usize) -> Self {
        QsrSupply {
            q: DMatrix::identity(n_w, n_w) * gamma * gamma,
            s: DMatrix::zeros(n_w, n_z),
            r: -DMatrix::identity(n_z, n_z),
        }
    }

    /// Passivity supply `(0, I/?, 0)`: `s(w, z) = 2wᵀz`.
    pub fn passivity(n: usize) -> Self {
        QsrSupply {
            q: DMatrix::zeros(n, n),
            s: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, n),
        }
    }

    pub fn n_w(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_z(&self) -> usize {
        self.r.nrows()
    }

    /// Evaluate the supply at an input/output pair.
    pub fn value(&self, w: &DVector<f64>, z: &DVector<f64>) -> f64 {
        (w.transpose() * &self.q * w)[(0, 0)]
            + 2.0 * (w.transpose() * &self.s * z)[(0, 0)]
            + (z.transpose() * &self.r * z)[(0, 0)]
    }

    /// Largest eigenvalue of `R` (negative semidefiniteness check).
    pub fn r_max_eigenvalue(&self) -> f64 {
        max_eigenvalue(&self.r)
    }
}

/// Scheduling-dependent storage basis `M(p) = Σ Mᵢ φᵢ(p)` with the constant
/// function always present as `φ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageBasis {
    p_names: Vec<String>,
    exprs: Vec<Expr>,
    texts: Vec<String>,
}

impl StorageBasis {
    /// Parse monomial strings over the scheduling coordinate names. The
    /// constant term `1` is prepended when not already first.
    pub fn parse(p_names: &[String], monomials: &[String]) -> Result<Self, LmiError> {
        let mut texts: Vec<String> = monomials.to_vec();
        if texts.first().map(|s| s.trim()) != Some("1") {
            texts.insert(0, "1".to_string());
        }
        let exprs = texts
            .iter()
            .map(|t| {
                parse_with_names(t, p_names)
                    .map_err(|e| LmiError::Dimension(format!("basis term `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StorageBasis {
            p_names: p_names.to_vec(),
            exprs,
            texts,
        })
    }

    /// Constant basis `{1}`.
    pub fn constant(p_names: &[String]) -> Self {
        StorageBasis::parse(p_names, &[]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.exprs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn p_names(&self) -> &[String] {
        &self.p_names
    }

    /// Basis functions evaluated at a scheduling point.
    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>, LmiError> {
        self.exprs
            .iter()
            .map(|e| e.eval(p).map_err(LmiError::from))
            .collect()
    }

    /// Scheduling coordinates any basis term reads.
    pub fn read_coords(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.exprs {
            e.free_vars(&mut out);
        }
        out.sort_unstable();
        out
    }

    /// Error if the basis reads a coordinate that is not state-mapped: the
    /// rate box is unbounded in input-mapped directions, so a storage that
    /// depended on them could not be verified over the whole rate set.
    pub fn check_state_only(&self, state_mapped: &[bool]) -> Result<(), LmiError> {
        for coord in self.read_coords() {
            if !state_mapped[coord] {
                return Err(LmiError::BasisReadsInputCoordinate { coord });
            }
        }
        Ok(())
    }
}

/// One affine positive-semidefinite constraint `F₀ + Σ xⱼ Fⱼ ⪰ 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub f0: DMatrix<f64>,
    /// Per-variable coefficient matrices, one per decision variable.
    pub coeffs: Vec<DMatrix<f64>>,
    /// Human-readable tag for diagnostics ("dd p=... v=...", "pd p=...").
    pub tag: String,
}

impl LmiBlock {
    /// Value of the block at decision values `x`.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (xj, fj) in x.iter().zip(&self.coeffs) {
            if *xj != 0.0 {
                m += *xj * fj;
            }
        }
        m
    }
}

/// Analysis kind recorded on problems and solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Fixed-supply feasibility in expanded (dissipation) form.
    DdFeasibility,
    /// Gain minimization; `γ` is the last decision variable.
    IncrementalL2,
    /// Passivity feasibility.
    IncrementalPassivity,
}

/// An assembled semidefinite program: affine PSD blocks over the storage
/// coefficients (and optional γ), with a linear objective.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub kind: ProblemKind,
    pub n_x: usize,
    pub n_terms: usize,
    pub blocks: Vec<LmiBlock>,
    /// Linear objective; all zeros for feasibility problems.
    pub objective: Vec<f64>,
    /// Index of the γ variable, when present.
    pub gamma_index: Option<usize>,
    pub alpha1: f64,
    /// Scheduling grid points used during assembly.
    pub p_grid: Grid,
    /// Rate points used during assembly (full scheduling dimension).
    pub v_points: Vec<Vec<f64>>,
}

impl SdpProblem {
    pub fn n_vars(&self) -> usize {
        self.n_terms * sym_dim(self.n_x) + self.gamma_index.map_or(0, |_| 1)
    }

    /// Reassemble the symmetric coefficient matrices from a flat variable
    /// vector.
    pub fn m_matrices(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.n_terms)
            .map(|i| sym_from_vars(self.n_x, &x[i * sym_dim(self.n_x)..]))
            .collect()
    }

    /// Plain-text sparse export: one line per nonzero —
    /// `block-id row col var-id coefficient`, with var-id −1 for the
    /// constant part.
    pub fn export_sparse(&self) -> String {
        let mut out = String::new();
        for (bid, blk) in self.blocks.iter().enumerate() {
            for r in 0..blk.dim {
                for c in 0..blk.dim {
                    let v = blk.f0[(r, c)];
                    if v != 0.0 {
                        out.push_str(&format!("{bid} {r} {c} -1 {v:.17e}\n"));
                    }
                    for (j, fj) in blk.coeffs.iter().enumerate() {
                        let v = fj[(r, c)];
                        if v != 0.0 {
                            out.push_str(&format!("{bid} {r} {c} {j} {v:.17e}\n"));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Solver verdict after post-verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Inaccurate,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Feasible => write!(f, "feasible"),
            SolveStatus::Infeasible => write!(f, "infeasible"),
            SolveStatus::Inaccurate => write!(f, "inaccurate"),
        }
    }
}

/// Outcome of a solve: status, optimized level, storage coefficients and
/// the post-checked margins.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Achieved γ for gain minimization.
    pub gamma: Option<f64>,
    /// Solved storage coefficient matrices Mᵢ.
    pub m: Vec<DMatrix<f64>>,
    /// Smallest eigenvalue of `M(p) − α₁I` over the p-grid (Condition-1
    /// slack); nonnegative for a valid certificate.
    pub alpha1_margin: f64,
    /// Largest eigenvalue of `M(p)` over the p-grid.
    pub alpha2: f64,
    /// Most negative eigenvalue over all constraint blocks at the solution.
    pub min_block_eig: f64,
    /// Raw decision vector.
    pub x: Vec<f64>,
}

pub(crate) fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Symmetric matrix from `sym_dim(n)` scalars in column-major upper-triangle
/// order.
pub(crate) fn sym_from_vars(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            m[(i, j)] = vals[k];
            m[(j, i)] = vals[k];
            k += 1;
        }
    }
    m
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    -max_eigenvalue(&(-m))
}

/// Extract the affine decomposition of a block from a numeric builder by
/// probing it at zero and at each unit vector. The builder must be affine in
/// the decision values; the unit-probe construction makes the stored block
/// affine by construction.
fn affine_block(
    n_vars: usize,
    dim: usize,
    tag: String,
    build: impl Fn(&[f64]) -> DMatrix<f64>,
) -> LmiBlock {
    let zero = vec![0.0; n_vars];
    let f0 = build(&zero);
    assert_eq!(f0.nrows(), dim);
    let mut coeffs = Vec::with_capacity(n_vars);
    let mut probe = zero;
    for j in 0..n_vars {
        probe[j] = 1.0;
        coeffs.push(build(&probe) - &f0);
        probe[j] = 0.0;
    }
    LmiBlock {
        dim,
        f0,
        coeffs,
        tag,
    }
}

/// Rate points actually needed: grid only the scheduling coordinates the
/// basis reads (the blocks depend on `v` solely through `M(p+v)`), keeping
/// the remaining coordinates at zero. `v_count` points per gridded
/// dimension, endpoints included.
fn rate_points(
    rate_box: &BoxRegion,
    read_coords: &[usize],
    v_count: usize,
) -> Vec<Vec<f64>> {
    let n = rate_box.dim();
    if read_coords.is_empty() {
        return vec![vec![0.0; n]];
    }
    let lo: Vec<f64> = read_coords.iter().map(|&c| rate_box.lo[c]).collect();
    let hi: Vec<f64> = read_coords.iter().map(|&c| rate_box.hi[c]).collect();
    let sub = Grid::uniform(BoxRegion::new(lo, hi).unwrap(), v_count);
    sub.iter()
        .map(|pt| {
            let mut v = vec![0.0; n];
            for (k, &c) in read_coords.iter().enumerate() {
                v[c] = pt[k];
            }
            v
        })
        .collect()
}

/// Shared assembly state: per-grid-point matrices and basis values.
struct AssemblyPoint {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    /// φ(p)
    phi: Vec<f64>,
    /// φ(p + v) for each rate point
    phi_shift: Vec<Vec<f64>>,
}

fn assembly_points(
    emb: &GridEmbedding,
    basis: &StorageBasis,
    p_grid: &Grid,
    v_points: &[Vec<f64>],
) -> Result<Vec<AssemblyPoint>, LmiError> {
    p_grid
        .iter()
        .map(|p| {
            let fm = emb
                .matrices_at(&p)
                .map_err(|e| LmiError::Dimension(e.to_string()))?;
            let phi = basis.eval(&p)?;
            let phi_shift = v_points
                .iter()
                .map(|v| {
                    let shifted: Vec<f64> = p.iter().zip(v).map(|(a, b)| a + b).collect();
                    basis.eval(&shifted)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AssemblyPoint {
                a: fm.a,
                b: fm.b,
                c: fm.c,
                d: fm.d,
                phi,
                phi_shift,
            })
        })
        .collect()
}

fn m_of(n_x: usize, phi: &[f64], vars: &[f64]) -> DMatrix<f64> {
    let sd = sym_dim(n_x);
    let mut m = DMatrix::zeros(n_x, n_x);
    for (i, w) in phi.iter().enumerate() {
        if *w != 0.0 {
            m += *w * sym_from_vars(n_x, &vars[i * sd..]);
        }
    }
    m
}

/// Append the Condition-1 blocks `M(p) − α₁I ⪰ 0` for every p-grid point.
fn push_pd_blocks(
    blocks: &mut Vec<LmiBlock>,
    points: &[AssemblyPoint],
    n_x: usize,
    n_vars: usize,
    alpha1: f64,
) {
    for (k, pt) in points.iter().enumerate() {
        let phi = pt.phi.clone();
        blocks.push(affine_block(n_vars, n_x, format!("pd p#{k}"), move |x| {
            m_of(n_x, &phi, x) - DMatrix::identity(n_x, n_x) * alpha1
        }));
    }
}

/// Fixed-supply dissipation feasibility: for every grid pair `(p, v)` the
/// expanded two-block condition
///
/// ```text
/// [ AᵀM⁺A − M − CᵀRC        AᵀM⁺B − Cᵀ(Sᵀ + RD)            ]
/// [ ⋆                        BᵀM⁺B − (Q + SD + DᵀSᵀ + DᵀRD) ]  ⪯ 0
/// ```
///
/// with `M = M(p)`, `M⁺ = M(p+v)`, stored negated as a `⪰ 0` block, plus
/// `M(p) ⪰ α₁I` at every p-grid point.
#[allow(clippy::too_many_arguments)]
pub fn assemble_dd_lmi(
    emb: &GridEmbedding,
    basis: &StorageBasis,
    supply: &QsrSupply,
    p_grid: &Grid,
    v_count: usize,
    alpha1: f64,
    require_r_nsd: bool,
) -> Result<SdpProblem, LmiError> {
    basis.check_state_only(&emb.map.state_mapped)?;
    if require_r_nsd {
        let rmax = supply.r_max_eigenvalue();
        if rmax > 1e-9 {
            return Err(LmiError::RNotNegativeSemidefinite(rmax));
        }
    }
    let n_x = emb_n_x(emb)?;
    let sd = sym_dim(n_x);
    let n_vars = basis.len() * sd;
    let v_points = rate_points(&emb.map.rate_box, &basis.read_coords(), v_count);
    let points = assembly_points(emb, basis, p_grid, &v_points)?;
    check_io_dims(&points, supply)?;

    let mut blocks = Vec::new();
    for (k, pt) in points.iter().enumerate() {
        for (vi, phi_plus) in pt.phi_shift.iter().enumerate() {
            let (a, b, c, d) = (pt.a.clone(), pt.b.clone(), pt.c.clone(), pt.d.clone());
            let (q, s, r) = (supply.q.clone(), supply.s.clone(), supply.r.clone());
            let phi = pt.phi.clone();
            let phi_plus = phi_plus.clone();
            let n_w = b.ncols();
            blocks.push(affine_block(
                n_vars,
                n_x + n_w,
                format!("dd p#{k} v#{vi}"),
                move |x| {
                    let m = m_of(n_x, &phi, x);
                    let mp = m_of(n_x, &phi_plus, x);
                    let t11 = a.transpose() * &mp * &a - &m - c.transpose() * &r * &c;
                    let t12 =
                        a.transpose() * &mp * &b - c.transpose() * (s.transpose() + &r * &d);
                    let t22 = b.transpose() * &mp * &b
                        - (&q + &s * &d + d.transpose() * s.transpose()
                            + d.transpose() * &r * &d);
                    let mut t = DMatrix::zeros(n_x + n_w, n_x + n_w);
                    t.view_mut((0, 0), (n_x, n_x)).copy_from(&t11);
                    t.view_mut((0, n_x), (n_x, n_w)).copy_from(&t12);
                    t.view_mut((n_x, 0), (n_w, n_x)).copy_from(&t12.transpose());
                    t.view_mut((n_x, n_x), (n_w, n_w)).copy_from(&t22);
                    -t
                },
            ));
        }
    }
    push_pd_blocks(&mut blocks, &points, n_x, n_vars, alpha1);

    Ok(SdpProblem {
        kind: ProblemKind::DdFeasibility,
        n_x,
        n_terms: basis.len(),
        blocks,
        objective: vec![0.0; n_vars],
        gamma_index: None,
        alpha1,
        p_grid: p_grid.clone(),
        v_points,
    })
}

/// Incremental ℓ2-gain minimization: per grid pair the four-block condition
///
/// ```text
/// [ M(p+v)   A·M(p)   B        0       ]
/// [ ⋆        M(p)     0        M(p)Cᵀ  ]
/// [ ⋆        ⋆        γI       Dᵀ      ]  ⪰ 0
/// [ ⋆        ⋆        ⋆        γI      ]
/// ```
///
/// affine in `(Mᵢ, γ)`, with objective `min γ` and `M(p) ⪰ α₁I`.
pub fn assemble_incremental_l2(
    emb: &GridEmbedding,
    basis: &StorageBasis,
    p_grid: &Grid,
    v_count: usize,
    alpha1: f64,
) -> Result<SdpProblem, LmiError> {
    basis.check_state_only(&emb.map.state_mapped)?;
    let n_x = emb_n_x(emb)?;
    let sd = sym_dim(n_x);
    let n_m_vars = basis.len() * sd;
    let n_vars = n_m_vars + 1;
    let gamma_index = n_m_vars;
    let v_points = rate_points(&emb.map.rate_box, &basis.read_coords(), v_count);
    let points = assembly_points(emb, basis, p_grid, &v_points)?;

    let mut blocks = Vec::new();
    for (k, pt) in points.iter().enumerate() {
        for (vi, phi_plus) in pt.phi_shift.iter().enumerate() {
            let (a, b, c, d) = (pt.a.clone(), pt.b.clone(), pt.c.clone(), pt.d.clone());
            let phi = pt.phi.clone();
            let phi_plus = phi_plus.clone();
            let n_w = b.ncols();
            let n_z = c.nrows();
            let dim = 2 * n_x + n_w + n_z;
            blocks.push(affine_block(
                n_vars,
                dim,
                format!("l2 p#{k} v#{vi}"),
                move |x| {
                    let m = m_of(n_x, &phi, x);
                    let mp = m_of(n_x, &phi_plus, x);
                    let g = x[gamma_index];
                    let mut t = DMatrix::zeros(dim, dim);
                    let (r1, r2, r3, r4) = (0, n_x, 2 * n_x, 2 * n_x + n_w);
                    t.view_mut((r1, r1), (n_x, n_x)).copy_from(&mp);
                    let am = &a * &m;
                    t.view_mut((r1, r2), (n_x, n_x)).copy_from(&am);
                    t.view_mut((r2, r1), (n_x, n_x)).copy_from(&am.transpose());
                    t.view_mut((r1, r3), (n_x, n_w)).copy_from(&b);
                    t.view_mut((r3, r1), (n_w, n_x)).copy_from(&b.transpose());
                    t.view_mut((r2, r2), (n_x, n_x)).copy_from(&m);
                    let mct = &m * c.transpose();
                    t.view_mut((r2, r4), (n_x, n_z)).copy_from(&mct);
                    t.view_mut((r4, r2), (n_z, n_x)).copy_from(&mct.transpose());
                    for i in 0..n_w {
                        t[(r3 + i, r3 + i)] = g;
                    }
                    t.view_mut((r3, r4), (n_w, n_z)).copy_from(&d.transpose());
                    t.view_mut((r4, r3), (n_z, n_w)).copy_from(&d);
                    for i in 0..n_z {
                        t[(r4 + i, r4 + i)] = g;
                    }
                    t
                },
            ));
        }
    }
    push_pd_blocks(&mut blocks, &points, n_x, n_vars, alpha1);

    let mut objective = vec![0.0; n_vars];
    objective[gamma_index] = 1.0;
    Ok(SdpProblem {
        kind: ProblemKind::IncrementalL2,
        n_x,
        n_terms: basis.len(),
        blocks,
        objective,
        gamma_index: Some(gamma_index),
        alpha1,
        p_grid: p_grid.clone(),
        v_points,
    })
}

/// Incremental passivity feasibility (square systems): per grid pair
///
/// ```text
/// [ M(p+v)   A·M(p)   B      ]
/// [ ⋆        M(p)     M(p)Cᵀ ]  ⪰ 0
/// [ ⋆        ⋆        D + Dᵀ ]
/// ```
pub fn assemble_incremental_passivity(
    emb: &GridEmbedding,
    basis: &StorageBasis,
    p_grid: &Grid,
    v_count: usize,
    alpha1: f64,
) -> Result<SdpProblem, LmiError> {
    basis.check_state_only(&emb.map.state_mapped)?;
    let n_x = emb_n_x(emb)?;
    let sd = sym_dim(n_x);
    let n_vars = basis.len() * sd;
    let v_points = rate_points(&emb.map.rate_box, &basis.read_coords(), v_count);
    let points = assembly_points(emb, basis, p_grid, &v_points)?;
    for pt in &points {
        let n_w = pt.b.ncols();
        let n_z = pt.c.nrows();
        if n_w != n_z {
            return Err(LmiError::PassivityDimension { n_w, n_z });
        }
    }

    let mut blocks = Vec::new();
    for (k, pt) in points.iter().enumerate() {
        for (vi, phi_plus) in pt.phi_shift.iter().enumerate() {
            let (a, b, c, d) = (pt.a.clone(), pt.b.clone(), pt.c.clone(), pt.d.clone());
            let phi = pt.phi.clone();
            let phi_plus = phi_plus.clone();
            let n_w = b.ncols();
            let dim = 2 * n_x + n_w;
            blocks.push(affine_block(
                n_vars,
                dim,
                format!("pass p#{k} v#{vi}"),
                move |x| {
                    let m = m_of(n_x, &phi, x);
                    let mp = m_of(n_x, &phi_plus, x);
                    let mut t = DMatrix::zeros(dim, dim);
                    let (r1, r2, r3) = (0, n_x, 2 * n_x);
                    t.view_mut((r1, r1), (n_x, n_x)).copy_from(&mp);
                    let am = &a * &m;
                    t.view_mut((r1, r2), (n_x, n_x)).copy_from(&am);
                    t.view_mut((r2, r1), (n_x, n_x)).copy_from(&am.transpose());
                    t.view_mut((r1, r3), (n_x, n_w)).copy_from(&b);
                    t.view_mut((r3, r1), (n_w, n_x)).copy_from(&b.transpose());
                    t.view_mut((r2, r2), (n_x, n_x)).copy_from(&m);
                    let mct = &m * c.transpose();
                    t.view_mut((r2, r3), (n_x, n_w)).copy_from(&mct);
                    t.view_mut((r3, r2), (n_w, n_x)).copy_from(&mct.transpose());
                    let dsym = &d + d.transpose();
                    t.view_mut((r3, r3), (n_w, n_w)).copy_from(&dsym);
                    t
                },
            ));
        }
    }
    push_pd_blocks(&mut blocks, &points, n_x, n_vars, alpha1);

    Ok(SdpProblem {
        kind: ProblemKind::IncrementalPassivity,
        n_x,
        n_terms: basis.len(),
        blocks,
        objective: vec![0.0; n_vars],
        gamma_index: None,
        alpha1,
        p_grid: p_grid.clone(),
        v_points,
    })
}

fn emb_n_x(emb: &GridEmbedding) -> Result<usize, LmiError> {
    let p0 = emb.map.p_box.center();
    let fm = emb
        .matrices_at(&p0)
        .map_err(|e| LmiError::Dimension(e.to_string()))?;
    Ok(fm.a.nrows())
}

fn check_io_dims(points: &[AssemblyPoint], supply: &QsrSupply) -> Result<(), LmiError> {
    if let Some(pt) = points.first() {
        if pt.b.ncols() != supply.n_w() || pt.c.nrows() != supply.n_z() {
            return Err(LmiError::Dimension(format!(
                "supply sized for ({}, {}) but system has ({}, {})",
                supply.n_w(),
                supply.n_z(),
                pt.b.ncols(),
                pt.c.nrows()
            )));
        }
    }
    Ok(())
}

/// Solve an assembled problem with the conic backend, then re-check every
/// block eigenvalue at the solution (tolerance −1e−7).
pub fn solve(problem: &SdpProblem) -> Result<SolveResult, LmiError> {
    let raw = sdp::solve_conic(problem)?;
    let x = match raw {
        sdp::RawOutcome::Optimal(x) | sdp::RawOutcome::AlmostOptimal(x) => x,
        sdp::RawOutcome::Infeasible => {
            return Ok(SolveResult {
                status: SolveStatus::Infeasible,
                gamma: None,
                m: Vec::new(),
                alpha1_margin: f64::NEG_INFINITY,
                alpha2: f64::NAN,
                min_block_eig: f64::NEG_INFINITY,
                x: Vec::new(),
            })
        }
    };

    // The returned point, not the solver's accuracy report, decides the
    // verdict: feasible iff every block verifies at the solution.
    let mut min_eig = f64::INFINITY;
    for blk in &problem.blocks {
        min_eig = min_eig.min(min_eigenvalue(&blk.value(&x)));
    }
    let status = if min_eig >= -1e-7 {
        SolveStatus::Feasible
    } else {
        SolveStatus::Inaccurate
    };

    let m = problem.m_matrices(&x);
    let gamma = problem.gamma_index.map(|gi| x[gi]);

    // Condition-1 slack and the upper storage bound over the p-grid.
    let sd = sym_dim(problem.n_x);
    let mut alpha1_margin = f64::INFINITY;
    let mut alpha2 = f64::NEG_INFINITY;
    for blk in problem.blocks.iter().filter(|b| b.tag.starts_with("pd ")) {
        let val = blk.value(&x);
        alpha1_margin = alpha1_margin.min(min_eigenvalue(&val));
        alpha2 = alpha2.max(max_eigenvalue(&val) + problem.alpha1);
    }
    let _ = sd;

    Ok(SolveResult {
        status,
        gamma,
        m,
        alpha1_margin,
        alpha2,
        min_block_eig: min_eig,
        x,
    })
}

/// Cross-check of the four-block gain condition against the expanded
/// dissipation form with supply `(γ²I, 0, −I)`.
///
/// The storage entering the expanded form is `M(p)`; the four-block form is
/// evaluated at the congruent variable `X(p) = γ·M(p)⁻¹`. Returns true iff
/// both forms agree on feasibility (eigenvalue sign, tolerance 1e−8) at
/// every grid pair.
pub fn schur_equivalence_check(
    emb: &GridEmbedding,
    basis: &StorageBasis,
    m_coeffs: &[DMatrix<f64>],
    gamma: f64,
    p_grid: &Grid,
    v_count: usize,
) -> Result<bool, LmiError> {
    let tol = 1e-8;
    let v_points = rate_points(&emb.map.rate_box, &basis.read_coords(), v_count);
    let n_x = m_coeffs[0].nrows();
    let eval_m = |p: &[f64]| -> Result<DMatrix<f64>, LmiError> {
        let phi = basis.eval(p)?;
        let mut m = DMatrix::zeros(n_x, n_x);
        for (w, mi) in phi.iter().zip(m_coeffs) {
            m += *w * mi;
        }
        Ok(m)
    };
    for p in p_grid.iter() {
        let fm = emb
            .matrices_at(&p)
            .map_err(|e| LmiError::Dimension(e.to_string()))?;
        let m = eval_m(&p)?;
        let x_p = gamma
            * m.clone()
                .try_inverse()
                .ok_or_else(|| LmiError::Dimension("singular storage matrix".into()))?;
        for v in &v_points {
            let shifted: Vec<f64> = p.iter().zip(v).map(|(a, b)| a + b).collect();
            let mp = eval_m(&shifted)?;
            let x_plus = gamma
                * mp.clone()
                    .try_inverse()
                    .ok_or_else(|| LmiError::Dimension("singular storage matrix".into()))?;

            // Expanded dissipation form with (γ²I, 0, −I).
            let (a, b, c, d) = (&fm.a, &fm.b, &fm.c, &fm.d);
            let n_w = b.ncols();
            let n_z = c.nrows();
            let q = DMatrix::identity(n_w, n_w) * gamma * gamma;
            let r = -DMatrix::identity(n_z, n_z);
            let t11 = a.transpose() * &mp * a - &m - c.transpose() * &r * c;
            let t12 = a.transpose() * &mp * b - c.transpose() * (&r * d);
            let t22 =
                b.transpose() * &mp * b - (&q + d.transpose() * &r * d);
            let mut t = DMatrix::zeros(n_x + n_w, n_x + n_w);
            t.view_mut((0, 0), (n_x, n_x)).copy_from(&t11);
            t.view_mut((0, n_x), (n_x, n_w)).copy_from(&t12);
            t.view_mut((n_x, 0), (n_w, n_x)).copy_from(&t12.transpose());
            t.view_mut((n_x, n_x), (n_w, n_w)).copy_from(&t22);
            let dd_feasible = max_eigenvalue(&t) <= tol;

            // Four-block form at X = γM⁻¹.
            let dim = 2 * n_x + n_w + n_z;
            let mut f = DMatrix::zeros(dim, dim);
            let (r1, r2, r3, r4) = (0, n_x, 2 * n_x, 2 * n_x + n_w);
            f.view_mut((r1, r1), (n_x, n_x)).copy_from(&x_plus);
            let ax = a * &x_p;
            f.view_mut((r1, r2), (n_x, n_x)).copy_from(&ax);
            f.view_mut((r2, r1), (n_x, n_x)).copy_from(&ax.transpose());
            f.view_mut((r1, r3), (n_x, n_w)).copy_from(b);
            f.view_mut((r3, r1), (n_w, n_x)).copy_from(&b.transpose());
            f.view_mut((r2, r2), (n_x, n_x)).copy_from(&x_p);
            let xct = &x_p * c.transpose();
            f.view_mut((r2, r4), (n_x, n_z)).copy_from(&xct);
            f.view_mut((r4, r2), (n_z, n_x)).copy_from(&xct.transpose());
            for i in 0..n_w {
                f[(r3 + i, r3 + i)] = gamma;
            }
            f.view_mut((r3, r4), (n_w, n_z)).copy_from(&d.transpose());
            f.view_mut((r4, r3), (n_z, n_w)).copy_from(d);
            for i in 0..n_z {
                f[(r4 + i, r4 + i)] = gamma;
            }
            let four_feasible = min_eigenvalue(&f) >= -tol;

            if dd_feasible != four_feasible {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
