//! Conic backend: translate the affine PSD blocks into the solver's
//! standard form `min cᵀx  s.t.  Ax + s = b, s ∈ K` with one semidefinite
//! triangle cone per block.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use super::SdpProblem;
use crate::error::LmiError;

pub(super) enum RawOutcome {
    Optimal(Vec<f64>),
    AlmostOptimal(Vec<f64>),
    Infeasible,
}

/// Scaled upper-triangle vectorization (column-major, off-diagonals times
/// √2) used by the semidefinite triangle cone.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let s2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { s2 * m[(i, j)] });
        }
    }
    out
}

pub(super) fn solve_conic(problem: &SdpProblem) -> Result<RawOutcome, LmiError> {
    let n_vars = problem.n_vars();

    // b and the cone list come from the constant parts, block by block.
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(problem.blocks.len());
    for blk in &problem.blocks {
        b.extend(svec(&blk.f0));
        cones.push(SupportedConeT::PSDTriangleConeT(blk.dim));
    }
    let n_rows = b.len();

    // A column j stacks -svec(Fj) over all blocks.
    let mut colptr = Vec::with_capacity(n_vars + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..n_vars {
        let mut row = 0usize;
        for blk in &problem.blocks {
            for v in svec(&blk.coeffs[j]) {
                if v != 0.0 {
                    rowval.push(row);
                    nzval.push(-v);
                }
                row += 1;
            }
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(n_rows, n_vars, colptr, rowval, nzval);
    let p = CscMatrix::zeros((n_vars, n_vars));

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(1e-9)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .build()
        .map_err(|e| LmiError::Solver(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &problem.objective, &a, &b, &cones, settings)
        .map_err(|e| LmiError::Solver(format!("setup: {e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved => Ok(RawOutcome::Optimal(sol.x.clone())),
        SolverStatus::AlmostSolved => Ok(RawOutcome::AlmostOptimal(sol.x.clone())),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(RawOutcome::Infeasible)
        }
        other => Err(LmiError::Solver(format!("{other:?}"))),
    }
}
