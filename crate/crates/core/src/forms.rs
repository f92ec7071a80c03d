//! Pointwise Jacobian matrices of a discrete-time system and their
//! segment-averaged (integral) counterparts.
//!
//! The integral matrices average each Jacobian entry along the straight
//! segment between two argument pairs, so that increments of `f` and `h`
//! factor exactly through them (up to quadrature error); `velocity_residual`
//! measures that defect.

use nalgebra::{DMatrix, DVector};

use crate::error::EvalError;
use crate::expr::Expr;
use crate::quad::gauss_legendre_unit;
use crate::system::{concat_vals, DtSystem};

/// Pointwise Jacobians of the state and output maps at `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Segment-averaged Jacobians over the straight path from `(x, w)` to
/// `(x⁺, w⁺)`, with the quadrature order used.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralFormMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub nodes: usize,
}

/// Precomputed symbolic Jacobian entries of a system, reusable across many
/// evaluation points.
#[derive(Debug, Clone)]
pub struct SystemJacobians {
    n_x: usize,
    n_w: usize,
    n_z: usize,
    /// df[i][j] = d f_i / d var_j over all variables (states then inputs).
    df: Vec<Vec<Expr>>,
    dh: Vec<Vec<Expr>>,
}

impl SystemJacobians {
    pub fn new(sys: &DtSystem) -> Self {
        let n_all = sys.vars.n_vars();
        let df = sys
            .f
            .iter()
            .map(|e| (0..n_all).map(|j| e.diff(j)).collect())
            .collect();
        let dh = sys
            .h
            .iter()
            .map(|e| (0..n_all).map(|j| e.diff(j)).collect())
            .collect();
        SystemJacobians {
            n_x: sys.vars.n_x(),
            n_w: sys.vars.n_w(),
            n_z: sys.vars.n_z(),
            df,
            dh,
        }
    }

    /// Evaluate all four Jacobian blocks at one point.
    pub fn eval(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<FormMatrices, EvalError> {
        let vals = concat_vals(x, w);
        self.eval_at(&vals)
    }

    fn eval_at(&self, vals: &[f64]) -> Result<FormMatrices, EvalError> {
        let (n_x, n_w, n_z) = (self.n_x, self.n_w, self.n_z);
        let mut a = DMatrix::zeros(n_x, n_x);
        let mut b = DMatrix::zeros(n_x, n_w);
        for i in 0..n_x {
            for j in 0..n_x {
                a[(i, j)] = self.df[i][j].eval(vals)?;
            }
            for j in 0..n_w {
                b[(i, j)] = self.df[i][n_x + j].eval(vals)?;
            }
        }
        let mut c = DMatrix::zeros(n_z, n_x);
        let mut d = DMatrix::zeros(n_z, n_w);
        for i in 0..n_z {
            for j in 0..n_x {
                c[(i, j)] = self.dh[i][j].eval(vals)?;
            }
            for j in 0..n_w {
                d[(i, j)] = self.dh[i][n_x + j].eval(vals)?;
            }
        }
        Ok(FormMatrices { a, b, c, d })
    }

    /// Average the Jacobians over the straight segment between the argument
    /// pairs using `nodes`-point Gauss-Legendre quadrature.
    pub fn eval_integral(
        &self,
        x_next: &DVector<f64>,
        w_next: &DVector<f64>,
        x: &DVector<f64>,
        w: &DVector<f64>,
        nodes: usize,
    ) -> Result<IntegralFormMatrices, EvalError> {
        assert!(nodes >= 2, "need at least two quadrature nodes");
        let (lam, wt) = gauss_legendre_unit(nodes);
        let mut a = DMatrix::zeros(self.n_x, self.n_x);
        let mut b = DMatrix::zeros(self.n_x, self.n_w);
        let mut c = DMatrix::zeros(self.n_z, self.n_x);
        let mut d = DMatrix::zeros(self.n_z, self.n_w);
        for (l, wq) in lam.iter().zip(&wt) {
            let xs = x + *l * (x_next - x);
            let ws = w + *l * (w_next - w);
            let fm = self.eval(&xs, &ws)?;
            a += *wq * fm.a;
            b += *wq * fm.b;
            c += *wq * fm.c;
            d += *wq * fm.d;
        }
        Ok(IntegralFormMatrices { a, b, c, d, nodes })
    }
}

/// Exact Jacobians of `f` and `h` at `(x, w)`.
pub fn eval_forms(
    sys: &DtSystem,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<FormMatrices, EvalError> {
    SystemJacobians::new(sys).eval(x, w)
}

/// Default quadrature order for the segment integrals.
pub const DEFAULT_QUAD_NODES: usize = 8;

/// Segment-averaged Jacobians between `(x, w)` and `(x⁺, w⁺)`.
pub fn eval_integral_forms(
    sys: &DtSystem,
    x_next: &DVector<f64>,
    w_next: &DVector<f64>,
    x: &DVector<f64>,
    w: &DVector<f64>,
    nodes: usize,
) -> Result<IntegralFormMatrices, EvalError> {
    SystemJacobians::new(sys).eval_integral(x_next, w_next, x, w, nodes)
}

/// Defect of the mean-value factorization: how far the true increments of
/// `f` and `h` are from `Ā·Δx + B̄·Δw` and `C̄·Δx + D̄·Δw`.
pub fn velocity_residual(
    sys: &DtSystem,
    jac: &SystemJacobians,
    x_next: &DVector<f64>,
    w_next: &DVector<f64>,
    x: &DVector<f64>,
    w: &DVector<f64>,
    nodes: usize,
) -> Result<f64, EvalError> {
    let m = jac.eval_integral(x_next, w_next, x, w, nodes)?;
    let dx = x_next - x;
    let dw = w_next - w;
    let df = sys.step(x_next, w_next)? - sys.step(x, w)?;
    let dh = sys.output(x_next, w_next)? - sys.output(x, w)?;
    let rf = (&df - (&m.a * &dx + &m.b * &dw)).norm();
    let rh = (&dh - (&m.c * &dx + &m.d * &dw)).norm();
    Ok(rf + rh)
}
