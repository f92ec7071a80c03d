//! Discrete-time nonlinear system models, RK4 discretization of
//! continuous-time models, simulation, and equilibrium solving.

use nalgebra::{DMatrix, DVector};

use crate::error::{EquilibriumError, EvalError, ModelError, SimError};
use crate::expr::{Expr, VarSpace};

/// Newton tolerance on the fixed-point residual.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
/// Simulation aborts once any state magnitude exceeds this.
pub const DIVERGENCE_CUTOFF: f64 = 1e12;

/// Discrete-time system `x(t+1) = f(x(t), w(t))`, `z(t) = h(x(t), w(t))`
/// with `f`, `h` held as expression trees.
#[derive(Debug, Clone, PartialEq)]
pub struct DtSystem {
    pub vars: VarSpace,
    pub f: Vec<Expr>,
    pub h: Vec<Expr>,
}

/// Continuous-time system `dx/dt = fc(x, w)`, `z = h(x, w)`, used only as a
/// source for RK4 discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSystem {
    pub vars: VarSpace,
    pub fc: Vec<Expr>,
    pub h: Vec<Expr>,
}

fn check_dims(vars: &VarSpace, f: &[Expr], h: &[Expr]) -> Result<(), ModelError> {
    if f.len() != vars.n_x() {
        return Err(ModelError::DimensionMismatch {
            expected: vars.n_x(),
            got: f.len(),
        });
    }
    if h.len() != vars.n_z() {
        return Err(ModelError::DimensionMismatch {
            expected: vars.n_z(),
            got: h.len(),
        });
    }
    Ok(())
}

impl DtSystem {
    pub fn new(vars: VarSpace, f: Vec<Expr>, h: Vec<Expr>) -> Result<Self, ModelError> {
        check_dims(&vars, &f, &h)?;
        Ok(DtSystem { vars, f, h })
    }

    /// One step of the state map at `(x, w)`.
    pub fn step(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let vals = concat_vals(x, w);
        let mut out = DVector::zeros(self.vars.n_x());
        for (i, e) in self.f.iter().enumerate() {
            out[i] = e.eval(&vals)?;
        }
        Ok(out)
    }

    /// Output map at `(x, w)`.
    pub fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let vals = concat_vals(x, w);
        let mut out = DVector::zeros(self.vars.n_z());
        for (i, e) in self.h.iter().enumerate() {
            out[i] = e.eval(&vals)?;
        }
        Ok(out)
    }
}

impl CtSystem {
    pub fn new(vars: VarSpace, fc: Vec<Expr>, h: Vec<Expr>) -> Result<Self, ModelError> {
        check_dims(&vars, &fc, &h)?;
        Ok(CtSystem { vars, fc, h })
    }
}

pub(crate) fn concat_vals(x: &DVector<f64>, w: &DVector<f64>) -> Vec<f64> {
    x.iter().chain(w.iter()).copied().collect()
}

/// Discretize a continuous-time model with a fixed-step RK4 scheme under
/// zero-order-hold input.
///
/// The composition is done symbolically, so Jacobians taken of the returned
/// system differentiate the *discretized* map exactly. The output map is
/// carried over unchanged.
pub fn rk4_discretize(sys: &CtSystem, ts: f64) -> DtSystem {
    assert!(ts > 0.0, "sampling time must be positive");
    let n_x = sys.vars.n_x();
    let n_all = sys.vars.n_vars();

    let identity: Vec<Expr> = (0..n_all).map(Expr::Var).collect();
    let scale = |k: &[Expr], c: f64| -> Vec<Expr> {
        // substitution map: x_i -> x_i + c*k_i, inputs unchanged
        let mut subs = identity.clone();
        for i in 0..n_x {
            subs[i] = Expr::Bin(
                crate::expr::BinOp::Add,
                Box::new(Expr::Var(i)),
                Box::new(Expr::Bin(
                    crate::expr::BinOp::Mul,
                    Box::new(Expr::Const(c)),
                    Box::new(k[i].clone()),
                )),
            );
        }
        subs
    };
    let apply = |subs: &[Expr]| -> Vec<Expr> { sys.fc.iter().map(|e| e.substitute(subs)).collect() };

    let k1: Vec<Expr> = sys.fc.clone();
    let k2 = apply(&scale(&k1, ts / 2.0));
    let k3 = apply(&scale(&k2, ts / 2.0));
    let k4 = apply(&scale(&k3, ts));

    use crate::expr::BinOp::{Add, Mul};
    let bin = |op, a: Expr, b: Expr| Expr::Bin(op, Box::new(a), Box::new(b));
    let f: Vec<Expr> = (0..n_x)
        .map(|i| {
            let sum = bin(
                Add,
                bin(Add, k1[i].clone(), bin(Mul, Expr::Const(2.0), k2[i].clone())),
                bin(Add, bin(Mul, Expr::Const(2.0), k3[i].clone()), k4[i].clone()),
            );
            bin(
                Add,
                Expr::Var(i),
                bin(Mul, Expr::Const(ts / 6.0), sum),
            )
        })
        .collect();

    DtSystem {
        vars: sys.vars.clone(),
        f,
        h: sys.h.clone(),
    }
}

/// A simulated solution: `T+1` state samples, `T` inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// CSV with header `t,x1..xn,w1..wm,z1..zk`, 17 significant digits.
    /// The final row carries the terminal state; its input/output cells are
    /// left empty.
    pub fn to_csv(&self, vars: &VarSpace) -> String {
        let mut s = String::from("t");
        for n in vars.state_names() {
            s.push(',');
            s.push_str(n);
        }
        for n in vars.input_names() {
            s.push(',');
            s.push_str(n);
        }
        for k in 0..vars.n_z() {
            s.push_str(&format!(",z{}", k + 1));
        }
        s.push('\n');
        for t in 0..self.x.len() {
            s.push_str(&t.to_string());
            for v in self.x[t].iter() {
                s.push_str(&format!(",{:.16e}", v));
            }
            if t < self.w.len() {
                for v in self.w[t].iter() {
                    s.push_str(&format!(",{:.16e}", v));
                }
                for v in self.z[t].iter() {
                    s.push_str(&format!(",{:.16e}", v));
                }
            } else {
                for _ in 0..(vars.n_w() + vars.n_z()) {
                    s.push(',');
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Roll the recursion forward for `horizon` steps.
pub fn simulate(
    sys: &DtSystem,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory, SimError> {
    if w.len() < horizon {
        return Err(SimError::InputLength {
            needed: horizon,
            got: w.len(),
        });
    }
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut zs = Vec::with_capacity(horizon);
    xs.push(x0.clone());
    for t in 0..horizon {
        let x = &xs[t];
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_CUTOFF) {
            return Err(SimError::Divergence { t });
        }
        zs.push(sys.output(x, &w[t])?);
        let next = sys.step(x, &w[t])?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Divergence { t: t + 1 });
        }
        xs.push(next);
    }
    Ok(Trajectory {
        x: xs,
        w: w[..horizon].to_vec(),
        z: zs,
    })
}

/// A solved equilibrium `x* = f(x*, w*)` with `z* = h(x*, w*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
    pub residual: f64,
}

/// Damped Newton on `g(x) = f(x, w*) - x`, halving line search, at most 100
/// iterations.
pub fn find_equilibrium(
    sys: &DtSystem,
    w_star: &DVector<f64>,
    x_guess: &DVector<f64>,
) -> Result<Equilibrium, EquilibriumError> {
    let n = sys.vars.n_x();
    let jac: Vec<Vec<Expr>> = sys
        .f
        .iter()
        .map(|e| (0..n).map(|j| e.diff(j)).collect())
        .collect();

    let residual_vec = |x: &DVector<f64>| -> Result<DVector<f64>, EvalError> {
        Ok(sys.step(x, w_star)? - x)
    };

    let mut x = x_guess.clone();
    let mut g = residual_vec(&x)?;
    let mut best = g.norm();
    for _ in 0..100 {
        if best < EQUILIBRIUM_TOL {
            break;
        }
        let vals = concat_vals(&x, w_star);
        let mut jm = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                jm[(i, j)] = jac[i][j].eval(&vals)?;
            }
            jm[(i, i)] -= 1.0;
        }
        let lu = jm.lu();
        let step = match lu.solve(&g) {
            Some(s) => s,
            None => return Err(EquilibriumError::SingularJacobian),
        };
        // halving line search on the residual norm
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &x - alpha * &step;
            if let Ok(gc) = residual_vec(&cand) {
                if gc.norm() < best {
                    x = cand;
                    g = gc;
                    best = g.norm();
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if best >= EQUILIBRIUM_TOL {
        return Err(EquilibriumError::NoConvergence { residual: best });
    }
    let z = sys.output(&x, w_star)?;
    Ok(Equilibrium {
        x,
        w: w_star.clone(),
        z,
        residual: best,
    })
}

/// Forward increments of a trajectory: `dx(t) = x(t+1) - x(t)` for
/// `t = 0..T-1`, and `dw`, `dz` for `t = 0..T-2` (they need the sample at
/// `t + 1`).
#[allow(clippy::type_complexity)]
pub fn forward_difference(
    traj: &Trajectory,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>), SimError> {
    let t_max = traj.horizon();
    if t_max < 1 {
        return Err(SimError::HorizonTooShort(1));
    }
    let dx = (0..t_max).map(|t| &traj.x[t + 1] - &traj.x[t]).collect();
    let dw = (0..t_max.saturating_sub(1))
        .map(|t| &traj.w[t + 1] - &traj.w[t])
        .collect();
    let dz = (0..t_max.saturating_sub(1))
        .map(|t| &traj.z[t + 1] - &traj.z[t])
        .collect();
    Ok((dx, dw, dz))
}
