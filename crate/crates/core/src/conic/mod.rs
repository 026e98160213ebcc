//! Standard-form PSD-cone programs and a certified dense solver.
//!
//! A [`ConicProgram`] holds scalar variables, hermitian PSD matrix variables,
//! a linear objective, linear equality/inequality constraints over trace
//! functionals, and affine PSD constraints. [`ConicProgram::solve`] runs a
//! primal-dual interior-point method on the self-dual embedding of the
//! problem; every `Optimal` result carries residuals that are re-checked
//! against the original data, independent of the solver internals, by
//! [`ConicProgram::verify`].

pub mod linalg;
mod solver;

use crate::{C64, CMat};
use linalg::{hermitian_part, min_eig};
pub use solver::{ResidualReport, SolveResult, SolveStatus, SolverOptions};

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarVar(pub(crate) usize);

impl ScalarVar {
    /// Position in [`SolveResult::scalars`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a hermitian PSD matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsdVar(pub(crate) usize);

impl PsdVar {
    /// Position in [`SolveResult::blocks`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Real-valued affine expression: constant + sum of scalar terms + sum of
/// trace terms `tr(M X)` with hermitian coefficient `M`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub(crate) constant: f64,
    pub(crate) scalars: Vec<(usize, f64)>,
    pub(crate) traces: Vec<(usize, CMat)>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }

    pub fn var(v: ScalarVar) -> Self {
        Self::new().plus_scalar(v, 1.0)
    }

    pub fn trace(b: PsdVar, m: CMat) -> Self {
        Self::new().plus_trace(b, m)
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn plus_scalar(mut self, v: ScalarVar, coef: f64) -> Self {
        self.scalars.push((v.0, coef));
        self
    }

    /// Adds `coef * tr(M X_b)`. `m` is hermitianized defensively.
    pub fn plus_trace(mut self, b: PsdVar, m: CMat) -> Self {
        self.traces.push((b.0, hermitian_part(&m)));
        self
    }

    fn negated(&self) -> Self {
        Self {
            constant: -self.constant,
            scalars: self.scalars.iter().map(|&(v, c)| (v, -c)).collect(),
            traces: self.traces.iter().map(|(b, m)| (*b, -m.clone())).collect(),
        }
    }

    /// Evaluates the expression at given variable values.
    pub fn eval(&self, scalars: &[f64], blocks: &[CMat]) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.scalars {
            v += c * scalars[i];
        }
        for (b, m) in &self.traces {
            v += (m * &blocks[*b]).trace().re;
        }
        v
    }
}

/// Objective direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
struct ScalarInfo {
    name: String,
    lb: Option<f64>,
    ub: Option<f64>,
}

#[derive(Debug, Clone)]
struct BlockInfo {
    name: String,
    dim: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum PsdConstraint {
    /// `[[x, 1], [1, a]] >= 0`, the conic form of `x * a >= 1` with both
    /// factors nonnegative.
    Hyperbolic { x: LinExpr, a: LinExpr },
    /// `constant + sum_v s_v * M_v >= 0` over scalar variables.
    ScalarAffine { constant: CMat, terms: Vec<(usize, CMat)> },
}

/// A conic program over scalar and hermitian-PSD matrix variables.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    scalars: Vec<ScalarInfo>,
    blocks: Vec<BlockInfo>,
    sense_max: bool,
    objective: LinExpr,
    eqs: Vec<(LinExpr, f64)>,
    ineqs: Vec<(LinExpr, f64)>,
    psd_cons: Vec<PsdConstraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scalar(&mut self, name: &str) -> ScalarVar {
        self.add_scalar_bounded(name, None, None)
    }

    pub fn add_scalar_bounded(&mut self, name: &str, lb: Option<f64>, ub: Option<f64>) -> ScalarVar {
        self.scalars.push(ScalarInfo { name: name.into(), lb, ub });
        ScalarVar(self.scalars.len() - 1)
    }

    pub fn add_psd(&mut self, name: &str, dim: usize) -> PsdVar {
        assert!(dim >= 1, "psd block must be at least 1x1");
        self.blocks.push(BlockInfo { name: name.into(), dim });
        PsdVar(self.blocks.len() - 1)
    }

    pub fn set_objective(&mut self, sense: Sense, expr: LinExpr) {
        self.sense_max = sense == Sense::Maximize;
        self.objective = expr;
    }

    /// `expr == rhs`.
    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.eqs.push((expr, rhs));
    }

    /// `expr <= rhs`.
    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.ineqs.push((expr, rhs));
    }

    /// `expr >= rhs`.
    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.ineqs.push((expr.negated(), -rhs));
    }

    /// Encodes `x * a >= 1` (with `x, a >= 0`) as the 2x2 PSD block
    /// `[[x, 1], [1, a]] >= 0`, exactly the convex form of a constraint
    /// `1/a <= x` on positive quantities.
    pub fn add_hyperbolic(&mut self, x: LinExpr, a: LinExpr) {
        self.psd_cons.push(PsdConstraint::Hyperbolic { x, a });
    }

    /// Affine PSD constraint `constant + sum_v s_v * M_v >= 0` in scalar
    /// variables with hermitian coefficient matrices.
    pub fn add_psd_scalar_affine(&mut self, constant: CMat, terms: Vec<(ScalarVar, CMat)>) {
        let dim = constant.nrows();
        for (_, m) in &terms {
            assert_eq!(m.nrows(), dim, "psd affine coefficient dimension mismatch");
        }
        self.psd_cons.push(PsdConstraint::ScalarAffine {
            constant: hermitian_part(&constant),
            terms: terms
                .into_iter()
                .map(|(v, m)| (v.0, hermitian_part(&m)))
                .collect(),
        });
    }

    pub fn num_scalars(&self) -> usize {
        self.scalars.len()
    }

    pub fn num_psd_vars(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.eqs.len()
    }

    /// Explicitly added linear inequalities (bounds not included).
    pub fn num_inequalities(&self) -> usize {
        self.ineqs.len()
    }

    pub fn num_psd_constraints(&self) -> usize {
        self.psd_cons.len()
    }

    pub fn block_dim(&self, b: PsdVar) -> usize {
        self.blocks[b.0].dim
    }

    /// Solves the program. See [`SolverOptions`] for tolerances.
    pub fn solve(&self, opts: &SolverOptions) -> SolveResult {
        solver::solve(self, opts)
    }

    /// Independent feasibility re-check of a solution against the original
    /// program data. Used to certify every `Optimal` result outside the
    /// solver's own bookkeeping.
    pub fn verify(&self, scalars: &[f64], blocks: &[CMat]) -> Verification {
        let mut max_eq = 0.0f64;
        for (e, rhs) in &self.eqs {
            max_eq = max_eq.max((e.eval(scalars, blocks) - rhs).abs());
        }
        let mut max_ineq = 0.0f64;
        for (e, rhs) in &self.ineqs {
            max_ineq = max_ineq.max(e.eval(scalars, blocks) - rhs);
        }
        for (i, info) in self.scalars.iter().enumerate() {
            if let Some(lb) = info.lb {
                max_ineq = max_ineq.max(lb - scalars[i]);
            }
            if let Some(ub) = info.ub {
                max_ineq = max_ineq.max(scalars[i] - ub);
            }
        }
        let mut min_psd = f64::INFINITY;
        for b in blocks {
            if b.nrows() > 0 {
                min_psd = min_psd.min(min_eig(b));
            }
        }
        for c in &self.psd_cons {
            let m = self.psd_constraint_value(c, scalars, blocks);
            min_psd = min_psd.min(min_eig(&m));
        }
        if !min_psd.is_finite() {
            min_psd = 0.0;
        }
        Verification {
            max_eq_residual: max_eq,
            max_ineq_violation: max_ineq.max(0.0),
            min_psd_eig: min_psd,
            objective: self.objective.eval(scalars, blocks),
        }
    }

    fn psd_constraint_value(&self, c: &PsdConstraint, scalars: &[f64], blocks: &[CMat]) -> CMat {
        match c {
            PsdConstraint::Hyperbolic { x, a } => {
                let xv = x.eval(scalars, blocks);
                let av = a.eval(scalars, blocks);
                CMat::from_row_slice(2, 2, &[
                    C64::new(xv, 0.0),
                    C64::new(1.0, 0.0),
                    C64::new(1.0, 0.0),
                    C64::new(av, 0.0),
                ])
            }
            PsdConstraint::ScalarAffine { constant, terms } => {
                let mut m = constant.clone();
                for (v, coef) in terms {
                    m += coef.scale(scalars[*v]);
                }
                m
            }
        }
    }

    /// Sparse text dump (triplet lists) for external verification.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "sense {}", if self.sense_max { "max" } else { "min" });
        for (i, v) in self.scalars.iter().enumerate() {
            let _ = writeln!(s, "scalar {} {} lb={:?} ub={:?}", i, v.name, v.lb, v.ub);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "psdvar {} {} dim={}", i, b.name, b.dim);
        }
        let expr_lines = |s: &mut String, tag: &str, e: &LinExpr| {
            for (v, c) in &e.scalars {
                let _ = writeln!(s, "{tag} s {v} {c:.17e}");
            }
            for (b, m) in &e.traces {
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        let z = m[(i, j)];
                        if z.norm() > 0.0 {
                            let _ = writeln!(s, "{tag} m {b} {i} {j} {:.17e} {:.17e}", z.re, z.im);
                        }
                    }
                }
            }
            if e.constant != 0.0 {
                let _ = writeln!(s, "{tag} const {:.17e}", e.constant);
            }
        };
        expr_lines(&mut s, "obj", &self.objective);
        for (k, (e, rhs)) in self.eqs.iter().enumerate() {
            expr_lines(&mut s, &format!("eq{k}"), e);
            let _ = writeln!(s, "eq{k} rhs {rhs:.17e}");
        }
        for (k, (e, rhs)) in self.ineqs.iter().enumerate() {
            expr_lines(&mut s, &format!("le{k}"), e);
            let _ = writeln!(s, "le{k} rhs {rhs:.17e}");
        }
        for (k, c) in self.psd_cons.iter().enumerate() {
            match c {
                PsdConstraint::Hyperbolic { .. } => {
                    let _ = writeln!(s, "psdcon{k} hyperbolic");
                }
                PsdConstraint::ScalarAffine { constant, .. } => {
                    let _ = writeln!(s, "psdcon{k} affine dim={}", constant.nrows());
                }
            }
        }
        s
    }

}

/// Outcome of [`ConicProgram::verify`].
#[derive(Debug, Clone, Copy)]
pub struct Verification {
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub min_psd_eig: f64,
    pub objective: f64,
}

impl Verification {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_eq_residual <= tol && self.max_ineq_violation <= tol && self.min_psd_eig >= -tol
    }
}

/// The 2x2 matrix `[[x, 1], [1, a]]` underlying [`ConicProgram::add_hyperbolic`];
/// PSD iff `x >= 0`, `a >= 0`, and `x * a >= 1`.
pub fn hyperbolic_block(x: f64, a: f64) -> CMat {
    CMat::from_row_slice(2, 2, &[
        C64::new(x, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(a, 0.0),
    ])
}
