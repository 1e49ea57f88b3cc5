// SPDX-License-Identifier: Apache-2.0

//! Quadratic (p=2) label spreading on the same graph, for comparison:
//! `F = (1 - alpha) (I - alpha S)^-1 Y` with `S = D^-1/2 W D^-1/2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::{ConstraintSet, NodeKind, Scores};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest graph solved with a dense factorisation under [`P2Solver::Auto`].
pub const DIRECT_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P2Solver {
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct P2Config {
    pub alpha: f64,
    pub solver: P2Solver,
    pub max_iter: usize,
    /// Stop when the fixed-point residual's max-norm drops to this value.
    pub tol: f64,
}

impl Default for P2Config {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            solver: P2Solver::Auto,
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

/// Result of [`diffuse_p2`].
#[derive(Debug, Clone)]
pub struct P2Result {
    pub scores: Scores,
    /// Fixed-point iterations used (zero for the direct solver).
    pub iterations: usize,
    /// `max |F - alpha S F - (1 - alpha) Y|` at the returned `F`.
    pub residual: f64,
}

/// `S = D^-1/2 W D^-1/2` applied to one class column.
fn apply_s(graph: &Graph, scale: &[f64], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for e in graph.edges() {
        let s = e.w * scale[e.i] * scale[e.j];
        out[e.i] += s * x[e.j];
        out[e.j] += s * x[e.i];
    }
}

fn one_hot(cons: &ConstraintSet) -> Scores {
    let mut y = Scores::zeros(cons.classes(), cons.nodes());
    for (i, kind) in cons.kinds().iter().enumerate() {
        if let NodeKind::Labelled(c) = *kind {
            y.class_mut(c)[i] = 1.0;
        }
    }
    y
}

fn residual(graph: &Graph, scale: &[f64], alpha: f64, f: &Scores, y: &Scores) -> f64 {
    let mut sf = vec![0.0; f.nodes()];
    let mut worst: f64 = 0.0;
    for k in 0..f.classes() {
        apply_s(graph, scale, f.class(k), &mut sf);
        for i in 0..f.nodes() {
            let r = f.get(k, i) - alpha * sf[i] - (1.0 - alpha) * y.get(k, i);
            worst = worst.max(r.abs());
        }
    }
    worst
}

pub fn diffuse_p2(graph: &Graph, cons: &ConstraintSet, cfg: &P2Config) -> Result<P2Result> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {}", cfg.alpha)));
    }
    let n = graph.node_count();
    if cons.nodes() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cons.nodes(),
        });
    }
    let scale: Vec<f64> = graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let y = one_hot(cons);
    let direct = match cfg.solver {
        P2Solver::Auto => n <= DIRECT_LIMIT,
        P2Solver::Direct => true,
        P2Solver::Iterative => false,
    };

    let (scores, iterations) = if direct {
        (solve_direct(graph, &scale, cfg.alpha, &y)?, 0)
    } else {
        solve_iterative(graph, &scale, cfg, &y)?
    };
    let residual = residual(graph, &scale, cfg.alpha, &scores, &y);
    Ok(P2Result {
        scores,
        iterations,
        residual,
    })
}

fn solve_direct(graph: &Graph, scale: &[f64], alpha: f64, y: &Scores) -> Result<Scores> {
    let n = graph.node_count();
    let mut a = DMatrix::<f64>::identity(n, n);
    for e in graph.edges() {
        let s = alpha * e.w * scale[e.i] * scale[e.j];
        a[(e.i, e.j)] -= s;
        a[(e.j, e.i)] -= s;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    // I - alpha S is symmetric with spectrum in [1 - alpha, 1 + alpha]
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let mut out = Scores::zeros(y.classes(), n);
    for k in 0..y.classes() {
        let rhs = DVector::from_iterator(n, y.class(k).iter().map(|v| (1.0 - alpha) * v));
        let sol = chol.solve(&rhs);
        out.class_mut(k).copy_from_slice(sol.as_slice());
    }
    Ok(out)
}

fn solve_iterative(graph: &Graph, scale: &[f64], cfg: &P2Config, y: &Scores) -> Result<(Scores, usize)> {
    let n = graph.node_count();
    let mut f = y.clone();
    let mut sf = vec![0.0; n];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut worst: f64 = 0.0;
        for k in 0..f.classes() {
            apply_s(graph, scale, f.class(k), &mut sf);
            let yk = y.class(k);
            for (i, fi) in f.class_mut(k).iter_mut().enumerate() {
                let next = cfg.alpha * sf[i] + (1.0 - cfg.alpha) * yk[i];
                worst = worst.max((next - *fi).abs());
                *fi = next;
            }
        }
        if !worst.is_finite() {
            return Err(Error::SingularSystem);
        }
        // cheap bound first; the true residual is checked before stopping
        if worst <= cfg.tol && residual(graph, scale, cfg.alpha, &f, y) <= cfg.tol {
            break;
        }
    }
    Ok((f, iterations))
}
