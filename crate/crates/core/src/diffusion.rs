// SPDX-License-Identifier: Apache-2.0

//! Multi-class label diffusion by minimising a sum of normalised p=1
//! Dirichlet ratios
//!
//! ```text
//! min_{|u|_2 = 1}  sum_k  |B u^k|_1 / |u^k|_1
//! ```
//!
//! subject to per-node constraints: a node labelled with class `k` must have
//! `u^k >= eps` and `u^k' <= -eps` for every other class, and the scores of an
//! unlabelled node must sum to zero across classes.
//!
//! Each outer step solves the strongly convex problem
//!
//! ```text
//! min_u |u - u_t|^2 / (2 dt) + sum_k ( |B u^k|_1 - c_k <sign(u_t^k), u^k> )
//! ```
//!
//! with `c_k` the current ratio of class `k`, using the accelerated
//! primal-dual iteration for strongly convex objectives. The result is then
//! median shifted per class and rescaled to unit norm.

use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Per-class node scores, stored class-major: `data[k * nodes + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    classes: usize,
    nodes: usize,
    data: Vec<f64>,
}

impl Scores {
    pub fn zeros(classes: usize, nodes: usize) -> Self {
        Self {
            classes,
            nodes,
            data: vec![0.0; classes * nodes],
        }
    }

    pub fn from_classes(per_class: Vec<Vec<f64>>) -> Result<Self> {
        let classes = per_class.len();
        let nodes = per_class.first().map_or(0, Vec::len);
        if classes == 0 || nodes == 0 {
            return Err(Error::InvalidConfig("scores need at least one class and one node".into()));
        }
        if let Some(bad) = per_class.iter().find(|v| v.len() != nodes) {
            return Err(Error::DimensionMismatch {
                expected: nodes,
                got: bad.len(),
            });
        }
        Ok(Self {
            classes,
            nodes,
            data: per_class.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn class(&self, k: usize) -> &[f64] {
        &self.data[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn class_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.nodes + i]
    }

    /// Scores of node `i` across classes.
    pub fn node(&self, i: usize) -> Vec<f64> {
        (0..self.classes).map(|k| self.get(k, i)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Global Euclidean norm over all `classes * nodes` entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Unlabelled,
    Labelled(usize),
}

/// Label constraints for one diffusion problem.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    kinds: Vec<NodeKind>,
    classes: usize,
    epsilon: f64,
}

/// Margin `1 / (2 sqrt(n L))`: the labelled box entries alone then carry at
/// most half of the unit norm.
pub fn default_epsilon(nodes: usize, classes: usize) -> f64 {
    0.5 / ((nodes * classes) as f64).sqrt()
}

impl ConstraintSet {
    pub fn new(kinds: Vec<NodeKind>, classes: usize, epsilon: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidConfig("at least one class is required".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
        }
        let n = kinds.len();
        if epsilon * ((n * classes) as f64).sqrt() >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon {epsilon} too large for {n} nodes and {classes} classes (need eps*sqrt(nL) < 1)"
            )));
        }
        let mut seen = vec![false; classes];
        for kind in &kinds {
            if let NodeKind::Labelled(c) = *kind {
                if c >= classes {
                    return Err(Error::ClassOutOfRange { class: c, classes });
                }
                seen[c] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(c));
        }
        Ok(Self {
            kinds,
            classes,
            epsilon,
        })
    }

    /// Builds constraints from `(node, class)` pairs; `epsilon = None` picks
    /// [`default_epsilon`].
    pub fn from_labels(
        nodes: usize,
        classes: usize,
        labelled: &[(usize, usize)],
        epsilon: Option<f64>,
    ) -> Result<Self> {
        let mut kinds = vec![NodeKind::Unlabelled; nodes];
        for &(i, c) in labelled {
            if i >= nodes {
                return Err(Error::IndexOutOfRange { index: i, n: nodes });
            }
            kinds[i] = NodeKind::Labelled(c);
        }
        Self::new(kinds, classes, epsilon.unwrap_or_else(|| default_epsilon(nodes, classes)))
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn labelled_count(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, NodeKind::Labelled(_))).count()
    }

    /// Largest violation of any constraint by `u`.
    pub fn max_violation(&self, u: &Scores) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, kind) in self.kinds.iter().enumerate() {
            match *kind {
                NodeKind::Unlabelled if self.classes > 1 => {
                    let s: f64 = (0..self.classes).map(|k| u.get(k, i)).sum();
                    worst = worst.max(s.abs());
                }
                NodeKind::Unlabelled => {}
                NodeKind::Labelled(c) => {
                    for k in 0..self.classes {
                        let v = u.get(k, i);
                        let gap = if k == c { self.epsilon - v } else { v + self.epsilon };
                        worst = worst.max(gap);
                    }
                }
            }
        }
        worst
    }
}

/// Outer/inner iteration controls.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub dt: f64,
    pub outer_max: usize,
    pub inner_max: usize,
    pub inner_tol: f64,
    pub outer_tol: f64,
    /// `None` selects [`default_epsilon`].
    pub epsilon: Option<f64>,
    /// Power iterations used to estimate `|B|`.
    pub norm_iterations: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            outer_max: 100,
            inner_max: 500,
            inner_tol: 1e-6,
            outer_tol: 1e-7,
            epsilon: None,
            norm_iterations: 50,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.inner_tol > 0.0 && self.inner_tol < 1.0) {
            return bad("inner_tol must lie in (0,1)");
        }
        if !(self.outer_tol > 0.0 && self.outer_tol < 1.0) {
            return bad("outer_tol must lie in (0,1)");
        }
        if self.inner_max == 0 {
            return bad("inner_max must be positive");
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return bad("epsilon must be positive");
            }
        }
        Ok(())
    }
}

/// Bookkeeping for one outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStep {
    /// Ratio objective of the shifted, normalised iterate entering the step.
    pub ratio_in: f64,
    /// Ratio objective of the inner-solve output.
    pub ratio_out: f64,
    pub inner_iterations: usize,
    /// False for a final step whose output raised the ratio above the
    /// previous accepted output; its output is discarded.
    pub accepted: bool,
}

/// Iterate of the outer loop.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    pub u: Scores,
    /// Dual edge variables, class-major, every entry in `[-1, 1]`.
    pub dual: Vec<f64>,
    pub outer_iter: usize,
    pub steps: Vec<OuterStep>,
}

impl DiffusionState {
    pub fn new(u: Scores, edges: usize) -> Self {
        let classes = u.classes();
        Self {
            u,
            dual: vec![0.0; classes * edges],
            outer_iter: 0,
            steps: Vec::new(),
        }
    }
}

/// `|B u|_1 = sum_e w_ij |u_i / d_i - u_j / d_j|`.
pub fn dirichlet_p1(graph: &Graph, u: &[f64]) -> Result<f64> {
    Ok(graph.incidence().forward(u)?.iter().map(|x| x.abs()).sum())
}

/// `sum_k |B u^k|_1 / |u^k|_1`.
pub fn ratio_objective(graph: &Graph, u: &Scores) -> Result<f64> {
    Ok(class_ratios(graph, u)?.iter().sum())
}

fn class_ratios(graph: &Graph, u: &Scores) -> Result<Vec<f64>> {
    (0..u.classes())
        .map(|k| {
            let mass: f64 = u.class(k).iter().map(|x| x.abs()).sum();
            if mass == 0.0 {
                return Err(Error::ZeroClassVector(k));
            }
            Ok(dirichlet_p1(graph, u.class(k))? / mass)
        })
        .collect()
}

/// Euclidean projection of one node's class scores onto its constraint set.
///
/// Unlabelled nodes are projected onto the sum-zero hyperplane when there
/// are at least two classes; with a single class there is nothing to couple
/// and the value is left free.
pub fn project_node_constraints(values: &mut [f64], kind: NodeKind, epsilon: f64) {
    match kind {
        NodeKind::Unlabelled => {
            if values.len() > 1 {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                values.iter_mut().for_each(|v| *v -= mean);
            }
        }
        NodeKind::Labelled(c) => {
            for (k, v) in values.iter_mut().enumerate() {
                *v = if k == c { v.max(epsilon) } else { v.min(-epsilon) };
            }
        }
    }
}

/// Projects every node of `u` onto its constraints.
pub fn project(u: &mut Scores, cons: &ConstraintSet) {
    let classes = u.classes();
    let n = u.nodes();
    let mut buf = vec![0.0; classes];
    for (i, &kind) in cons.kinds().iter().enumerate() {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = u.data[k * n + i];
        }
        project_node_constraints(&mut buf, kind, cons.epsilon());
        for (k, b) in buf.iter().enumerate() {
            u.data[k * n + i] = *b;
        }
    }
}

/// Subtracts each class's lower median, then rescales all classes jointly to
/// unit Euclidean norm.
pub fn median_shift_normalize(u: &Scores) -> Result<Scores> {
    let mut out = u.clone();
    let n = u.nodes();
    let mut scratch = vec![0.0; n];
    for k in 0..u.classes() {
        scratch.copy_from_slice(u.class(k));
        let mid = (n - 1) / 2;
        let (_, median, _) = scratch.select_nth_unstable_by(mid, f64::total_cmp);
        let median = *median;
        out.class_mut(k).iter_mut().for_each(|x| *x -= median);
    }
    let norm = out.norm();
    if norm == 0.0 {
        return Err(Error::AllZero);
    }
    if !norm.is_finite() {
        return Err(Error::NonFiniteValue("median shift"));
    }
    out.scale(1.0 / norm);
    Ok(out)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The strongly convex subproblem solved at each outer step.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    /// Previous iterate `u_t`.
    pub anchor: Scores,
    /// Linear coefficients `c_k * sign(u_t^k)`, same layout as `anchor`.
    pub linear: Scores,
    pub dt: f64,
    /// Ratio objective of `anchor`.
    pub ratio: f64,
}

impl InnerProblem {
    /// Subproblem anchored at the projection of `iterate` onto `cons`.
    ///
    /// Anchoring at a feasible point makes the anchor itself a candidate with
    /// objective zero, so the minimiser satisfies
    /// `sum_k |B u^k|_1 <= sum_k c_k <sign(anchor^k), u^k>`.
    pub fn new(graph: &Graph, iterate: &Scores, cons: &ConstraintSet, dt: f64) -> Result<Self> {
        let mut anchor = iterate.clone();
        project(&mut anchor, cons);
        let ratios = class_ratios(graph, &anchor)?;
        let mut linear = anchor.clone();
        for (k, c) in ratios.iter().enumerate() {
            linear.class_mut(k).iter_mut().for_each(|x| *x = c * sign(*x));
        }
        Ok(Self {
            anchor,
            linear,
            dt,
            ratio: ratios.iter().sum(),
        })
    }

    /// Value of the subproblem objective at `u` (constraints not included).
    pub fn objective(&self, graph: &Graph, u: &Scores) -> Result<f64> {
        let quad: f64 = u
            .as_slice()
            .iter()
            .zip(self.anchor.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (2.0 * self.dt);
        let lin: f64 = u.as_slice().iter().zip(self.linear.as_slice()).map(|(a, b)| a * b).sum();
        let mut tv = 0.0;
        for k in 0..u.classes() {
            tv += dirichlet_p1(graph, u.class(k))?;
        }
        Ok(quad + tv - lin)
    }
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub u: Scores,
    pub iterations: usize,
    /// Largest dual magnitude seen over all iterations.
    pub max_dual: f64,
}

/// Accelerated primal-dual solve of `problem`. The dual variables in `dual`
/// are used as a warm start and updated in place.
///
/// `op_norm` must upper-bound `|B|`; steps start at `tau = sigma = 0.99 / op_norm`.
pub fn inner_solve(
    graph: &Graph,
    problem: &InnerProblem,
    dual: &mut [f64],
    cons: &ConstraintSet,
    cfg: &DiffusionConfig,
    op_norm: f64,
) -> Result<InnerOutcome> {
    let n = graph.node_count();
    let m = graph.edge_count();
    let classes = problem.anchor.classes();
    if problem.anchor.nodes() != n || cons.nodes() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if cons.nodes() != n { cons.nodes() } else { problem.anchor.nodes() },
        });
    }
    if dual.len() != classes * m {
        return Err(Error::DimensionMismatch {
            expected: classes * m,
            got: dual.len(),
        });
    }
    let b = graph.incidence();
    let gamma = 1.0 / problem.dt;
    let mut tau = 0.99 / op_norm;
    let mut sigma = 0.99 / op_norm;

    let mut u = problem.anchor.clone();
    project(&mut u, cons);
    let mut u_bar = u.clone();
    let mut u_next = u.clone();
    let mut edge_buf = vec![0.0; m];
    let mut node_buf = vec![0.0; n];
    let mut max_dual: f64 = dual.iter().fold(0.0, |a, q| a.max(q.abs()));
    let mut iterations = 0;

    for _ in 0..cfg.inner_max {
        iterations += 1;
        for k in 0..classes {
            b.forward_into(u_bar.class(k), &mut edge_buf)?;
            let q = &mut dual[k * m..(k + 1) * m];
            for (qe, be) in q.iter_mut().zip(&edge_buf) {
                *qe = (*qe + sigma * be).clamp(-1.0, 1.0);
                max_dual = max_dual.max(qe.abs());
            }
            b.adjoint_into(q, &mut node_buf)?;
            let inv = 1.0 / (1.0 / tau + gamma);
            let cur = u.class(k);
            let anchor = problem.anchor.class(k);
            let lin = problem.linear.class(k);
            for (i, out) in u_next.class_mut(k).iter_mut().enumerate() {
                let z = cur[i] - tau * node_buf[i];
                *out = (z / tau + gamma * anchor[i] + lin[i]) * inv;
            }
        }
        project(&mut u_next, cons);
        if !u_next.is_finite() {
            return Err(Error::NonFiniteValue("inner primal-dual iterate"));
        }

        let theta = 1.0 / (1.0 + 2.0 * gamma * tau).sqrt();
        tau *= theta;
        sigma /= theta;

        let mut diff2 = 0.0;
        for ((bar, next), cur) in u_bar.data.iter_mut().zip(&u_next.data).zip(&u.data) {
            let d = next - cur;
            diff2 += d * d;
            *bar = next + theta * d;
        }
        std::mem::swap(&mut u, &mut u_next);
        let scale = u.norm().max(f64::MIN_POSITIVE);
        if diff2.sqrt() / scale < cfg.inner_tol {
            break;
        }
    }

    Ok(InnerOutcome {
        u,
        iterations,
        max_dual,
    })
}

/// Output of [`diffuse`].
#[derive(Debug, Clone)]
pub struct Diffusion {
    /// Converged scores: the last constraint-satisfying inner solution.
    pub scores: Scores,
    pub steps: Vec<OuterStep>,
    pub op_norm: f64,
}

impl Diffusion {
    pub fn outer_iterations(&self) -> usize {
        self.steps.len()
    }

    /// Ratio objective of each accepted inner-solve output, in order.
    /// Non-increasing by construction.
    pub fn ratio_history(&self) -> Vec<f64> {
        self.steps.iter().filter(|s| s.accepted).map(|s| s.ratio_out).collect()
    }

    /// Writes the `outer_iter,ratio_objective,inner_iters_used` trace.
    pub fn write_trace<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "outer_iter,ratio_objective,inner_iters_used")?;
        for (t, step) in self.steps.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                t + 1,
                crate::io::fmt_sig(step.ratio_out, 12),
                step.inner_iterations
            )?;
        }
        Ok(())
    }
}

/// Initial iterate: `+eps` / `-eps` on labelled entries, zero elsewhere,
/// median shifted and normalised.
pub fn initial_scores(cons: &ConstraintSet) -> Result<Scores> {
    let mut u = Scores::zeros(cons.classes(), cons.nodes());
    let eps = cons.epsilon();
    let n = cons.nodes();
    for (i, kind) in cons.kinds().iter().enumerate() {
        if let NodeKind::Labelled(c) = *kind {
            for k in 0..cons.classes() {
                u.data[k * n + i] = if k == c { eps } else { -eps };
            }
        }
    }
    median_shift_normalize(&u)
}

/// Runs `inner_solve -> median_shift_normalize` until the ratio of the
/// inner-solve output fails to improve on the previous one by `outer_tol`,
/// or `outer_max` steps have run. A final step that raised the ratio is
/// recorded but rejected, and the previous output is returned.
///
/// Every step satisfies `ratio_out <= ratio_in`: the solution of the
/// subproblem never has a larger ratio than the iterate it started from.
pub fn diffuse(graph: &Graph, cons: &ConstraintSet, cfg: &DiffusionConfig) -> Result<Diffusion> {
    cfg.validate()?;
    if cons.nodes() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            got: cons.nodes(),
        });
    }
    let op_norm = 1.01 * graph.incidence().operator_norm(cfg.norm_iterations);
    let start = initial_scores(cons)?;
    let mut last = start.clone();
    project(&mut last, cons);

    let mut state = DiffusionState::new(start, graph.edge_count());
    while state.outer_iter < cfg.outer_max {
        let problem = InnerProblem::new(graph, &state.u, cons, cfg.dt)?;
        let ratio_in = problem.ratio;
        let outcome = inner_solve(graph, &problem, &mut state.dual, cons, cfg, op_norm)?;
        let ratio_out = ratio_objective(graph, &outcome.u)?;
        let previous = state.steps.last().map(|s| s.ratio_out);
        let accepted = previous.is_none_or(|p| ratio_out <= p);
        state.outer_iter += 1;
        state.steps.push(OuterStep {
            ratio_in,
            ratio_out,
            inner_iterations: outcome.iterations,
            accepted,
        });
        if !accepted {
            break;
        }
        last = outcome.u;
        if previous.is_some_and(|p| p - ratio_out < cfg.outer_tol) {
            break;
        }
        state.u = median_shift_normalize(&last)?;
    }

    Ok(Diffusion {
        scores: last,
        steps: state.steps,
        op_norm,
    })
}
