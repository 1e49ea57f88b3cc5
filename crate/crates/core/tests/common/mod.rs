// SPDX-License-Identifier: Apache-2.0

//! Instance generators and independent reference solvers shared by the
//! integration and acceptance tests.

#![allow(dead_code)]

use graphdiff_core::diffusion::{ConstraintSet, InnerProblem, NodeKind, Scores};
use graphdiff_core::graph::{build_knn_graph, Edge, Graph};
use graphdiff_core::FeatureMatrix;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected graph on `n` nodes: a ring with random weights plus random
/// chords.
pub fn random_small_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        if n == 2 && i == 1 {
            break;
        }
        edges.push(Edge { i: i.min(j), j: i.max(j), w: rng.random_range(0.2..1.0) });
    }
    for i in 0..n {
        for j in i + 2..n {
            if (i, j) != (0, n - 1) && rng.random_bool(0.4) {
                edges.push(Edge { i, j, w: rng.random_range(0.05..1.0) });
            }
        }
    }
    Graph::from_edges(n, edges).expect("ring is connected")
}

/// Gaussian clusters around orthogonal unit means, rows in class order.
pub fn blobs(rng: &mut ChaCha8Rng, counts: &[usize], dim: usize, spread: f64) -> (FeatureMatrix, Vec<usize>) {
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let mut x: Vec<f64> = (0..dim).map(|_| noise.sample(rng)).collect();
            x[c % dim] += 1.0;
            rows.push(x);
            truth.push(c);
        }
    }
    (FeatureMatrix::from_rows(&rows).expect("finite rows"), truth)
}

/// At least one labelled node per class, roughly `fraction` of each class.
pub fn stratified_labels(rng: &mut ChaCha8Rng, truth: &[usize], classes: usize, fraction: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        members.shuffle(rng);
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        out.extend(members[..take].iter().map(|&i| (i, c)));
    }
    out.sort_unstable();
    out
}

/// A random k-NN graph over clustered points with stratified labels.
pub fn random_knn_instance(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> (Graph, ConstraintSet) {
    let mut counts = vec![n / classes; classes];
    counts[0] += n - counts.iter().sum::<usize>();
    let spread = rng.random_range(0.2..0.6);
    let (x, truth) = blobs(rng, &counts, 8, spread);
    let k = rng.random_range(3..=8).min(n - 1);
    let g = build_knn_graph(&x, k, 3.0).expect("clustered points have positive similarities");
    let fraction = rng.random_range(0.05..0.3);
    let labels = stratified_labels(rng, &truth, classes, fraction);
    let cons = ConstraintSet::from_labels(n, classes, &labels, None).expect("valid labels");
    (g, cons)
}

/// Euclidean projection onto the constraint set, written out per entry.
pub fn reference_project(u: &mut [Vec<f64>], cons: &ConstraintSet) {
    let classes = u.len();
    let eps = cons.epsilon();
    for (i, kind) in cons.kinds().iter().enumerate() {
        match *kind {
            NodeKind::Labelled(c) => {
                for (k, col) in u.iter_mut().enumerate() {
                    col[i] = if k == c { col[i].max(eps) } else { col[i].min(-eps) };
                }
            }
            NodeKind::Unlabelled if classes > 1 => {
                let mean = u.iter().map(|col| col[i]).sum::<f64>() / classes as f64;
                for col in u.iter_mut() {
                    col[i] -= mean;
                }
            }
            NodeKind::Unlabelled => {}
        }
    }
}

/// `sum_k |u^k - a^k|^2 / (2 dt) + TV(u^k) - <c^k, u^k>` straight from the
/// edge list.
pub fn reference_objective(graph: &Graph, problem: &InnerProblem, u: &[Vec<f64>]) -> f64 {
    let d = graph.degrees();
    let mut total = 0.0;
    for (k, col) in u.iter().enumerate() {
        let a = problem.anchor.class(k);
        let c = problem.linear.class(k);
        for i in 0..col.len() {
            total += (col[i] - a[i]).powi(2) / (2.0 * problem.dt) - c[i] * col[i];
        }
        for e in graph.edges() {
            total += e.w * (col[e.i] / d[e.i] - col[e.j] / d[e.j]).abs();
        }
    }
    total
}

/// Projected subgradient descent with `2 / (mu (t + 1))` steps and
/// `t`-weighted averaging; returns the better of the averaged and best
/// iterate objectives.
pub fn subgradient_oracle(graph: &Graph, problem: &InnerProblem, cons: &ConstraintSet, iterations: usize) -> f64 {
    subgradient_oracle_point(graph, problem, cons, iterations).0
}

pub fn subgradient_oracle_point(
    graph: &Graph,
    problem: &InnerProblem,
    cons: &ConstraintSet,
    iterations: usize,
) -> (f64, Vec<Vec<f64>>) {
    let classes = problem.anchor.classes();
    let n = problem.anchor.nodes();
    let mu = 1.0 / problem.dt;
    let d = graph.degrees();
    let mut u: Vec<Vec<f64>> = (0..classes).map(|k| problem.anchor.class(k).to_vec()).collect();
    reference_project(&mut u, cons);
    let mut avg = vec![vec![0.0; n]; classes];
    let mut weight_sum = 0.0;
    let mut best = (reference_objective(graph, problem, &u), u.clone());
    let mut g = vec![vec![0.0; n]; classes];
    for t in 1..=iterations {
        for k in 0..classes {
            let a = problem.anchor.class(k);
            let c = problem.linear.class(k);
            for i in 0..n {
                g[k][i] = (u[k][i] - a[i]) / problem.dt - c[i];
            }
            for e in graph.edges() {
                let diff = u[k][e.i] / d[e.i] - u[k][e.j] / d[e.j];
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g[k][e.i] += e.w * s / d[e.i];
                g[k][e.j] -= e.w * s / d[e.j];
            }
        }
        let step = 2.0 / (mu * (t as f64 + 1.0));
        for k in 0..classes {
            for i in 0..n {
                u[k][i] -= step * g[k][i];
            }
        }
        reference_project(&mut u, cons);
        let w = t as f64;
        weight_sum += w;
        for k in 0..classes {
            for i in 0..n {
                avg[k][i] += (w / weight_sum) * (u[k][i] - avg[k][i]);
            }
        }
        if t % 64 == 0 || t == iterations {
            let f = reference_objective(graph, problem, &u);
            if f < best.0 {
                best = (f, u.clone());
            }
        }
    }
    let f = reference_objective(graph, problem, &avg);
    if f < best.0 {
        best = (f, avg);
    }
    best
}

pub fn scores_to_columns(u: &Scores) -> Vec<Vec<f64>> {
    (0..u.classes()).map(|k| u.class(k).to_vec()).collect()
}

/// Dense `m x n` matrix of `B = W D^-1` built from the edge list.
pub fn dense_incidence(graph: &Graph) -> DMatrix<f64> {
    let d = graph.degrees();
    let mut b = DMatrix::zeros(graph.edge_count(), graph.node_count());
    for (r, e) in graph.edges().iter().enumerate() {
        b[(r, e.i)] += e.w / d[e.i];
        b[(r, e.j)] -= e.w / d[e.j];
    }
    b
}

pub fn dense_spectral_norm(graph: &Graph) -> f64 {
    dense_incidence(graph).singular_values().max()
}

/// Perceptron run to convergence; `Some(epochs)` once an epoch makes no
/// mistakes, which certifies linear separability.
pub fn perceptron_separates(x: &FeatureMatrix, y: &[usize], max_epochs: usize) -> Option<usize> {
    let mut w = vec![0.0; x.dim() + 1];
    for epoch in 1..=max_epochs {
        let mut mistakes = 0;
        for (i, &label) in y.iter().enumerate() {
            let s = if label == 1 { 1.0 } else { -1.0 };
            let row = x.row(i);
            let f = w[0] + row.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
            if s * f <= 0.0 {
                mistakes += 1;
                w[0] += s;
                for (wj, xj) in w[1..].iter_mut().zip(row) {
                    *wj += s * xj;
                }
            }
        }
        if mistakes == 0 {
            return Some(epoch);
        }
    }
    None
}
