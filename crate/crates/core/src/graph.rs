// SPDX-License-Identifier: Apache-2.0

//! Sparse similarity graphs and the degree-normalised edge incidence operator.
//!
//! Each undirected edge `e = (i, j)` with `i < j` is stored once. The incidence
//! operator maps a node vector `u` to the edge vector
//!
//! ```text
//! (B u)_e = w_ij * (u_i / d_i - u_j / d_j)
//! ```
//!
//! so that `|B u|_1` is the degree-normalised total variation of `u`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::io::fmt_sig;

/// Default neighbourhood size for graph construction.
pub const DEFAULT_K: usize = 50;
/// Default exponent applied to clipped cosine similarities.
pub const DEFAULT_SIMILARITY_EXPONENT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Immutable undirected weighted graph with strictly positive degrees.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: usize,
    edges: Vec<Edge>,
    degrees: Vec<f64>,
    // w_ij / d_i and w_ij / d_j per edge
    head_coef: Vec<f64>,
    tail_coef: Vec<f64>,
    // CSR adjacency: for node v, adj_ptr[v]..adj_ptr[v+1] indexes into adj_edges
    adj_ptr: Vec<usize>,
    adj_edges: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Orientation of each pair is
    /// normalised to `i < j`; the result is sorted by `(i, j)`.
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidConfig("a graph needs at least 2 nodes".into()));
        }
        let mut list: Vec<Edge> = Vec::new();
        for e in edges {
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            if j >= nodes {
                return Err(Error::IndexOutOfRange { index: j, n: nodes });
            }
            if i == j {
                return Err(Error::InvalidConfig(format!("self-edge at node {i}")));
            }
            if !(e.w.is_finite() && e.w > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "edge ({i},{j}) has non-positive or non-finite weight {}",
                    e.w
                )));
            }
            list.push(Edge { i, j, w: e.w });
        }
        list.sort_by_key(|e| (e.i, e.j));
        if let Some(pair) = list.windows(2).find(|p| (p[0].i, p[0].j) == (p[1].i, p[1].j)) {
            return Err(Error::InvalidConfig(format!(
                "duplicate edge ({},{})",
                pair[0].i, pair[0].j
            )));
        }

        let mut degrees = vec![0.0; nodes];
        let mut counts = vec![0usize; nodes];
        for e in &list {
            degrees[e.i] += e.w;
            degrees[e.j] += e.w;
            counts[e.i] += 1;
            counts[e.j] += 1;
        }
        if let Some(v) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::DegenerateNode(v));
        }

        let mut adj_ptr = vec![0usize; nodes + 1];
        for v in 0..nodes {
            adj_ptr[v + 1] = adj_ptr[v] + counts[v];
        }
        let mut fill = adj_ptr.clone();
        let mut adj_edges = vec![0usize; adj_ptr[nodes]];
        for (idx, e) in list.iter().enumerate() {
            adj_edges[fill[e.i]] = idx;
            fill[e.i] += 1;
            adj_edges[fill[e.j]] = idx;
            fill[e.j] += 1;
        }

        let head_coef = list.iter().map(|e| e.w / degrees[e.i]).collect();
        let tail_coef = list.iter().map(|e| e.w / degrees[e.j]).collect();

        Ok(Self {
            nodes,
            edges: list,
            degrees,
            head_coef,
            tail_coef,
            adj_ptr,
            adj_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Indices (into [`Graph::edges`]) of the edges touching `v`.
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.adj_edges[self.adj_ptr[v]..self.adj_ptr[v + 1]]
    }

    /// Weight of the edge between `a` and `b` in either orientation.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges
            .binary_search_by_key(&key, |e| (e.i, e.j))
            .ok()
            .map(|idx| self.edges[idx].w)
    }

    pub fn incidence(&self) -> IncidenceOperator<'_> {
        IncidenceOperator { graph: self }
    }

    /// Writes the edge list as CSV (`i,j,w`, 9 significant digits).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,w")?;
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.i, e.j, fmt_sig(e.w, 9))?;
        }
        Ok(())
    }
}

/// The operator `B = W D^-1` of a graph together with its adjoint.
#[derive(Debug, Clone, Copy)]
pub struct IncidenceOperator<'g> {
    graph: &'g Graph,
}

impl<'g> IncidenceOperator<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.graph.edge_count()];
        self.forward_into(u, &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.graph.nodes, u.len())?;
        check_len(self.graph.edge_count(), out.len())?;
        let g = self.graph;
        for (idx, e) in g.edges.iter().enumerate() {
            out[idx] = g.head_coef[idx] * u[e.i] - g.tail_coef[idx] * u[e.j];
        }
        Ok(())
    }

    pub fn adjoint(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.graph.nodes];
        self.adjoint_into(q, &mut out)?;
        Ok(out)
    }

    /// Overwrites `out` with `B^T q`. Accumulation runs over edges in stored
    /// order, so the result is bitwise reproducible.
    pub fn adjoint_into(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.graph.edge_count(), q.len())?;
        check_len(self.graph.nodes, out.len())?;
        let g = self.graph;
        out.fill(0.0);
        for (idx, e) in g.edges.iter().enumerate() {
            out[e.i] += g.head_coef[idx] * q[idx];
            out[e.j] -= g.tail_coef[idx] * q[idx];
        }
        Ok(())
    }

    /// Power-iteration estimate of the largest singular value of `B`.
    ///
    /// The start vector is fixed, so the estimate is deterministic and
    /// non-decreasing in `iterations`.
    pub fn operator_norm(&self, iterations: usize) -> f64 {
        let n = self.graph.nodes;
        let m = self.graph.edge_count();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f726d);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let mut bv = vec![0.0; m];
        let mut estimate = 0.0;
        for _ in 0..iterations.max(1) {
            self.forward_into(&v, &mut bv).expect("sizes match");
            estimate = l2(&bv);
            self.adjoint_into(&bv, &mut v).expect("sizes match");
            if normalize(&mut v) == 0.0 {
                break;
            }
        }
        estimate
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = l2(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Exact k-nearest-neighbour graph under cosine similarity.
///
/// Similarities below zero are clipped, the rest raised to
/// `similarity_exponent`, and the directed neighbourhoods symmetrised with
/// `w_ij = max(w_i->j, w_j->i)`. Zero-weight pairs are dropped.
pub fn build_knn_graph(
    features: &FeatureMatrix,
    k: usize,
    similarity_exponent: f64,
) -> Result<Graph> {
    let n = features.rows();
    if k < 1 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    if !(similarity_exponent >= 1.0 && similarity_exponent.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "similarity exponent must be >= 1, got {similarity_exponent}"
        )));
    }

    let dim = features.dim();
    let mut unit = Vec::with_capacity(n * dim);
    for i in 0..n {
        let row = features.row(i);
        let norm = l2(row);
        if norm == 0.0 {
            return Err(Error::DegenerateNode(i));
        }
        unit.extend(row.iter().map(|x| x / norm));
    }
    let unit_row = |i: usize| &unit[i * dim..(i + 1) * dim];

    let neighbourhoods: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = unit_row(i);
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = ci.iter().zip(unit_row(j)).map(|(a, b)| a * b).sum();
                    (j, s.min(1.0))
                })
                .collect();
            let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if k < sims.len() {
                sims.select_nth_unstable_by(k - 1, by_rank);
                sims.truncate(k);
            }
            sims.sort_by(by_rank);
            sims.into_iter()
                .map(|(j, s)| (j, s.max(0.0).powf(similarity_exponent)))
                .collect()
        })
        .collect();

    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, list) in neighbourhoods.iter().enumerate() {
        if list.iter().all(|&(_, w)| w <= 0.0) {
            return Err(Error::DegenerateNode(i));
        }
        for &(j, w) in list {
            let key = if i < j { (i, j) } else { (j, i) };
            let slot = sym.entry(key).or_insert(0.0);
            if w > *slot {
                *slot = w;
            }
        }
    }

    Graph::from_edges(
        n,
        sym.into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|((i, j), w)| Edge { i, j, w }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(i: usize, j: usize, w: f64) -> Edge {
        Edge { i, j, w }
    }

    fn path3() -> Graph {
        Graph::from_edges(3, [edge(0, 1, 1.0), edge(1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn forward_on_single_edge() {
        let g = Graph::from_edges(2, [edge(0, 1, 1.0)]).unwrap();
        let b = g.incidence();
        assert_eq!(b.forward(&[1.0, -1.0]).unwrap(), vec![2.0]);
        assert_eq!(b.adjoint(&[1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(b.adjoint(&[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_on_path() {
        let g = path3();
        assert_eq!(g.degrees(), &[1.0, 2.0, 1.0]);
        assert_eq!(g.incidence().forward(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn constant_vector_on_regular_graph_is_in_kernel() {
        // 4-cycle: every degree is 2
        let g = Graph::from_edges(
            4,
            [edge(0, 1, 1.0), edge(1, 2, 1.0), edge(2, 3, 1.0), edge(0, 3, 1.0)],
        )
        .unwrap();
        let out = g.incidence().forward(&[0.7; 4]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = path3();
        assert!(matches!(
            g.incidence().forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(matches!(
            g.incidence().adjoint(&[1.0; 5]),
            Err(Error::DimensionMismatch { expected: 2, got: 5 })
        ));
    }

    #[test]
    fn weight_lookup_is_symmetric() {
        let g = Graph::from_edges(3, [edge(2, 0, 0.5), edge(1, 2, 0.25)]).unwrap();
        assert_eq!(g.weight(0, 2), Some(0.5));
        assert_eq!(g.weight(2, 0), Some(0.5));
        assert_eq!(g.weight(0, 1), None);
        assert_eq!(g.edges()[0], edge(0, 2, 0.5));
    }

    #[test]
    fn isolated_node_is_rejected() {
        assert!(matches!(
            Graph::from_edges(3, [edge(0, 1, 1.0)]),
            Err(Error::DegenerateNode(2))
        ));
    }

    #[test]
    fn duplicate_and_self_edges_are_rejected() {
        assert!(Graph::from_edges(2, [edge(0, 1, 1.0), edge(1, 0, 2.0)]).is_err());
        assert!(Graph::from_edges(2, [edge(1, 1, 1.0), edge(0, 1, 1.0)]).is_err());
    }

    #[test]
    fn single_edge_norm_is_sqrt2() {
        let g = Graph::from_edges(2, [edge(0, 1, 1.0)]).unwrap();
        assert!((g.incidence().operator_norm(50) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norm_is_invariant_to_uniform_weight_scaling() {
        let base = [edge(0, 1, 1.0), edge(1, 2, 0.5), edge(2, 3, 2.0), edge(0, 3, 0.3)];
        let g1 = Graph::from_edges(4, base).unwrap();
        let g2 = Graph::from_edges(4, base.map(|e| edge(e.i, e.j, 2.0 * e.w))).unwrap();
        let a = g1.incidence().operator_norm(100);
        let b = g2.incidence().operator_norm(100);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn norm_estimate_is_monotone_in_iterations() {
        let g = Graph::from_edges(
            5,
            [edge(0, 1, 1.0), edge(1, 2, 0.2), edge(2, 3, 0.9), edge(3, 4, 0.4), edge(0, 4, 0.1), edge(1, 3, 0.6)],
        )
        .unwrap();
        let b = g.incidence();
        let estimates: Vec<f64> = (1..30).map(|it| b.operator_norm(it)).collect();
        for w in estimates.windows(2) {
            assert!(w[1] >= w[0] - 1e-14, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn knn_rejects_bad_k() {
        let f = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(matches!(build_knn_graph(&f, 0, 3.0), Err(Error::InvalidK { .. })));
        assert!(matches!(build_knn_graph(&f, 3, 3.0), Err(Error::InvalidK { k: 3, n: 3 })));
    }

    #[test]
    fn knn_rejects_zero_row() {
        // 1-D points 0, 1, 10, 11: the first row has no direction
        let f = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        assert!(matches!(build_knn_graph(&f, 1, 3.0), Err(Error::DegenerateNode(0))));
    }

    #[test]
    fn knn_rejects_node_with_only_negative_similarities() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.1], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(build_knn_graph(&f, 1, 1.0), Err(Error::DegenerateNode(2))));
    }

    #[test]
    fn knn_two_components() {
        let f = FeatureMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 1.0],
        ])
        .unwrap();
        let g = build_knn_graph(&f, 1, 3.0).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn identical_rows_get_unit_weight() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![-2.0, 1.5]]).unwrap();
        let g = build_knn_graph(&f, 2, 3.0).unwrap();
        assert!((g.weight(0, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export_format() {
        let g = Graph::from_edges(3, [edge(0, 1, 1.0 / 3.0), edge(1, 2, 2.0)]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,w\n0,1,0.333333333\n1,2,2\n");
    }
}
