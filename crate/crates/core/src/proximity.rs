//! Latent proximity graph and curriculum selection.
//!
//! `P[i][j] = |h(u_i) - h(t_j)|^2` over unlabeled rows and training columns.
//! An unlabeled sample's score is the sum of its `p` smallest row entries; the
//! `K` lowest-scoring samples are selected, ties broken by id.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LatentFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityGraph {
    /// Row-major `|U| x |T|` squared distances.
    matrix: Vec<f64>,
    u_ids: Vec<String>,
    t_ids: Vec<String>,
}

impl ProximityGraph {
    pub fn u_ids(&self) -> &[String] {
        &self.u_ids
    }

    pub fn t_ids(&self) -> &[String] {
        &self.t_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.t_ids.len();
        &self.matrix[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.t_ids.len() + j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.u_ids.len(), self.t_ids.len())
    }
}

fn sorted_features<'a>(
    feats: &'a [(String, LatentFeatures)],
    what: &'static str,
) -> Result<Vec<&'a (String, LatentFeatures)>> {
    if feats.is_empty() {
        return Err(Error::Empty(what));
    }
    let mut seen = HashSet::new();
    for (id, _) in feats {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut sorted: Vec<_> = feats.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(sorted)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Build the graph; rows and columns are ordered lexicographically by id.
pub fn build_graph(
    u_feats: &[(String, LatentFeatures)],
    t_feats: &[(String, LatentFeatures)],
) -> Result<ProximityGraph> {
    let u = sorted_features(u_feats, "unlabeled features")?;
    let t = sorted_features(t_feats, "training features")?;
    let dim = u[0].1.len();
    if let Some((_, f)) = u.iter().chain(&t).find(|(_, f)| f.len() != dim) {
        return Err(Error::LengthMismatch {
            left: dim,
            right: f.len(),
        });
    }
    if let Some((id, _)) = u.iter().chain(&t).find(|(_, f)| f.values().iter().any(|v| !v.is_finite())) {
        return Err(Error::config("features", format!("non-finite latent vector for `{id}`")));
    }
    let matrix = u
        .par_iter()
        .flat_map_iter(|(_, hu)| t.iter().map(move |(_, ht)| squared_distance(hu.values(), ht.values())))
        .collect();
    Ok(ProximityGraph {
        matrix,
        u_ids: u.iter().map(|(id, _)| id.clone()).collect(),
        t_ids: t.iter().map(|(id, _)| id.clone()).collect(),
    })
}

/// Sum of the `min(p, len)` smallest entries, accumulated in ascending order.
pub fn proximity_score(row: &[f64], p: usize) -> Result<f64> {
    if p < 1 {
        return Err(Error::config("p", "must be >= 1"));
    }
    if row.is_empty() {
        return Err(Error::Empty("proximity row"));
    }
    let p = p.min(row.len());
    let mut v = row.to_vec();
    if p < v.len() {
        v.select_nth_unstable_by(p - 1, f64::total_cmp);
    }
    let smallest = &mut v[..p];
    smallest.sort_by(f64::total_cmp);
    Ok(smallest.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected_ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// Score every unlabeled row; return the `min(k, |U|)` lowest, ordered by (score, id).
pub fn select(graph: &ProximityGraph, k: usize, p: usize) -> Result<SelectionResult> {
    if k < 1 {
        return Err(Error::config("K", "must be >= 1"));
    }
    if p < 1 {
        return Err(Error::config("p", "must be >= 1"));
    }
    let (nu, nt) = graph.dims();
    if nu == 0 || nt == 0 {
        return Err(Error::Empty("proximity graph"));
    }
    let scores = (0..nu)
        .map(|i| proximity_score(graph.row(i), p))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..nu).collect();
    order.sort_by(|&a, &b| match scores[a].total_cmp(&scores[b]) {
        Ordering::Equal => graph.u_ids[a].cmp(&graph.u_ids[b]),
        o => o,
    });
    order.truncate(k.min(nu));
    Ok(SelectionResult {
        selected_ids: order.iter().map(|&i| graph.u_ids[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(items: &[(&str, &[f64])]) -> Vec<(String, LatentFeatures)> {
        items
            .iter()
            .map(|(id, v)| (id.to_string(), LatentFeatures(v.to_vec())))
            .collect()
    }

    #[test]
    fn single_entry_graph() {
        let g = build_graph(&feats(&[("a", &[0.0, 0.0])]), &feats(&[("x", &[3.0, 4.0])])).unwrap();
        assert_eq!(g.row(0), &[25.0]);
        let g = build_graph(&feats(&[("a", &[1.5])]), &feats(&[("x", &[1.5])])).unwrap();
        assert_eq!(g.row(0), &[0.0]);
    }

    #[test]
    fn ids_are_sorted() {
        let g = build_graph(
            &feats(&[("b", &[1.0]), ("a", &[2.0])]),
            &feats(&[("z", &[0.0]), ("y", &[1.0])]),
        )
        .unwrap();
        assert_eq!(g.u_ids(), ["a", "b"]);
        assert_eq!(g.t_ids(), ["y", "z"]);
        assert_eq!(g.row(0), &[1.0, 4.0]);
    }

    #[test]
    fn graph_errors() {
        assert!(build_graph(&[], &feats(&[("x", &[1.0])])).is_err());
        assert!(build_graph(&feats(&[("a", &[1.0])]), &feats(&[("x", &[1.0, 2.0])])).is_err());
        assert!(build_graph(&feats(&[("a", &[1.0]), ("a", &[2.0])]), &feats(&[("x", &[1.0])])).is_err());
    }

    #[test]
    fn score_rules() {
        assert_eq!(proximity_score(&[5.0], 3).unwrap(), 5.0);
        assert_eq!(proximity_score(&[4.0, 1.0, 9.0, 2.0], 2).unwrap(), 3.0);
        assert_eq!(proximity_score(&[2.5; 6], 4).unwrap(), 10.0);
        assert!(proximity_score(&[1.0], 0).is_err());
    }

    #[test]
    fn worked_example() {
        let t = feats(&[("t1", &[0.0, 0.0]), ("t2", &[1.0, 0.0])]);
        let u = feats(&[("u1", &[0.2, 0.0]), ("u2", &[5.0, 5.0]), ("u3", &[0.9, 0.0])]);
        let r = select(&build_graph(&u, &t).unwrap(), 2, 2).unwrap();
        assert_eq!(r.selected_ids, ["u1", "u3"]);
        assert!((r.scores[0] - 0.68).abs() < 1e-12);
        assert!((r.scores[1] - 0.82).abs() < 1e-12);
        let all = select(&build_graph(&u, &t).unwrap(), 3, 2).unwrap();
        assert_eq!(all.selected_ids, ["u1", "u3", "u2"]);
        assert!((all.scores[2] - 91.0).abs() < 1e-12);
    }

    #[test]
    fn forced_single_selection_and_ties() {
        let g = build_graph(&feats(&[("only", &[100.0])]), &feats(&[("x", &[0.0])])).unwrap();
        assert_eq!(select(&g, 1, 5).unwrap().selected_ids, ["only"]);
        let g = build_graph(
            &feats(&[("c", &[1.0]), ("a", &[-1.0]), ("b", &[1.0])]),
            &feats(&[("x", &[0.0])]),
        )
        .unwrap();
        assert_eq!(select(&g, 2, 1).unwrap().selected_ids, ["a", "b"]);
        assert!(select(&g, 0, 1).is_err());
    }
}
