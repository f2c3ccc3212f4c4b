//! Sub-risk weights, representative covariate profiles and Isomap
//! embeddings for inspecting a fitted model.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EventStatus, ObservationRecord, TimeStatus};
use crate::distributions::sample_log_gamma;
use crate::error::{LdrError, Result};
use crate::model::LdrParams;

/// Number of neighbours in the Isomap graph.
pub const DEFAULT_NEIGHBORS: usize = 5;

/// `w_ijk = E[lambda_ijk / sum lambda_i..]` for uncensored subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct SubriskWeights {
    /// Indices of the subjects into the input slice.
    pub subjects: Vec<usize>,
    /// `[subject][risk][atom]`, each subject summing to one.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub n_mc: usize,
}

impl SubriskWeights {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Sub-risk `(risk, atom)` holding more than half of the within-risk
    /// weight, using the observed event type when known and the heaviest
    /// risk otherwise.
    pub fn assignment(&self, row: usize, event: EventStatus) -> Option<(usize, usize)> {
        let w = &self.weights[row];
        let risk = match event {
            EventStatus::Known(j) => j,
            EventStatus::Missing => {
                (0..w.len()).max_by(|&a, &b| w[a].iter().sum::<f64>().total_cmp(&w[b].iter().sum::<f64>()))?
            }
        };
        let total: f64 = w[risk].iter().sum();
        if total <= 0.0 {
            return None;
        }
        w[risk].iter().position(|&v| v / total > 0.5).map(|k| (risk, k))
    }
}

/// Monte-Carlo sub-risk weights for every uncensored subject in `data`.
/// Returns `None` when no subject has an observed event time.
pub fn subrisk_weights<R: Rng + ?Sized>(
    data: &[ObservationRecord],
    params: &LdrParams,
    n_mc: usize,
    rng: &mut R,
) -> Result<Option<SubriskWeights>> {
    if n_mc == 0 {
        return Err(LdrError::param("n_mc must be at least 1"));
    }
    let subjects: Vec<usize> = data
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.time(), TimeStatus::Observed(_)))
        .map(|(i, _)| i)
        .collect();
    if subjects.is_empty() {
        return Ok(None);
    }
    let atoms: Vec<(usize, f64, &[f64])> = params
        .iter_atoms()
        .map(|(j, a)| (j, a.weight, a.coefficients.as_slice()))
        .collect();
    let mut weights = Vec::with_capacity(subjects.len());
    let mut log_lam = vec![0.0; atoms.len()];
    for &i in &subjects {
        let x = data[i].covariates();
        params.check_covariates(x)?;
        let eta: Vec<f64> = atoms.iter().map(|(_, _, b)| crate::model::dot(b, x)).collect();
        let mut acc = vec![0.0; atoms.len()];
        for _ in 0..n_mc {
            for (a, &(_, r, _)) in atoms.iter().enumerate() {
                log_lam[a] = sample_log_gamma(r, rng) + eta[a];
            }
            let m = log_lam.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = log_lam.iter().map(|v| (v - m).exp()).sum();
            for (a, v) in log_lam.iter().enumerate() {
                acc[a] += (v - m).exp() / z;
            }
        }
        let total: f64 = acc.iter().sum();
        let mut nested = vec![Vec::new(); params.num_risks()];
        for (a, &(j, _, _)) in atoms.iter().enumerate() {
            nested[j].push(acc[a] / total);
        }
        weights.push(nested);
    }
    Ok(Some(SubriskWeights {
        subjects,
        weights,
        n_mc,
    }))
}

/// Weighted covariate centroid (intercept dropped) of one sub-risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    pub risk: usize,
    pub atom: usize,
    /// `None` when the atom carries no weight on any subject.
    pub centroid: Option<Vec<f64>>,
}

/// `sum_i w_ijk x_i / sum_i w_ijk` for every atom.
pub fn representatives(weights: &SubriskWeights, data: &[ObservationRecord]) -> Result<Vec<Representative>> {
    let Some(first) = weights.weights.first() else {
        return Ok(Vec::new());
    };
    let dim = data
        .get(weights.subjects[0])
        .ok_or_else(|| LdrError::param("weights refer to subjects outside the data"))?
        .covariates()
        .len()
        - 1;
    let mut out = Vec::new();
    for (j, atoms) in first.iter().enumerate() {
        for k in 0..atoms.len() {
            let mut sum = vec![0.0; dim];
            let mut total = 0.0;
            for (row, &i) in weights.subjects.iter().enumerate() {
                let rec = data
                    .get(i)
                    .ok_or_else(|| LdrError::param("weights refer to subjects outside the data"))?;
                let w = weights.weights[row][j][k];
                total += w;
                for (s, x) in sum.iter_mut().zip(&rec.covariates()[1..]) {
                    *s += w * x;
                }
            }
            let centroid = (total > 0.0).then(|| sum.iter().map(|s| s / total).collect());
            out.push(Representative {
                risk: j,
                atom: k,
                centroid,
            });
        }
    }
    Ok(out)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Row-major `n x n` adjacency of the symmetrized `k`-nearest-neighbour
/// graph: an edge joins `i` and `j` when either lists the other. Missing
/// edges are `+inf`, the diagonal is zero.
pub fn knn_graph(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut g = vec![f64::INFINITY; n * n];
    for i in 0..n {
        g[i * n + i] = 0.0;
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (euclidean(&points[i], &points[j]), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(dist, j) in d.iter().take(k) {
            g[i * n + j] = dist;
            g[j * n + i] = dist;
        }
    }
    g
}

/// All-pairs shortest paths in place on a row-major `n x n` matrix.
pub fn floyd_warshall(dist: &mut [f64], n: usize) {
    for k in 0..n {
        let row_k: Vec<f64> = dist[k * n..(k + 1) * n].to_vec();
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik.is_infinite() {
                continue;
            }
            let row_i = &mut dist[i * n..(i + 1) * n];
            for (dij, dkj) in row_i.iter_mut().zip(&row_k) {
                let via = dik + dkj;
                if via < *dij {
                    *dij = via;
                }
            }
        }
    }
}

fn largest_component(dist: &[f64], n: usize) -> Vec<usize> {
    let mut label = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut comp = vec![start];
        label[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if label[v] == usize::MAX && dist[u * n + v].is_finite() {
                    label[v] = start;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Two-dimensional Isomap coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// Input indices that were embedded (the largest connected component).
    pub included: Vec<usize>,
    /// Coordinates of `included`, column-centred.
    pub coords: Vec<[f64; 2]>,
    /// Input indices dropped because they fall outside that component.
    pub excluded: Vec<usize>,
    pub neighbors: usize,
}

impl Embedding {
    pub fn is_connected(&self) -> bool {
        self.excluded.is_empty()
    }
}

/// Classical MDS of a geodesic distance matrix into two dimensions.
/// Negative eigenvalues are clamped to zero; each axis is signed so its
/// largest-magnitude entry is positive.
pub fn classical_mds(dist: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let n = dist.nrows();
    let sq = dist.map(|d| d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &idx) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..n).max_by(|&a, &c| v[a].abs().total_cmp(&v[c].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][axis] = sign * scale * v[i];
        }
    }
    for axis in 0..2 {
        let m = coords.iter().map(|c| c[axis]).sum::<f64>() / n as f64;
        for c in coords.iter_mut() {
            c[axis] -= m;
        }
    }
    coords
}

/// Isomap: `k`-NN graph, Floyd-Warshall geodesics, classical MDS.
pub fn isomap_embed(points: &[Vec<f64>], k: usize) -> Result<Embedding> {
    let n = points.len();
    if k == 0 {
        return Err(LdrError::param("neighbour count must be at least 1"));
    }
    if n < 3 || n < k + 1 {
        return Err(LdrError::param(format!(
            "{n} points cannot support a {k}-nearest-neighbour graph"
        )));
    }
    let dim = points[0].len();
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(LdrError::param("points must be finite vectors of equal length"));
    }
    let mut dist = knn_graph(points, k);
    floyd_warshall(&mut dist, n);
    let included = largest_component(&dist, n);
    let excluded: Vec<usize> = (0..n).filter(|i| included.binary_search(i).is_err()).collect();
    let m = included.len();
    let sub = DMatrix::from_fn(m, m, |a, b| dist[included[a] * n + included[b]]);
    let coords = if m >= 2 { classical_mds(&sub) } else { vec![[0.0; 2]; m] };
    Ok(Embedding {
        included,
        coords,
        excluded,
        neighbors: k,
    })
}

/// One row of the plot-ready embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    /// Subject index, or atom label `r<j>s<k>` for representatives.
    pub id: String,
    pub is_representative: bool,
    /// One-based risk, empty when unassigned.
    pub risk: Option<usize>,
    /// One-based sub-risk, empty when unassigned.
    pub subrisk: Option<usize>,
    pub coord_x: f64,
    pub coord_y: f64,
}

/// Summary of an [`embed_fit`] run.
#[derive(Debug, Clone)]
pub struct FitEmbedding {
    pub rows: Vec<EmbeddingRow>,
    pub representatives: Vec<Representative>,
    /// Subject or representative ids left out of the largest component.
    pub excluded: Vec<String>,
}

/// Weights, representatives and Isomap coordinates for the uncensored
/// subjects of `data`. Representatives join the point cloud before the
/// neighbour graph is built.
pub fn embed_fit<R: Rng + ?Sized>(
    data: &[ObservationRecord],
    params: &LdrParams,
    n_mc: usize,
    k: usize,
    rng: &mut R,
) -> Result<FitEmbedding> {
    let weights =
        subrisk_weights(data, params, n_mc, rng)?.ok_or_else(|| LdrError::param("no uncensored subjects to embed"))?;
    let reps = representatives(&weights, data)?;
    let mut points: Vec<Vec<f64>> = weights
        .subjects
        .iter()
        .map(|&i| data[i].covariates()[1..].to_vec())
        .collect();
    let mut ids: Vec<String> = weights.subjects.iter().map(|i| i.to_string()).collect();
    let mut labels: Vec<(bool, Option<(usize, usize)>)> = weights
        .subjects
        .iter()
        .enumerate()
        .map(|(row, &i)| (false, weights.assignment(row, data[i].event())))
        .collect();
    for rep in &reps {
        if let Some(c) = &rep.centroid {
            points.push(c.clone());
            ids.push(format!("r{}s{}", rep.risk + 1, rep.atom + 1));
            labels.push((true, Some((rep.risk, rep.atom))));
        }
    }
    let emb = isomap_embed(&points, k)?;
    let rows = emb
        .included
        .iter()
        .zip(&emb.coords)
        .map(|(&p, c)| EmbeddingRow {
            id: ids[p].clone(),
            is_representative: labels[p].0,
            risk: labels[p].1.map(|(j, _)| j + 1),
            subrisk: labels[p].1.map(|(_, k)| k + 1),
            coord_x: c[0],
            coord_y: c[1],
        })
        .collect();
    Ok(FitEmbedding {
        rows,
        representatives: reps,
        excluded: emb.excluded.iter().map(|&p| ids[p].clone()).collect(),
    })
}

/// CSV with columns `id, is_representative, risk, subrisk, coord_x, coord_y`.
pub fn write_embedding<W: Write>(rows: &[EmbeddingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| LdrError::io("<embedding>", e))?;
    Ok(())
}
