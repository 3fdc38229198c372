//! Basis selection: random, index-stride and kernel k-medoids, balanced per
//! class.
//!
//! Every strategy returns training indices grouped by class id (ascending)
//! and sorted ascending within each class.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const DEFAULT_KMEDOIDS_ITER: usize = 100;

/// Indices of each class, in ascending index order, indexed by class id.
pub fn class_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

fn checked_members(labels: &[usize], per_class: usize) -> Result<Vec<Vec<usize>>> {
    let members = class_members(labels);
    for (class, m) in members.iter().enumerate() {
        if m.len() < per_class {
            return Err(Error::ClassUndersized {
                class,
                available: m.len(),
                requested: per_class,
            });
        }
    }
    Ok(members)
}

/// `per_class` indices drawn uniformly without replacement from each class.
pub fn select_random(labels: &[usize], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let members = checked_members(labels, per_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * members.len());
    for m in &members {
        let mut picked: Vec<usize> = sample(&mut rng, m.len(), per_class)
            .into_iter()
            .map(|p| m[p])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// Positions `floor(i * n_c / per_class)` of each class's index-ordered
/// member list.
pub fn select_index_stride(labels: &[usize], per_class: usize) -> Result<Vec<usize>> {
    let members = checked_members(labels, per_class)?;
    Ok(members
        .iter()
        .flat_map(|m| (0..per_class).map(move |i| m[i * m.len() / per_class]))
        .collect())
}

/// How the first set of medoids is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KMedoidsInit {
    /// Medoids added one at a time, each maximizing the objective.
    #[default]
    Greedy,
    /// `k` distinct points drawn uniformly.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoids {
    /// Medoid indices, ascending.
    pub medoids: Vec<usize>,
    /// Medoid index each point is assigned to.
    pub assignment: Vec<usize>,
    /// Objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

/// `Σ_p max_m s[p, m]` with the most similar medoid (lowest index on ties).
fn assign(s: ArrayView2<'_, f64>, medoids: &[usize], exec: Execution) -> (Vec<usize>, f64) {
    let assignment = par::map_range(exec, s.nrows(), |p| {
        let mut best = medoids[0];
        for &m in &medoids[1..] {
            if s[[p, m]] > s[[p, best]] {
                best = m;
            }
        }
        best
    });
    let objective = assignment.iter().enumerate().map(|(p, &m)| s[[p, m]]).sum();
    (assignment, objective)
}

fn greedy_init(s: ArrayView2<'_, f64>, k: usize) -> Vec<usize> {
    let n = s.nrows();
    let mut best_sim = vec![f64::NEG_INFINITY; n];
    let mut chosen = vec![false; n];
    let mut medoids = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !chosen[c]) {
            let gain: f64 = (0..n).map(|p| best_sim[p].max(s[[p, c]])).sum();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.expect("k <= n");
        chosen[c] = true;
        medoids.push(c);
        for p in 0..n {
            best_sim[p] = best_sim[p].max(s[[p, c]]);
        }
    }
    medoids
}

/// Kernel k-medoids maximizing `Σ_p s[p, medoid(p)]`, where `s[p, m]` is the
/// similarity of point `p` to candidate medoid `m`. Alternates assignment and
/// per-cluster medoid updates until a fixpoint or `max_iter` iterations.
pub fn select_kernel_kmedoids(
    s: ArrayView2<'_, f64>,
    k: usize,
    max_iter: usize,
    init: KMedoidsInit,
    exec: Execution,
) -> Result<KMedoids> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.ncols(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut medoids = match init {
        KMedoidsInit::Greedy => greedy_init(s, k),
        KMedoidsInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, n, k).into_vec()
        }
    };
    medoids.sort_unstable();
    let (mut assignment, objective) = assign(s, &medoids, exec);
    let mut trace = vec![objective];

    for _ in 0..max_iter {
        let mut updated = medoids.clone();
        for slot in 0..updated.len() {
            let current = updated[slot];
            let cluster: Vec<usize> = (0..n).filter(|&p| assignment[p] == medoids[slot]).collect();
            let score = |c: usize| cluster.iter().map(|&p| s[[p, c]]).sum::<f64>();
            let mut best = (current, score(current));
            for &c in &cluster {
                let taken = updated
                    .iter()
                    .enumerate()
                    .any(|(o, &m)| o != slot && m == c);
                if taken {
                    continue;
                }
                let v = score(c);
                if v > best.1 || (v == best.1 && c < best.0) {
                    best = (c, v);
                }
            }
            updated[slot] = best.0;
        }
        updated.sort_unstable();
        if updated == medoids {
            break;
        }
        medoids = updated;
        let (a, objective) = assign(s, &medoids, exec);
        assignment = a;
        trace.push(objective);
    }
    Ok(KMedoids {
        medoids,
        assignment,
        objective_trace: trace,
    })
}

/// Runs kernel k-medoids separately within each class. `similarity` returns
/// the similarity matrix of the given training indices.
pub fn select_kmedoids_per_class<F>(
    labels: &[usize],
    per_class: usize,
    max_iter: usize,
    init: KMedoidsInit,
    mut similarity: F,
) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<Array2<f64>>,
{
    let members = checked_members(labels, per_class)?;
    let mut out = Vec::with_capacity(per_class * members.len());
    for m in &members {
        let s = similarity(m)?;
        let result =
            select_kernel_kmedoids(s.view(), per_class, max_iter, init, Execution::default())?;
        out.extend(result.medoids.iter().map(|&i| m[i]));
    }
    Ok(out)
}
