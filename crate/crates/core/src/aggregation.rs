//! Baseline server aggregation rules and the two non-IID defense wrappers.
//!
//! Every aggregator consumes the round's `(client_id, update, sample count)`
//! triples and emits one aggregate vector. All rules are pure and
//! deterministic; ties are broken by client id so the output is independent
//! of input order.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::client::ClientId;
use crate::error::{Error, Result};
use crate::model::{cosine, ParamVector};

/// One participant's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub id: ClientId,
    pub params: ParamVector,
    pub num_samples: usize,
}

/// An aggregation rule usable as the inner step of a wrapper.
pub type AggFn<'a> = dyn Fn(&[ClientUpdate]) -> Result<ParamVector> + 'a;

/// Validates a round's updates and returns the shared dimension.
fn check_updates(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::config("aggregation requires at least one update"))?;
    let dim = first.params.dim();
    for u in updates {
        if u.params.dim() != dim {
            return Err(Error::config(format!(
                "update dimension mismatch: client {} has {} parameters, expected {dim}",
                u.id,
                u.params.dim()
            )));
        }
        if !u.params.is_finite() {
            return Err(Error::numerical(format!(
                "client {} uploaded a non-finite update",
                u.id
            )));
        }
    }
    Ok(dim)
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::config(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::config("weights must be non-negative reals"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "weights must sum to 1 within 1e-9, got {sum}"
        )));
    }
    Ok(())
}

/// Equal weights over `n` participants.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Weights proportional to each client's training-sample count.
pub fn sample_weights(updates: &[ClientUpdate]) -> Vec<f64> {
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return uniform_weights(updates.len());
    }
    updates
        .iter()
        .map(|u| u.num_samples as f64 / total as f64)
        .collect()
}

/// Weighted coordinate-wise average.
pub fn agg_mean(updates: &[ClientUpdate], weights: &[f64]) -> Result<ParamVector> {
    let dim = check_updates(updates)?;
    check_weights(weights, updates.len())?;
    let mut acc = vec![0.0f64; dim];
    for (u, &w) in updates.iter().zip(weights) {
        for (a, &x) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += w * x;
        }
    }
    Ok(ParamVector::new(acc))
}

/// Plain (unweighted) mean of the given updates, accumulated in id order.
fn plain_mean_by_id(updates: &[ClientUpdate], ids: &BTreeSet<ClientId>) -> ParamVector {
    let dim = updates[0].params.dim();
    let mut acc = ParamVector::zeros(dim);
    let mut count = 0usize;
    let mut by_id: Vec<&ClientUpdate> = updates.iter().filter(|u| ids.contains(&u.id)).collect();
    by_id.sort_by_key(|u| u.id);
    for u in by_id {
        acc = acc.add(&u.params);
        count += 1;
    }
    acc.scale(1.0 / count as f64)
}

/// Coordinate-wise median; an even count takes the mean of the two middle
/// values.
pub fn agg_median(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let dim = check_updates(updates)?;
    let n = updates.len();
    let mut out = vec![0.0f64; dim];
    let mut column = vec![0.0f64; n];
    for (j, slot) in out.iter_mut().enumerate() {
        for (i, u) in updates.iter().enumerate() {
            column[i] = u.params.as_slice()[j];
        }
        column.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
        *slot = if n % 2 == 1 {
            column[n / 2]
        } else {
            (column[n / 2 - 1] + column[n / 2]) / 2.0
        };
    }
    Ok(ParamVector::new(out))
}

/// Coordinate-wise mean after removing the `q` largest and `q` smallest
/// values of each coordinate.
pub fn agg_trimmed_mean(updates: &[ClientUpdate], q: usize) -> Result<ParamVector> {
    let dim = check_updates(updates)?;
    let n = updates.len();
    if 2 * q >= n {
        return Err(Error::config(format!(
            "trimmed mean requires 2Q < n, got Q={q}, n={n}"
        )));
    }
    let mut out = vec![0.0f64; dim];
    let mut column = vec![0.0f64; n];
    for (j, slot) in out.iter_mut().enumerate() {
        for (i, u) in updates.iter().enumerate() {
            column[i] = u.params.as_slice()[j];
        }
        column.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let kept = &column[q..n - q];
        *slot = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(ParamVector::new(out))
}

/// Krum scores: for each update, the sum of squared Euclidean distances to
/// its `n − m − 2` nearest other updates, summed in ascending distance order.
pub fn multikrum_scores(updates: &[ClientUpdate], m: usize) -> Result<Vec<f64>> {
    check_updates(updates)?;
    let n = updates.len();
    if n < m + 3 {
        return Err(Error::config(format!(
            "multi-krum requires n - m - 2 >= 1, got n={n}, m={m}"
        )));
    }
    let nearest = n - m - 2;
    let mut scores = Vec::with_capacity(n);
    for (i, u) in updates.iter().enumerate() {
        let mut dists: Vec<f64> = updates
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| {
                u.params
                    .as_slice()
                    .iter()
                    .zip(v.params.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
        scores.push(dists[..nearest].iter().sum());
    }
    Ok(scores)
}

/// Multi-Krum: average the `q` updates with the smallest Krum scores, ties
/// broken by lower client id.
pub fn agg_multikrum(updates: &[ClientUpdate], m: usize, q: usize) -> Result<ParamVector> {
    let scores = multikrum_scores(updates, m)?;
    let n = updates.len();
    if q == 0 || q > n {
        return Err(Error::config(format!(
            "multi-krum selection count must satisfy 1 <= Q <= n, got Q={q}, n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(updates[a].id.cmp(&updates[b].id))
    });
    let selected: BTreeSet<ClientId> = order[..q].iter().map(|&i| updates[i].id).collect();
    Ok(plain_mean_by_id(updates, &selected))
}

/// Weighted geometric median via Weiszfeld iteration: distances floored at
/// 1e-8, at most 100 iterations, stopping once the iterate moves < 1e-9.
pub fn agg_rfa(updates: &[ClientUpdate], weights: &[f64]) -> Result<ParamVector> {
    check_updates(updates)?;
    check_weights(weights, updates.len())?;
    let mut z = agg_mean(updates, weights)?;
    for _ in 0..100 {
        let mut beta_sum = 0.0f64;
        let mut acc = ParamVector::zeros(z.dim());
        for (u, &w) in updates.iter().zip(weights) {
            let dist = z.dist(&u.params).max(1e-8);
            let beta = w / dist;
            beta_sum += beta;
            acc = acc.add_scaled(beta, &u.params);
        }
        let next = acc.scale(1.0 / beta_sum);
        let moved = next.dist(&z);
        z = next;
        if moved < 1e-9 {
            break;
        }
    }
    Ok(z)
}

/// Cosine similarity with a deterministic convention for zero-norm vectors:
/// two zero vectors count as identical (1), a zero against anything else as
/// unrelated (0).
fn cosine_or_default(a: &ParamVector, b: &ParamVector) -> f64 {
    match cosine(a, b) {
        Some(c) => c,
        None => {
            if a.norm() == 0.0 && b.norm() == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Mean pairwise cosine similarity within a cluster; singletons count as 1.
fn internal_similarity(cluster: &[usize], sims: &[Vec<f64>]) -> f64 {
    if cluster.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in &cluster[a + 1..] {
            total += sims[i][j];
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Two-way clustering on update direction: agglomerative average-linkage
/// merging on pairwise cosine similarity until two clusters remain. The
/// smaller cluster is flagged as malicious and the mean of the larger is
/// returned; a size tie flags the cluster with lower mean internal
/// similarity, and a further tie flags the cluster with the larger minimum
/// client id. All-identical updates admit no meaningful split: nothing is
/// flagged and the common update is returned.
pub fn agg_clusteredfl(updates: &[ClientUpdate]) -> Result<(ParamVector, BTreeSet<ClientId>)> {
    check_updates(updates)?;
    let n = updates.len();
    let all_ids: BTreeSet<ClientId> = updates.iter().map(|u| u.id).collect();
    if n == 1 || updates.iter().all(|u| u.params == updates[0].params) {
        return Ok((plain_mean_by_id(updates, &all_ids), BTreeSet::new()));
    }

    // Work over indices ordered by client id so merges are order-independent.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| updates[i].id);
    let sims: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cosine_or_default(&updates[i].params, &updates[j].params))
                .collect()
        })
        .collect();
    let mut clusters: Vec<Vec<usize>> = order.into_iter().map(|i| vec![i]).collect();
    while clusters.len() > 2 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0f64;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += sims[i][j];
                    }
                }
                let linkage = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none() || linkage > best.unwrap().0 {
                    best = Some((linkage, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("more than two clusters");
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        // Keep clusters ordered by their minimum client id for determinism.
        for c in clusters.iter_mut() {
            c.sort_by_key(|&i| updates[i].id);
        }
        clusters.sort_by_key(|c| updates[c[0]].id);
    }

    let (first, second) = (&clusters[0], &clusters[1]);
    let flag_first = match first.len().cmp(&second.len()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            let (sim_a, sim_b) = (
                internal_similarity(first, &sims),
                internal_similarity(second, &sims),
            );
            if sim_a != sim_b {
                sim_a < sim_b
            } else {
                // Clusters are ordered by minimum id, so the second holds
                // the larger minimum; flag it.
                false
            }
        }
    };
    let (flagged_cluster, kept_cluster) = if flag_first {
        (first, second)
    } else {
        (second, first)
    };
    let flagged: BTreeSet<ClientId> = flagged_cluster.iter().map(|&i| updates[i].id).collect();
    let kept: BTreeSet<ClientId> = kept_cluster.iter().map(|&i| updates[i].id).collect();
    Ok((plain_mean_by_id(updates, &kept), flagged))
}

/// Trust-bootstrapped aggregation: each update is scored by its clipped
/// cosine to the server's own update on a clean shard, rescaled to the
/// server update's norm, and the scores form the (normalized) weights. All
/// scores zero → the server update itself.
pub fn agg_fltrust(updates: &[ClientUpdate], server_update: &ParamVector) -> Result<ParamVector> {
    let dim = check_updates(updates)?;
    if server_update.dim() != dim {
        return Err(Error::config(format!(
            "server update has {} parameters, clients have {dim}",
            server_update.dim()
        )));
    }
    let server_norm = server_update.norm();
    let mut score_sum = 0.0f64;
    let mut acc = ParamVector::zeros(dim);
    let mut by_id: Vec<&ClientUpdate> = updates.iter().collect();
    by_id.sort_by_key(|u| u.id);
    for u in by_id {
        let score = cosine(&u.params, server_update).unwrap_or(0.0).max(0.0);
        if score > 0.0 {
            // Rescale the update to the server update's norm.
            let rescaled = u.params.scale(server_norm / u.params.norm());
            acc = acc.add_scaled(score, &rescaled);
            score_sum += score;
        }
    }
    if score_sum == 0.0 {
        log::warn!("fltrust: every trust score is zero; falling back to the server update");
        return Ok(server_update.clone());
    }
    Ok(acc.scale(1.0 / score_sum))
}

/// Bucketing wrapper: a seeded shuffle partitions the updates into ⌈n/s⌉
/// sequential buckets, each bucket is averaged, and the inner rule runs on
/// the bucket means (bucket sample counts are summed).
pub fn wrap_bucketing(
    updates: &[ClientUpdate],
    s: usize,
    inner: &AggFn,
    seed: u64,
) -> Result<ParamVector> {
    check_updates(updates)?;
    if s == 0 {
        return Err(Error::config("bucketing requires s >= 1"));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let buckets: Vec<ClientUpdate> = order
        .chunks(s)
        .enumerate()
        .map(|(bucket_id, chunk)| {
            let mut acc = ParamVector::zeros(updates[0].params.dim());
            let mut samples = 0usize;
            for &i in chunk {
                acc = acc.add(&updates[i].params);
                samples += updates[i].num_samples;
            }
            ClientUpdate {
                id: bucket_id,
                params: acc.scale(1.0 / chunk.len() as f64),
                num_samples: samples,
            }
        })
        .collect();
    inner(&buckets)
}

/// Splits `dim` coordinates into `p` contiguous chunks whose sizes differ by
/// at most one (the first `dim mod p` chunks take the extra coordinate).
fn chunk_ranges(dim: usize, p: usize) -> Vec<std::ops::Range<usize>> {
    let base = dim / p;
    let extra = dim % p;
    let mut ranges = Vec::with_capacity(p);
    let mut start = 0usize;
    for i in 0..p {
        let len = base + usize::from(i < extra);
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// Per-client splitting scores: each update is cut into `p` contiguous
/// sub-vectors, the inner rule aggregates each sub-vector across clients,
/// and a client's score is the summed Euclidean distance between its
/// sub-vectors and the sub-aggregates.
pub fn gas_scores(updates: &[ClientUpdate], p: usize, inner: &AggFn) -> Result<Vec<f64>> {
    let dim = check_updates(updates)?;
    if p == 0 || p > dim {
        return Err(Error::config(format!(
            "gas requires 1 <= p <= dim, got p={p}, dim={dim}"
        )));
    }
    let mut scores = vec![0.0f64; updates.len()];
    for range in chunk_ranges(dim, p) {
        let subs: Vec<ClientUpdate> = updates
            .iter()
            .map(|u| ClientUpdate {
                id: u.id,
                params: ParamVector::new(u.params.as_slice()[range.clone()].to_vec()),
                num_samples: u.num_samples,
            })
            .collect();
        let sub_agg = inner(&subs)?;
        for (score, sub) in scores.iter_mut().zip(&subs) {
            *score += sub.params.dist(&sub_agg);
        }
    }
    Ok(scores)
}

/// Gradient-splitting wrapper: keep the ⌈n/2⌉ clients with the lowest
/// splitting scores (ties by lower id) and average their full updates.
pub fn wrap_gas(updates: &[ClientUpdate], p: usize, inner: &AggFn) -> Result<ParamVector> {
    let scores = gas_scores(updates, p, inner)?;
    let n = updates.len();
    let keep = n.div_ceil(2);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(updates[a].id.cmp(&updates[b].id))
    });
    let selected: BTreeSet<ClientId> = order[..keep].iter().map(|&i| updates[i].id).collect();
    Ok(plain_mean_by_id(updates, &selected))
}
