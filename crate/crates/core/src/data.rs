//! Synthetic classification data and non-IID client partitioning.
//!
//! Data is drawn from isotropic Gaussian clusters, one per class, centered at
//! seeded random unit directions scaled by `class_separation`. Three partition
//! schemes distribute the pool across clients:
//!
//! * `pathological` — each client holds samples from a small fixed set of
//!   classes, assigned round-robin over a seeded class permutation (so several
//!   clients share the same class set by construction);
//! * `dominant_mix` — a dominant fraction of each client's samples comes from
//!   its assigned dominant class, the remainder uniformly from all classes;
//! * `iid` — per-client class histograms match the pool histogram within ±1.
//!
//! Every client shard is split 0.75/0.25 train/test (configurable), stratified
//! by class with largest-remainder rounding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;

/// Shape and hardness of the synthetic classification task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_client: usize,
    /// Distance from the origin to each class centroid, in feature units.
    pub class_separation: f64,
    /// Standard deviation of the isotropic per-coordinate noise.
    pub noise_std: f64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("dataset num_classes must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("dataset input_dim must be positive"));
        }
        if self.samples_per_client < 20 {
            return Err(Error::config(
                "samples_per_client must be at least 20 so the 0.75 split leaves a usable test set",
            ));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return Err(Error::config("class_separation must be a positive real"));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config("noise_std must be a positive real"));
        }
        Ok(())
    }
}

/// How client shards are drawn from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    /// Each client receives samples from exactly `classes_per_client` classes.
    Pathological { classes_per_client: usize },
    /// `dominant_fraction` of each client's samples from one dominant class,
    /// the rest drawn uniformly from all classes.
    DominantMix { dominant_fraction: f64 },
    /// Uniform assignment; per-client histograms track the pool histogram.
    Iid,
}

/// Client count, scheme, and train/test split for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// Train share of each client's shard, in (0, 1).
    pub split_ratio: f64,
}

impl PartitionPlan {
    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("split_ratio must lie in (0, 1)"));
        }
        match self.scheme {
            PartitionScheme::Pathological { classes_per_client } => {
                if classes_per_client == 0 {
                    return Err(Error::config("classes_per_client must be positive"));
                }
                if classes_per_client > spec.num_classes {
                    return Err(Error::config(
                        "classes_per_client cannot exceed num_classes",
                    ));
                }
                if classes_per_client * self.num_clients < spec.num_classes {
                    return Err(Error::config(
                        "pathological partition cannot cover every class: classes_per_client * num_clients < num_classes",
                    ));
                }
            }
            PartitionScheme::DominantMix { dominant_fraction } => {
                if !(dominant_fraction > 0.0 && dominant_fraction < 1.0) {
                    return Err(Error::config("dominant_fraction must lie in (0, 1)"));
                }
            }
            PartitionScheme::Iid => {}
        }
        Ok(())
    }
}

/// One client's train/test data.
#[derive(Debug, Clone)]
pub struct ClientShards {
    pub train: Batch,
    pub test: Batch,
}

/// Draws `total` labeled samples from seeded Gaussian class clusters.
///
/// Labels are assigned round-robin (`sample i` has class `i % C`), so class
/// counts differ by at most one.
pub fn generate(spec: &DatasetSpec, total: usize, seed: u64) -> Result<Batch> {
    spec.validate()?;
    if total == 0 {
        return Err(Error::config("cannot generate an empty pool"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut centroids = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        // Unit direction scaled by class_separation; redraw the (measure-zero)
        // degenerate case of a near-zero vector.
        loop {
            let v: Vec<f64> = (0..spec.input_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                centroids.push(
                    v.into_iter()
                        .map(|x| x / norm * spec.class_separation)
                        .collect::<Vec<f64>>(),
                );
                break;
            }
        }
    }
    let mut pool = Batch::empty(spec.input_dim);
    let mut row = vec![0.0f64; spec.input_dim];
    for i in 0..total {
        let label = i % spec.num_classes;
        for (j, r) in row.iter_mut().enumerate() {
            let z: f64 = normal.sample(&mut rng);
            *r = centroids[label][j] + spec.noise_std * z;
        }
        pool.push_row(&row, label);
    }
    Ok(pool)
}

/// Per-class index lists for a pool, in pool order.
fn class_indices(pool: &Batch, num_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for i in 0..pool.len() {
        by_class[pool.label(i)].push(i);
    }
    by_class
}

/// Splits off a class-stratified shard of `count` samples (the server-held
/// clean shard), returning `(shard, rest)`. The rest keeps pool order.
pub fn extract_root_shard(
    pool: &Batch,
    num_classes: usize,
    count: usize,
    seed: u64,
) -> Result<(Batch, Batch)> {
    if count == 0 || count >= pool.len() {
        return Err(Error::config(format!(
            "root shard size {count} must be positive and smaller than the pool ({})",
            pool.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut by_class = class_indices(pool, num_classes);
    let base = count / num_classes;
    let rem = count % num_classes;
    let mut taken = vec![false; pool.len()];
    let mut shard_indices = Vec::with_capacity(count);
    for (c, indices) in by_class.iter_mut().enumerate() {
        let want = base + usize::from(c < rem);
        if indices.len() < want {
            return Err(Error::partition(format!(
                "class {c} has {} samples, root shard needs {want}",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(want) {
            taken[i] = true;
            shard_indices.push(i);
        }
    }
    shard_indices.sort_unstable();
    let rest_indices: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
    Ok((pool.select(&shard_indices), pool.select(&rest_indices)))
}

/// Cursor-based draw over shuffled per-class index pools.
struct ClassPools {
    indices: Vec<Vec<usize>>,
    cursors: Vec<usize>,
}

impl ClassPools {
    fn new(pool: &Batch, num_classes: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut indices = class_indices(pool, num_classes);
        for list in &mut indices {
            list.shuffle(rng);
        }
        ClassPools { cursors: vec![0; indices.len()], indices }
    }

    fn remaining(&self, class: usize) -> usize {
        self.indices[class].len() - self.cursors[class]
    }

    fn draw(&mut self, class: usize, count: usize) -> Result<Vec<usize>> {
        if self.remaining(class) < count {
            return Err(Error::partition(format!(
                "class {class} exhausted: {} samples left, {count} requested",
                self.remaining(class)
            )));
        }
        let start = self.cursors[class];
        self.cursors[class] += count;
        Ok(self.indices[class][start..start + count].to_vec())
    }

    /// All undrawn indices, class-major.
    fn drain_rest(self) -> Vec<usize> {
        let mut rest = Vec::new();
        for (list, cursor) in self.indices.into_iter().zip(self.cursors) {
            rest.extend_from_slice(&list[cursor..]);
        }
        rest
    }
}

/// Splits one client's sample list into train/test, stratified by class with
/// largest-remainder rounding of the per-class test counts.
fn split_client(
    pool: &Batch,
    sample_indices: &[usize],
    num_classes: usize,
    split_ratio: f64,
) -> (Vec<usize>, Vec<usize>) {
    let n = sample_indices.len();
    let n_test = n - ((split_ratio * n as f64).round() as usize).min(n);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in sample_indices {
        by_class[pool.label(i)].push(i);
    }
    // Largest-remainder apportionment of n_test across classes.
    let test_share = n_test as f64 / n as f64;
    let mut counts: Vec<usize> = Vec::with_capacity(num_classes);
    let mut fracs: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0usize;
    for (c, members) in by_class.iter().enumerate() {
        let exact = members.len() as f64 * test_share;
        let base = (exact.floor() as usize).min(members.len());
        counts.push(base);
        assigned += base;
        fracs.push((exact - base as f64, c));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = n_test.saturating_sub(assigned);
    for &(_, c) in &fracs {
        if leftover == 0 {
            break;
        }
        if counts[c] < by_class[c].len() {
            counts[c] += 1;
            leftover -= 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let cut = members.len() - counts[c];
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    (train, test)
}

/// Partitions a pool into per-client train/test shards.
///
/// `samples_per_client` samples are drawn for every client according to the
/// plan's scheme; each client's shard is then split by `split_ratio`.
pub fn partition(
    pool: &Batch,
    spec: &DatasetSpec,
    plan: &PartitionPlan,
    seed: u64,
) -> Result<Vec<ClientShards>> {
    spec.validate()?;
    plan.validate(spec)?;
    let needed = plan.num_clients * spec.samples_per_client;
    if pool.len() < needed {
        return Err(Error::partition(format!(
            "pool has {} samples, plan needs {needed}",
            pool.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let c = spec.num_classes;
    let k = plan.num_clients;
    let spc = spec.samples_per_client;

    let mut per_client: Vec<Vec<usize>> = Vec::with_capacity(k);
    match plan.scheme {
        PartitionScheme::Pathological { classes_per_client } => {
            let mut perm: Vec<usize> = (0..c).collect();
            perm.shuffle(&mut rng);
            let mut pools = ClassPools::new(pool, c, &mut rng);
            for client in 0..k {
                let classes: Vec<usize> = (0..classes_per_client)
                    .map(|j| perm[(client * classes_per_client + j) % c])
                    .collect();
                let base = spc / classes_per_client;
                let rem = spc % classes_per_client;
                let mut samples = Vec::with_capacity(spc);
                for (slot, &class) in classes.iter().enumerate() {
                    let want = base + usize::from(slot < rem);
                    samples.extend(pools.draw(class, want)?);
                }
                per_client.push(samples);
            }
        }
        PartitionScheme::DominantMix { dominant_fraction } => {
            let mut perm: Vec<usize> = (0..c).collect();
            perm.shuffle(&mut rng);
            let mut pools = ClassPools::new(pool, c, &mut rng);
            let n_dom = (dominant_fraction * spc as f64).round() as usize;
            // First pass: dominant draws in client order.
            for client in 0..k {
                per_client.push(pools.draw(perm[client % c], n_dom)?);
            }
            // Second pass: the remainder is drawn uniformly from all classes.
            let mut rest = pools.drain_rest();
            rest.shuffle(&mut rng);
            let n_rest = spc - n_dom;
            let mut cursor = 0usize;
            for samples in per_client.iter_mut() {
                if rest.len() < cursor + n_rest {
                    return Err(Error::partition(
                        "pool exhausted while drawing the mixed remainder",
                    ));
                }
                samples.extend_from_slice(&rest[cursor..cursor + n_rest]);
                cursor += n_rest;
            }
        }
        PartitionScheme::Iid => {
            let mut pools = ClassPools::new(pool, c, &mut rng);
            let base = spc / c;
            let rem = spc % c;
            for client in 0..k {
                let mut samples = Vec::with_capacity(spc);
                for class in 0..c {
                    // Rotate which classes receive the remainder so per-class
                    // demand stays balanced across clients.
                    let mut want = base + usize::from((class + c - client % c) % c < rem);
                    // Steal from later classes if this one is exhausted; keeps
                    // totals exact while deviating histograms by at most the
                    // pool's own imbalance.
                    let mut probe = class;
                    while want > 0 {
                        let take = want.min(pools.remaining(probe));
                        if take > 0 {
                            samples.extend(pools.draw(probe, take)?);
                            want -= take;
                        }
                        if want > 0 {
                            probe = (probe + 1) % c;
                            if probe == class {
                                return Err(Error::partition(
                                    "pool exhausted during iid assignment",
                                ));
                            }
                        }
                    }
                }
                per_client.push(samples);
            }
        }
    }

    let mut shards = Vec::with_capacity(k);
    for samples in &per_client {
        let (train_idx, test_idx) = split_client(pool, samples, c, plan.split_ratio);
        shards.push(ClientShards {
            train: pool.select(&train_idx),
            test: pool.select(&test_idx),
        });
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            num_classes: 10,
            input_dim: 8,
            samples_per_client: 100,
            class_separation: 4.0,
            noise_std: 1.0,
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let s = spec();
        let a = generate(&s, 500, 7).unwrap();
        let b = generate(&s, 500, 7).unwrap();
        assert_eq!(a, b, "same seed must give bit-identical pools");
        assert_ne!(a, generate(&s, 500, 8).unwrap());

        let hist = a.class_histogram(10);
        let (min, max) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(max - min <= 1, "class counts {hist:?}");
    }

    #[test]
    fn near_zero_noise_is_linearly_separable() {
        // With vanishing noise every sample sits at its class centroid, so a
        // nearest-centroid linear rule is perfect. Verify 100% train accuracy
        // of a softmax regression fit briefly on the pool.
        let s = DatasetSpec { noise_std: 1e-9, ..spec() };
        let pool = generate(&s, 200, 3).unwrap();
        let arch = crate::model::ModelArch::new(s.input_dim, 0, s.num_classes).unwrap();
        let mut w = arch.init_params(1);
        for _ in 0..300 {
            let g = crate::model::gradient(&arch, &w, &pool).unwrap();
            w = crate::model::sgd_step(&w, &g, 0.5).unwrap();
        }
        let acc = crate::model::accuracy(&arch, &w, &pool).unwrap();
        assert_eq!(acc, 1.0, "zero-noise pool must be perfectly separable");
    }

    #[test]
    fn pathological_clients_hold_exactly_two_classes() {
        let s = spec();
        let pool = generate(&s, 20 * 100, 11).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::Pathological { classes_per_client: 2 },
            num_clients: 20,
            split_ratio: 0.75,
        };
        let shards = partition(&pool, &s, &plan, 13).unwrap();
        assert_eq!(shards.len(), 20);
        let mut class_sets = Vec::new();
        for sh in &shards {
            let mut classes: Vec<usize> = sh
                .train
                .labels()
                .iter()
                .chain(sh.test.labels())
                .cloned()
                .collect();
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes.len(), 2, "client must hold exactly 2 distinct labels");
            class_sets.push(classes);
        }
        // Round-robin assignment makes clients k and k+5 twins (C=10, 2 per
        // client): identical class sets must appear.
        assert_eq!(class_sets[0], class_sets[5]);
        assert_eq!(class_sets[1], class_sets[6]);
        // All 10 classes covered.
        let mut all: Vec<usize> = class_sets.iter().flatten().cloned().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn iid_histograms_track_pool_histogram() {
        let s = DatasetSpec { num_classes: 10, ..spec() };
        let pool = generate(&s, 4 * 100, 17).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::Iid,
            num_clients: 4,
            split_ratio: 0.75,
        };
        let shards = partition(&pool, &s, &plan, 19).unwrap();
        // Pool histogram scaled to one client: 400/10/4 = 10 per class.
        for sh in &shards {
            let mut hist = sh.train.class_histogram(10);
            for (h, t) in hist.iter_mut().zip(sh.test.class_histogram(10)) {
                *h += t;
            }
            for (c, &count) in hist.iter().enumerate() {
                assert!(
                    (count as i64 - 10).abs() <= 1,
                    "class {c} count {count} deviates from uniform"
                );
            }
        }
    }

    #[test]
    fn dominant_mix_share_lands_in_band() {
        let s = spec();
        let pool = generate(&s, 20 * 100, 23).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::DominantMix { dominant_fraction: 0.8 },
            num_clients: 20,
            split_ratio: 0.75,
        };
        let shards = partition(&pool, &s, &plan, 29).unwrap();
        for (k, sh) in shards.iter().enumerate() {
            let mut hist = sh.train.class_histogram(10);
            for (h, t) in hist.iter_mut().zip(sh.test.class_histogram(10)) {
                *h += t;
            }
            let total: usize = hist.iter().sum();
            let dominant = *hist.iter().max().unwrap();
            let share = dominant as f64 / total as f64;
            assert!(
                (0.75..=0.85).contains(&share),
                "client {k}: dominant share {share}"
            );
        }
    }

    #[test]
    fn shards_are_disjoint_and_split_is_stratified() {
        let s = spec();
        let pool = generate(&s, 20 * 100 + 50, 31).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::Pathological { classes_per_client: 2 },
            num_clients: 20,
            split_ratio: 0.75,
        };
        let shards = partition(&pool, &s, &plan, 37).unwrap();
        // Count row occurrences across all shards by matching feature rows:
        // generated features are continuous, so identical rows mean identical
        // pool indices almost surely. Track via exact byte keys.
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0usize;
        for sh in &shards {
            for b in [&sh.train, &sh.test] {
                for i in 0..b.len() {
                    let key: Vec<u64> = b.feature_row(i).iter().map(|f| f.to_bits()).collect();
                    assert!(seen.insert(key), "duplicate sample across shards");
                    total += 1;
                }
            }
        }
        assert_eq!(total, 20 * 100, "union of shards must cover exactly the drawn subset");

        for sh in &shards {
            let n = sh.train.len() + sh.test.len();
            assert_eq!(n, 100);
            let test_share = sh.test.len() as f64 / n as f64;
            assert!((test_share - 0.25).abs() <= 1.0 / n as f64 + 1e-12);
            // Stratification: per-class test counts within 1 of proportional.
            let train_h = sh.train.class_histogram(10);
            let test_h = sh.test.class_histogram(10);
            for c in 0..10 {
                let m = train_h[c] + test_h[c];
                if m == 0 {
                    continue;
                }
                let exact = m as f64 * 0.25;
                assert!(
                    (test_h[c] as f64 - exact).abs() <= 1.0,
                    "class {c}: test count {} vs exact {exact}",
                    test_h[c]
                );
            }
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let s = spec();
        let pool = generate(&s, 2000, 41).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::DominantMix { dominant_fraction: 0.8 },
            num_clients: 20,
            split_ratio: 0.75,
        };
        let a = partition(&pool, &s, &plan, 43).unwrap();
        let b = partition(&pool, &s, &plan, 43).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train, y.train);
            assert_eq!(x.test, y.test);
        }
    }

    #[test]
    fn infeasible_plans_error() {
        let s = spec();
        let pool = generate(&s, 100, 47).unwrap();
        let plan = PartitionPlan {
            scheme: PartitionScheme::Pathological { classes_per_client: 2 },
            num_clients: 20,
            split_ratio: 0.75,
        };
        assert!(matches!(
            partition(&pool, &s, &plan, 1),
            Err(Error::Partition(_))
        ));

        // classes_per_client * num_clients < num_classes cannot cover classes.
        let bad = PartitionPlan {
            scheme: PartitionScheme::Pathological { classes_per_client: 1 },
            num_clients: 4,
            split_ratio: 0.75,
        };
        assert!(matches!(
            partition(&pool, &s, &bad, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn root_shard_is_stratified_and_disjoint() {
        let s = spec();
        let pool = generate(&s, 2100, 53).unwrap();
        let (root, rest) = extract_root_shard(&pool, 10, 100, 59).unwrap();
        assert_eq!(root.len(), 100);
        assert_eq!(rest.len(), 2000);
        let hist = root.class_histogram(10);
        assert!(hist.iter().all(|&h| h == 10), "root histogram {hist:?}");
    }
}
