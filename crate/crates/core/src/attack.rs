//! Untargeted poisoning attacks.
//!
//! Label flipping poisons a malicious client's training data before local
//! training; every other attack replaces the client's uploaded update after
//! honest local training. The crafted-update attacks (LIE, Min-Max, Min-Sum,
//! IPM) operate on a view of the round's updates whose contents depend on the
//! adversary's knowledge: under partial knowledge only the malicious clients'
//! own honest updates are visible, under full knowledge all participants'.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::client::ClientId;
use crate::error::{Error, Result};
use crate::model::{Batch, ParamVector};

/// Which attack runs, and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    /// Label flipping: y ← (y+1) mod C on malicious training data.
    LabelFlip,
    /// Sign flipping: upload −d.
    SignFlip,
    /// Model replacement: upload scale·d.
    ModelReplacement,
    /// "A little is enough": μ − z_max·δ over the view.
    Lie,
    /// Largest perturbation keeping the max distance within the benign spread.
    MinMax,
    /// Largest perturbation keeping the summed squared distance in bounds.
    MinSum,
    /// Inner-product manipulation: drive ⟨mean, benign mean⟩ negative.
    Ipm,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::ModelReplacement => "model_replacement",
            AttackKind::Lie => "lie",
            AttackKind::MinMax => "min_max",
            AttackKind::MinSum => "min_sum",
            AttackKind::Ipm => "ipm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AttackKind::None,
            "label_flip" | "lf" => AttackKind::LabelFlip,
            "sign_flip" | "sf" => AttackKind::SignFlip,
            "model_replacement" | "mr" => AttackKind::ModelReplacement,
            "lie" => AttackKind::Lie,
            "min_max" | "minmax" => AttackKind::MinMax,
            "min_sum" | "minsum" => AttackKind::MinSum,
            "ipm" => AttackKind::Ipm,
            other => return Err(Error::config(format!("unknown attack kind '{other}'"))),
        })
    }
}

/// What the adversary can observe each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knowledge {
    /// Only the malicious clients' own honest updates.
    Partial,
    /// Every participant's update.
    Full,
}

impl Knowledge {
    pub fn as_str(&self) -> &'static str {
        match self {
            Knowledge::Partial => "partial",
            Knowledge::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "partial" => Knowledge::Partial,
            "full" => Knowledge::Full,
            other => return Err(Error::config(format!("unknown knowledge level '{other}'"))),
        })
    }
}

/// Full attack configuration for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of clients that are malicious, in [0, 0.5).
    pub malicious_fraction: f64,
    /// Scale for model replacement; defaults to the per-round participant count.
    pub mr_scale: Option<f64>,
    /// ε for inner-product manipulation; defaults to the participant count.
    pub ipm_epsilon: Option<f64>,
    pub knowledge: Knowledge,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.malicious_fraction) {
            return Err(Error::config(
                "malicious_fraction must lie in [0, 0.5)",
            ));
        }
        if let Some(s) = self.mr_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config("mr_scale must be a positive real"));
            }
        }
        if let Some(e) = self.ipm_epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::config("ipm_epsilon must be a positive real"));
            }
        }
        if self.kind == AttackKind::Ipm && self.knowledge != Knowledge::Full {
            return Err(Error::config(
                "ipm needs the benign updates: set knowledge = full",
            ));
        }
        Ok(())
    }

    pub fn benign() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            malicious_fraction: 0.0,
            mr_scale: None,
            ipm_epsilon: None,
            knowledge: Knowledge::Partial,
        }
    }
}

/// The round's updates as visible to the adversary.
#[derive(Debug, Clone)]
pub struct BenignView {
    /// Visible `(client_id, update)` pairs, ascending by id.
    pub updates: Vec<(ClientId, ParamVector)>,
    /// Total participants this round (the `n` of the LIE construction).
    pub num_participants: usize,
    /// Malicious ids among the participants.
    pub malicious_ids: BTreeSet<ClientId>,
}

impl BenignView {
    fn require_updates(&self, min: usize, what: &str) -> Result<()> {
        if self.updates.len() < min {
            return Err(Error::config(format!(
                "{what} needs at least {min} updates in the adversary view, got {}",
                self.updates.len()
            )));
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        self.updates[0].1.dim()
    }

    /// Coordinate-wise mean over the visible updates.
    fn mean(&self) -> ParamVector {
        let n = self.updates.len() as f64;
        let mut acc = vec![0.0f64; self.dim()];
        for (_, u) in &self.updates {
            for (a, &x) in acc.iter_mut().zip(u.as_slice()) {
                *a += x;
            }
        }
        ParamVector::new(acc.into_iter().map(|a| a / n).collect())
    }

    /// Coordinate-wise population standard deviation over the visible updates.
    fn std(&self) -> ParamVector {
        let n = self.updates.len() as f64;
        let mean = self.mean();
        let mut acc = vec![0.0f64; self.dim()];
        for (_, u) in &self.updates {
            for ((a, &x), &m) in acc.iter_mut().zip(u.as_slice()).zip(mean.as_slice()) {
                *a += (x - m) * (x - m);
            }
        }
        ParamVector::new(acc.into_iter().map(|a| (a / n).sqrt()).collect())
    }
}

/// Picks the malicious set: the first `⌈fraction·num_clients⌉` ids of a
/// seeded shuffle of all ids.
pub fn select_malicious(num_clients: usize, fraction: f64, seed: u64) -> BTreeSet<ClientId> {
    let count = (fraction * num_clients as f64).ceil() as usize;
    let mut ids: Vec<ClientId> = (0..num_clients).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.into_iter().take(count).collect()
}

/// Label flipping: `y ← (y+1) mod C`, features untouched.
pub fn poison_labels(batch: &Batch, num_classes: usize) -> Batch {
    let mut out = Batch::empty(batch.input_dim());
    for i in 0..batch.len() {
        out.push_row(batch.feature_row(i), (batch.label(i) + 1) % num_classes);
    }
    out
}

/// Sign flipping: `−d`.
pub fn poison_sign_flip(d: &ParamVector) -> ParamVector {
    d.scale(-1.0)
}

/// Model replacement: `scale · d`.
pub fn poison_model_replacement(d: &ParamVector, scale: f64) -> ParamVector {
    d.scale(scale)
}

/// `z_max = Φ⁻¹((n−m−s)/(n−m))` with `s = ⌊n/2+1⌋ − m`.
///
/// Falls back to 0 (pure mean) when the quantile degenerates out of (0, 1).
pub fn lie_z_max(n: usize, m: usize) -> f64 {
    if n <= m {
        return 0.0;
    }
    let s = (n / 2 + 1) as i64 - m as i64;
    let q = (n as i64 - m as i64 - s) as f64 / (n - m) as f64;
    if q <= 0.0 || q >= 1.0 {
        log::warn!("lie attack infeasible for n={n}, m={m}; using z_max = 0");
        return 0.0;
    }
    Normal::standard().inverse_cdf(q)
}

/// "A little is enough": coordinate-wise `μ − z_max·δ` over the view.
pub fn poison_lie(view: &BenignView) -> Result<ParamVector> {
    view.require_updates(2, "lie")?;
    let z = lie_z_max(view.num_participants, view.malicious_ids.len());
    Ok(view.mean().add_scaled(-z, &view.std()))
}

/// Largest feasible γ for `d_m = mean + γ·d_p` under `feasible`, found by the
/// halving search: start at 10 with step 5, move up on success and down on
/// failure, halving the step until it drops below 1e-3. γ = 0 (the plain
/// mean) is always feasible for both constraints, so the search brackets the
/// feasibility boundary from either side.
fn halving_search(feasible: impl Fn(f64) -> bool) -> f64 {
    let mut gamma = 10.0f64;
    let mut step = gamma / 2.0;
    let mut best = 0.0f64;
    loop {
        if feasible(gamma) {
            best = gamma;
            gamma += step;
        } else {
            gamma -= step;
        }
        step /= 2.0;
        if step < 1e-3 {
            break;
        }
    }
    best
}

fn crafted(view: &BenignView, gamma: f64) -> ParamVector {
    view.mean().add_scaled(gamma, &view.std().scale(-1.0))
}

/// Min-Max: the crafted update's largest distance to any visible update must
/// not exceed the largest distance between visible updates.
pub fn poison_min_max(view: &BenignView) -> Result<ParamVector> {
    view.require_updates(2, "min_max")?;
    let bound = view
        .updates
        .iter()
        .flat_map(|(_, a)| view.updates.iter().map(move |(_, b)| a.dist(b)))
        .fold(0.0f64, f64::max);
    let feasible = |gamma: f64| {
        let d_m = crafted(view, gamma);
        view.updates
            .iter()
            .map(|(_, u)| d_m.dist(u))
            .fold(0.0f64, f64::max)
            <= bound
    };
    Ok(crafted(view, halving_search(feasible)))
}

/// Min-Sum: the crafted update's summed squared distances to the visible
/// updates must not exceed the worst such sum among the visible updates.
pub fn poison_min_sum(view: &BenignView) -> Result<ParamVector> {
    view.require_updates(2, "min_sum")?;
    let sq_sum = |p: &ParamVector| -> f64 {
        view.updates
            .iter()
            .map(|(_, u)| {
                let d = p.dist(u);
                d * d
            })
            .sum()
    };
    let bound = view
        .updates
        .iter()
        .map(|(_, u)| sq_sum(u))
        .fold(0.0f64, f64::max);
    let feasible = |gamma: f64| sq_sum(&crafted(view, gamma)) <= bound;
    Ok(crafted(view, halving_search(feasible)))
}

/// Inner-product manipulation: every malicious client submits
/// `−(ε/(N−M))·Σ_benign d_i = −ε·mean_benign`, so the plain average over all
/// N participants equals `(N − M(1+ε))/(N(N−M)) · Σ_benign d_i` and its inner
/// product with the benign mean is negative whenever ε > (N−M)/M.
pub fn poison_ipm(
    view: &BenignView,
    num_participants: usize,
    num_malicious: usize,
    epsilon: f64,
) -> Result<ParamVector> {
    if num_malicious == 0 || num_participants <= num_malicious {
        return Err(Error::config(format!(
            "ipm requires N > M >= 1, got N={num_participants}, M={num_malicious}"
        )));
    }
    let benign: Vec<&ParamVector> = view
        .updates
        .iter()
        .filter(|(id, _)| !view.malicious_ids.contains(id))
        .map(|(_, u)| u)
        .collect();
    if benign.is_empty() {
        return Err(Error::config(
            "ipm view contains no benign updates; full knowledge is required",
        ));
    }
    let dim = benign[0].dim();
    let mut acc = vec![0.0f64; dim];
    for u in &benign {
        for (a, &x) in acc.iter_mut().zip(u.as_slice()) {
            *a += x;
        }
    }
    let n = benign.len() as f64;
    Ok(ParamVector::new(
        acc.into_iter().map(|a| -epsilon * a / n).collect(),
    ))
}

/// Per-run attack state: the fixed malicious set plus resolved parameters.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub spec: AttackSpec,
    pub malicious: BTreeSet<ClientId>,
    /// Resolved model-replacement scale (defaults to participants per round).
    pub mr_scale: f64,
    /// Resolved ε for inner-product manipulation (same default).
    pub ipm_epsilon: f64,
}

impl AttackContext {
    /// Selects the malicious set and resolves defaulted parameters against
    /// the configured per-round participant count.
    pub fn new(
        spec: AttackSpec,
        num_clients: usize,
        participants_per_round: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let malicious = if spec.kind == AttackKind::None {
            BTreeSet::new()
        } else {
            select_malicious(num_clients, spec.malicious_fraction, seed)
        };
        Ok(AttackContext {
            spec,
            malicious,
            mr_scale: spec.mr_scale.unwrap_or(participants_per_round as f64),
            ipm_epsilon: spec.ipm_epsilon.unwrap_or(participants_per_round as f64),
        })
    }

    pub fn is_malicious(&self, id: ClientId) -> bool {
        self.malicious.contains(&id)
    }

    /// The batch a client actually trains on: label-flipped for malicious
    /// clients under the label-flip attack, untouched otherwise.
    pub fn training_batch(&self, id: ClientId, train: &Batch, num_classes: usize) -> Batch {
        if self.spec.kind == AttackKind::LabelFlip && self.is_malicious(id) {
            poison_labels(train, num_classes)
        } else {
            train.clone()
        }
    }

    /// Replaces malicious participants' honest updates with poisoned ones.
    ///
    /// `honest` maps every participant to its honestly computed update for
    /// the round; benign entries pass through untouched.
    pub fn craft_round_updates(
        &self,
        honest: &BTreeMap<ClientId, ParamVector>,
    ) -> Result<BTreeMap<ClientId, ParamVector>> {
        let mut out = honest.clone();
        let malicious_in_round: BTreeSet<ClientId> = honest
            .keys()
            .filter(|id| self.is_malicious(**id))
            .cloned()
            .collect();
        if malicious_in_round.is_empty() {
            return Ok(out);
        }
        match self.spec.kind {
            AttackKind::None | AttackKind::LabelFlip => {}
            AttackKind::SignFlip => {
                for id in &malicious_in_round {
                    out.insert(*id, poison_sign_flip(&honest[id]));
                }
            }
            AttackKind::ModelReplacement => {
                for id in &malicious_in_round {
                    out.insert(*id, poison_model_replacement(&honest[id], self.mr_scale));
                }
            }
            AttackKind::Lie | AttackKind::MinMax | AttackKind::MinSum | AttackKind::Ipm => {
                let visible: Vec<(ClientId, ParamVector)> = honest
                    .iter()
                    .filter(|(id, _)| {
                        self.spec.knowledge == Knowledge::Full || malicious_in_round.contains(id)
                    })
                    .map(|(id, u)| (*id, u.clone()))
                    .collect();
                let view = BenignView {
                    updates: visible,
                    num_participants: honest.len(),
                    malicious_ids: malicious_in_round.clone(),
                };
                let poisoned = match self.spec.kind {
                    AttackKind::Lie => poison_lie(&view)?,
                    AttackKind::MinMax => poison_min_max(&view)?,
                    AttackKind::MinSum => poison_min_sum(&view)?,
                    AttackKind::Ipm => poison_ipm(
                        &view,
                        honest.len(),
                        malicious_in_round.len(),
                        self.ipm_epsilon,
                    )?,
                    _ => unreachable!(),
                };
                for id in &malicious_in_round {
                    out.insert(*id, poisoned.clone());
                }
            }
        }
        Ok(out)
    }
}
