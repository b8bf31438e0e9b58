//! Server state machine: collection, customized aggregation, global-model
//! updating, recovery, calibration, anomaly detection, and the blacklist.
//!
//! Round flow: the round-t global model is the sample-weighted mean of the
//! previous round's recovered pool; each participant receives a customized
//! model built from similarity-weighted recovered models, trains locally,
//! and uploads an update; the server recovers a full model from each upload,
//! calibrates it against the round's global model, and blacklists any client
//! whose calibrated update is larger than the detection threshold. Both
//! pools are replaced wholesale at the round barrier, so their key set is
//! always the set of accepted participants of the latest round.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::attack::AttackContext;
use crate::client::{self, ClientId, ClientRecord, LocalConfig};
use crate::error::{Error, Result};
use crate::model::{cosine, ModelArch, ParamVector};
use crate::seeds::{self, Stream};

/// Detection outcome for one uploaded update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Benign,
    Malicious,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Benign => "benign",
            Verdict::Malicious => "malicious",
        })
    }
}

/// Ground-truth role of a client in the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Benign,
    Malicious,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Benign => "benign",
            Role::Malicious => "malicious",
        })
    }
}

/// Customized-aggregation and detection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomizationParams {
    /// Softmax scale factor; larger values sharpen the similarity weighting.
    pub alpha: f64,
    /// Self-contribution weight for returning clients, in [0, 1).
    pub phi: f64,
    /// Detection threshold on the calibrated update norm.
    pub t_norm: f64,
}

impl CustomizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha must be a non-negative real"));
        }
        if !(0.0..1.0).contains(&self.phi) {
            return Err(Error::config("phi must lie in [0, 1)"));
        }
        if !(self.t_norm > 0.0) || !self.t_norm.is_finite() {
            return Err(Error::config("t_norm must be a positive real"));
        }
        Ok(())
    }
}

impl Default for CustomizationParams {
    fn default() -> Self {
        CustomizationParams {
            alpha: 10.0,
            phi: 0.1,
            t_norm: 10.0,
        }
    }
}

/// Server-side state carried across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    round: usize,
    global: ParamVector,
    /// Recovered models from the previous round, keyed by client id.
    recovered_pool: BTreeMap<ClientId, ParamVector>,
    /// Calibrated updates from the previous round; same key set.
    calibrated_pool: BTreeMap<ClientId, ParamVector>,
    sample_counts: BTreeMap<ClientId, usize>,
    blacklist: BTreeSet<ClientId>,
    /// Models exchanged beyond the regular down/up pair (probe requests).
    extra_exchanges: usize,
    // Accepted entries for the round in progress; swapped in at the barrier.
    staged_recovered: BTreeMap<ClientId, ParamVector>,
    staged_calibrated: BTreeMap<ClientId, ParamVector>,
}

impl ServerState {
    pub fn new(initial_global: ParamVector, sample_counts: BTreeMap<ClientId, usize>) -> Self {
        ServerState {
            round: 0,
            global: initial_global,
            recovered_pool: BTreeMap::new(),
            calibrated_pool: BTreeMap::new(),
            sample_counts,
            blacklist: BTreeSet::new(),
            extra_exchanges: 0,
            staged_recovered: BTreeMap::new(),
            staged_calibrated: BTreeMap::new(),
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn recovered_pool(&self) -> &BTreeMap<ClientId, ParamVector> {
        &self.recovered_pool
    }

    pub fn calibrated_pool(&self) -> &BTreeMap<ClientId, ParamVector> {
        &self.calibrated_pool
    }

    pub fn blacklist(&self) -> &BTreeSet<ClientId> {
        &self.blacklist
    }

    pub fn extra_exchanges(&self) -> usize {
        self.extra_exchanges
    }

    /// Fetches client k's previous-round update. Returning clients are
    /// served from the calibrated pool at no communication cost; new clients
    /// must supply a probe update (one extra model exchange).
    pub fn collect(
        &mut self,
        k: ClientId,
        returning: bool,
        probe_update: Option<&ParamVector>,
    ) -> Result<ParamVector> {
        if self.blacklist.contains(&k) {
            return Err(Error::protocol(format!(
                "client {k} is blacklisted and cannot be collected"
            )));
        }
        let in_pool = self.calibrated_pool.contains_key(&k);
        if returning != in_pool {
            return Err(Error::protocol(format!(
                "collect called with returning={returning} but pool membership is {in_pool}"
            )));
        }
        if in_pool {
            Ok(self.calibrated_pool[&k].clone())
        } else {
            let probe = probe_update.ok_or_else(|| {
                Error::protocol(format!("new client {k} requires a probe update"))
            })?;
            self.extra_exchanges += 1;
            Ok(probe.clone())
        }
    }

    /// Cosine similarity of `d_k` to every calibrated-pool entry other than
    /// k's own. A zero-norm vector on either side contributes similarity 0:
    /// it carries no directional information.
    pub fn similarity_row(&self, d_k: &ParamVector, k: ClientId) -> BTreeMap<ClientId, f64> {
        let mut row = BTreeMap::new();
        for (&i, d_i) in &self.calibrated_pool {
            if i == k {
                continue;
            }
            let sim = match cosine(d_k, d_i) {
                Some(c) => c,
                None => {
                    log::debug!("zero-norm update in similarity of client {k} vs {i}; using 0");
                    0.0
                }
            };
            row.insert(i, sim);
        }
        row
    }

    /// Global model for the new round: the sample-count-weighted mean of the
    /// recovered pool.
    pub fn update_global(&self) -> Result<ParamVector> {
        if self.recovered_pool.is_empty() {
            return Err(Error::protocol(
                "global update requires a non-empty recovered pool",
            ));
        }
        let total: usize = self
            .recovered_pool
            .keys()
            .map(|id| self.sample_counts.get(id).copied().unwrap_or(0))
            .sum();
        if total == 0 {
            return Err(Error::protocol(
                "recovered pool has no associated training samples",
            ));
        }
        let mut acc = ParamVector::zeros(self.global.dim());
        for (id, w) in &self.recovered_pool {
            let weight = self.sample_counts.get(id).copied().unwrap_or(0) as f64 / total as f64;
            acc = acc.add_scaled(weight, w);
        }
        Ok(acc)
    }

    /// Customized model for client k: similarity weights over the calibrated
    /// pool applied to the recovered pool. Also returns the weights for
    /// reporting.
    pub fn customize(
        &self,
        k: ClientId,
        d_k: &ParamVector,
        params: &CustomizationParams,
    ) -> Result<(ParamVector, BTreeMap<ClientId, f64>)> {
        if self.recovered_pool.is_empty() {
            return Err(Error::protocol(
                "customization requires a non-empty pool; use the global model at round 0",
            ));
        }
        let sims = self.similarity_row(d_k, k);
        let self_id = self.calibrated_pool.contains_key(&k).then_some(k);
        let weights = normalize_weights(&sims, params.alpha, params.phi, self_id)?;
        let mut w_hat = ParamVector::zeros(self.global.dim());
        for (id, &weight) in &weights {
            w_hat = w_hat.add_scaled(weight, &self.recovered_pool[id]);
        }
        Ok((w_hat, weights))
    }

    /// Applies the detection rule and stages accepted entries for the round
    /// barrier: a calibrated update larger than `t_norm` blacklists the
    /// client permanently and purges its pool entries; anything else is
    /// staged for the next round's pools.
    pub fn detect(
        &mut self,
        k: ClientId,
        recovered: ParamVector,
        calibrated: ParamVector,
        t_norm: f64,
    ) -> Verdict {
        let norm = calibrated.norm();
        if !norm.is_finite() || norm > t_norm {
            self.blacklist.insert(k);
            self.recovered_pool.remove(&k);
            self.calibrated_pool.remove(&k);
            self.staged_recovered.remove(&k);
            self.staged_calibrated.remove(&k);
            Verdict::Malicious
        } else {
            self.staged_recovered.insert(k, recovered);
            self.staged_calibrated.insert(k, calibrated);
            Verdict::Benign
        }
    }

    /// Round barrier: installs the new global model and replaces both pools
    /// with the entries accepted this round.
    pub fn advance_round(&mut self, new_global: ParamVector) {
        self.round += 1;
        self.global = new_global;
        self.recovered_pool = std::mem::take(&mut self.staged_recovered);
        self.calibrated_pool = std::mem::take(&mut self.staged_calibrated);
        debug_assert!(
            self.recovered_pool.len() == self.calibrated_pool.len()
                && self.recovered_pool.keys().eq(self.calibrated_pool.keys()),
            "pools must share one key set"
        );
    }
}

/// Softmax similarity weights with scale `alpha`. When the client's own
/// entry is in the pool (`self_id`), it takes fixed weight `phi` and the
/// softmax over the others is scaled by `1 − phi`; otherwise the bare
/// softmax is returned. The output is non-negative and sums to 1.
pub fn normalize_weights(
    sims: &BTreeMap<ClientId, f64>,
    alpha: f64,
    phi: f64,
    self_id: Option<ClientId>,
) -> Result<BTreeMap<ClientId, f64>> {
    if sims.is_empty() {
        return match self_id {
            // The pool holds only the client's own entry: all mass to self.
            Some(k) => Ok(BTreeMap::from([(k, 1.0)])),
            None => Err(Error::protocol(
                "similarity row is empty and the client has no pool entry",
            )),
        };
    }
    // Max-subtracted exponentials keep large alpha stable.
    let max = sims.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: BTreeMap<ClientId, f64> = sims
        .iter()
        .map(|(&id, &s)| (id, (alpha * (s - max)).exp()))
        .collect();
    let total: f64 = exps.values().sum();
    let scale = if self_id.is_some() { 1.0 - phi } else { 1.0 };
    let mut out: BTreeMap<ClientId, f64> = exps
        .into_iter()
        .map(|(id, e)| (id, scale * e / total))
        .collect();
    if let Some(k) = self_id {
        out.insert(k, phi);
    }
    Ok(out)
}

/// Recovery: full model from a customized base and an uploaded update.
pub fn recover(w_hat: &ParamVector, d: &ParamVector) -> ParamVector {
    w_hat.add(d)
}

/// Calibration: the recovered model re-expressed as an update against the
/// round's global model.
pub fn calibrate(recovered: &ParamVector, global: &ParamVector) -> ParamVector {
    recovered.sub(global)
}

/// Ground truth plus detection outcome and per-client measurements for one
/// client in one round.
#[derive(Debug, Clone)]
pub struct ClientRow {
    pub round: usize,
    pub client_id: ClientId,
    pub role: Role,
    pub verdict: Option<Verdict>,
    /// Norm of the uploaded (possibly poisoned) update.
    pub update_norm: f64,
    /// Norm of the calibrated update; absent for baseline aggregators.
    pub calibrated_norm: Option<f64>,
    pub acc_customized: f64,
    pub acc_personalized: Option<f64>,
}

/// Everything observable about one round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub rows: Vec<ClientRow>,
    /// Customization weights per participant (absent in pool-less rounds).
    pub weights: BTreeMap<ClientId, BTreeMap<ClientId, f64>>,
    /// True when the round fell back to the previous global model because
    /// the recovered pool was empty.
    pub degenerate_pool: bool,
    pub participants: Vec<ClientId>,
}

/// Borrowed inputs for one round of the full protocol.
pub struct RoundInputs<'a> {
    pub arch: &'a ModelArch,
    pub clients: &'a mut BTreeMap<ClientId, ClientRecord>,
    pub participants: &'a [ClientId],
    pub attack: &'a AttackContext,
    pub local: &'a LocalConfig,
    pub custom: &'a CustomizationParams,
    pub root_seed: u64,
}

/// Runs one full round: global update → collection → customization → local
/// training → attack crafting → recovery → calibration → detection → round
/// barrier.
pub fn run_round(state: &mut ServerState, inputs: RoundInputs<'_>) -> Result<RoundReport> {
    let t = state.round;
    let mut participants: Vec<ClientId> = inputs.participants.to_vec();
    participants.sort_unstable();
    participants.dedup();
    if participants.is_empty() {
        return Err(Error::config("a round requires at least one participant"));
    }
    for &k in &participants {
        if state.blacklist.contains(&k) {
            return Err(Error::protocol(format!(
                "blacklisted client {k} offered as a round-{t} participant"
            )));
        }
        if !inputs.clients.contains_key(&k) {
            return Err(Error::protocol(format!("unknown client {k}")));
        }
    }

    let w_prev = state.global.clone();
    let degenerate_pool = state.recovered_pool.is_empty();
    let w_t = if degenerate_pool {
        if t > 0 {
            log::warn!("round {t}: recovered pool is empty; reusing the previous global model");
        }
        w_prev.clone()
    } else {
        state.update_global()?
    };

    // Collection, customization, and honest local training.
    let num_classes = inputs.arch.num_classes;
    let mut honest: BTreeMap<ClientId, ParamVector> = BTreeMap::new();
    let mut customized: BTreeMap<ClientId, ParamVector> = BTreeMap::new();
    let mut trained: BTreeMap<ClientId, (ParamVector, ParamVector)> = BTreeMap::new();
    let mut weights_report: BTreeMap<ClientId, BTreeMap<ClientId, f64>> = BTreeMap::new();
    for &k in &participants {
        let client = &inputs.clients[&k];
        let train_batch = inputs.attack.training_batch(k, &client.train, num_classes);
        let w_hat = if state.calibrated_pool.is_empty() {
            w_t.clone()
        } else {
            let returning = state.calibrated_pool.contains_key(&k);
            let d_prev = if returning {
                state.collect(k, true, None)?
            } else {
                // A new client probes by training once from the previous
                // global model; this costs one extra model exchange.
                let probe_seed =
                    seeds::derive_pair(inputs.root_seed, Stream::Probe, t as u64, k as u64);
                let probed =
                    client::local_train(inputs.arch, &train_batch, &w_prev, inputs.local, probe_seed)?;
                let probe = probed.sub(&w_prev);
                state.collect(k, false, Some(&probe))?
            };
            let (w_hat, weights) = state.customize(k, &d_prev, inputs.custom)?;
            weights_report.insert(k, weights);
            w_hat
        };
        let train_seed = seeds::derive_pair(inputs.root_seed, Stream::Batching, t as u64, k as u64);
        let (w_k, v_next) =
            client::client_update(inputs.arch, &train_batch, &w_hat, &client.v, inputs.local, train_seed)?;
        honest.insert(k, client::compute_update(&w_k, &w_hat));
        customized.insert(k, w_hat);
        trained.insert(k, (w_k, v_next));
    }

    // Malicious participants replace their uploads.
    let uploads = inputs.attack.craft_round_updates(&honest)?;

    // Recovery, calibration, detection; accepted entries are staged and
    // swapped in at the barrier.
    let mut rows = Vec::with_capacity(participants.len());
    for &k in &participants {
        let is_malicious = inputs.attack.is_malicious(k);
        let d_up = &uploads[&k];
        let recovered = recover(&customized[&k], d_up);
        let calibrated = calibrate(&recovered, &w_t);
        if !is_malicious && !calibrated.is_finite() {
            return Err(Error::numerical(format!(
                "benign client {k} produced a non-finite calibrated update in round {t}"
            )));
        }
        let verdict = state.detect(k, recovered, calibrated.clone(), inputs.custom.t_norm);
        let (w_k, v_next) = &trained[&k];
        let client = &inputs.clients[&k];
        let acc_customized = client::evaluate(inputs.arch, client, w_k)?;
        let acc_personalized = client::evaluate(inputs.arch, client, v_next)?;
        rows.push(ClientRow {
            round: t,
            client_id: k,
            role: if is_malicious { Role::Malicious } else { Role::Benign },
            verdict: Some(verdict),
            update_norm: d_up.norm(),
            calibrated_norm: Some(calibrated.norm()),
            acc_customized,
            acc_personalized: Some(acc_personalized),
        });
    }

    for &k in &participants {
        let (_, v_next) = trained.remove(&k).expect("trained above");
        inputs.clients.get_mut(&k).expect("validated above").v = v_next;
    }

    state.advance_round(w_t);
    Ok(RoundReport {
        round: t,
        rows,
        weights: weights_report,
        degenerate_pool,
        participants,
    })
}
