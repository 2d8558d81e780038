//! Federated training protocol: message schema, local training, and
//! federated averaging.
//!
//! A session pairs one server with `n` federates. Each federate joins,
//! receives the model config and hyperparameters, then for every round
//! trains the broadcast global parameters on its own silo and returns a
//! local update. The server waits for all `n` updates (a hard barrier,
//! enforced by [`RoundState`]), averages them, and broadcasts the result
//! as the next round's starting point. Faults are fail-stop: any
//! malformed, stale, duplicate, or missing message aborts the session
//! with a diagnostic rather than degrading silently.

mod codec;
mod session;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use codec::{
    decode_message, encode_message, TAG_COMPLETE, TAG_GLOBAL_MODEL, TAG_JOIN_ACK,
    TAG_JOIN_REQUEST, TAG_LOCAL_UPDATE, TAG_ROUND_BEGIN,
};
pub use session::{recv_message, run_client, run_server, send_message, ServerOptions};

use crate::data::{batches, to_batch, Silo};
use crate::error::{NnError, ProtoError};
use crate::nn::{compute_gradients, sgd_step, FcnConfig};
use crate::params::ParamSet;
use crate::rng::derive_seed;
use crate::tensor::Element;

/// Training schedule shared by every participant. The server is the
/// authority; federates receive it in the join acknowledgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Local epochs per round, at least 1.
    pub epochs: u32,
    /// Mini-batch size, at least 1.
    pub batch_size: u32,
    /// Federated rounds, at least 1.
    pub rounds: u32,
    /// SGD step size, positive and finite.
    pub learning_rate: f64,
    /// Root of every derived seed in the run.
    pub base_seed: u64,
}

impl Hyperparams {
    /// Bounds on the fields training actually consumes; `rounds` is
    /// checked separately so a zero-round session (which legitimately
    /// returns the initial parameters) can bypass it.
    fn validate_training(&self) -> Result<(), ProtoError> {
        if self.epochs == 0 {
            return Err(ProtoError::Session(
                "hyperparameters: epochs must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ProtoError::Session(
                "hyperparameters: batch size must be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(ProtoError::Session(format!(
                "hyperparameters: learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProtoError> {
        self.validate_training()?;
        if self.rounds == 0 {
            return Err(ProtoError::Session(
                "hyperparameters: rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One federate's result for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate<E: Element> {
    pub round: u32,
    pub federate_id: u64,
    pub params: ParamSet<E>,
    /// Silo size, consumed only by weighted aggregation.
    pub sample_count: u64,
    /// Mean per-batch training loss across the round's epochs.
    pub loss: f64,
}

/// Everything that crosses the wire. Note what does not: raw images and
/// masks stay on their silo, only parameters and scalars travel.
#[derive(Debug, Clone, PartialEq)]
pub enum FedMessage<E: Element> {
    /// Federate announces itself with its silo id.
    JoinRequest { federate_id: u64 },
    /// Server confirms the id and shares config and schedule.
    JoinAck { assigned_index: u64, config: FcnConfig, hp: Hyperparams },
    /// Server opens round `round` with the current global parameters.
    RoundBegin { round: u32, params: ParamSet<E> },
    /// Federate returns its locally trained parameters.
    LocalUpdate(LocalUpdate<E>),
    /// Standalone broadcast of a global model. Not part of the training
    /// loop; reserved for observers. Federates ignore it.
    GlobalModel { round: u32, params: ParamSet<E> },
    /// Session end; carries the final global parameters.
    Complete { params: ParamSet<E> },
}

impl<E: Element> FedMessage<E> {
    /// Variant name for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            FedMessage::JoinRequest { .. } => "JoinRequest",
            FedMessage::JoinAck { .. } => "JoinAck",
            FedMessage::RoundBegin { .. } => "RoundBegin",
            FedMessage::LocalUpdate(_) => "LocalUpdate",
            FedMessage::GlobalModel { .. } => "GlobalModel",
            FedMessage::Complete { .. } => "Complete",
        }
    }
}

/// How the server combines local updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Plain federated averaging: every federate counts equally.
    #[default]
    Mean,
    /// Updates weighted by silo sample count.
    Weighted,
}

/// Mean of `sets` with per-set coefficients summing to one, computed as
/// `base + sum(c_i * (set_i - base))`.
///
/// Centering on the first set keeps the operation exact where it matters:
/// identical inputs give all-zero differences, so the first set comes
/// back unchanged regardless of rounding in the coefficients.
fn coefficient_mean<E: Element>(
    sets: &[&ParamSet<E>],
    coeffs: &[f64],
) -> Result<ParamSet<E>, NnError> {
    let base = sets[0];
    for s in &sets[1..] {
        base.ensure_compatible(s, "aggregate")?;
    }
    let scaled: Vec<E> = coeffs.iter().map(|&c| E::from_f64(c)).collect();
    let entries = (0..base.len())
        .map(|ei| {
            let (name, t0) = base.get_index(ei);
            let mut out = t0.data().to_vec();
            for (i, s) in sets.iter().enumerate().skip(1) {
                let c = scaled[i];
                let (_, ti) = s.get_index(ei);
                for (o, (&v, &v0)) in out.iter_mut().zip(ti.data().iter().zip(t0.data())) {
                    *o = *o + c * (v - v0);
                }
            }
            Ok((name.to_string(), crate::tensor::Tensor::new(t0.shape().to_vec(), out)?))
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    ParamSet::new(entries)
}

/// Unweighted federated average: the elementwise mean of `locals`,
/// accumulated in slice order. Callers wanting a canonical result pass
/// the sets sorted by federate index.
///
/// A single set comes back bit-identical; `k` identical sets come back
/// exactly (see [`coefficient_mean`]).
pub fn fedavg<E: Element>(locals: &[ParamSet<E>]) -> Result<ParamSet<E>, NnError> {
    if locals.is_empty() {
        return Err(NnError::InvalidConfig("cannot average zero parameter sets".into()));
    }
    if locals.len() == 1 {
        return Ok(locals[0].clone());
    }
    let refs: Vec<&ParamSet<E>> = locals.iter().collect();
    let c = 1.0 / locals.len() as f64;
    coefficient_mean(&refs, &vec![c; locals.len()])
}

/// Sample-count-weighted average: `sum(n_i * theta_i) / sum(n_i)`.
///
/// With equal counts this reproduces [`fedavg`] bit for bit, because the
/// per-set coefficients `n / (k * n)` and `1 / k` round to the same float
/// (exact for counts below 2^53). A zero total count is an error;
/// individual zero counts simply contribute nothing.
pub fn fedavg_weighted<E: Element>(
    locals: &[(ParamSet<E>, u64)],
) -> Result<ParamSet<E>, NnError> {
    if locals.is_empty() {
        return Err(NnError::InvalidConfig("cannot average zero parameter sets".into()));
    }
    let total = locals
        .iter()
        .try_fold(0u64, |acc, (_, n)| acc.checked_add(*n))
        .ok_or_else(|| NnError::InvalidConfig("sample counts overflow".into()))?;
    if total == 0 {
        return Err(NnError::InvalidConfig(
            "weighted average needs a positive total sample count".into(),
        ));
    }
    if locals.len() == 1 {
        return Ok(locals[0].0.clone());
    }
    let refs: Vec<&ParamSet<E>> = locals.iter().map(|(p, _)| p).collect();
    let coeffs: Vec<f64> = locals
        .iter()
        .map(|(_, n)| *n as f64 / total as f64)
        .collect();
    coefficient_mean(&refs, &coeffs)
}

/// Local training for one round: `epochs` passes over the silo in
/// seed-derived batch order, one SGD step per batch.
///
/// The shuffle seed for epoch `e` of round `r` is
/// `derive_seed(base_seed, (r - 1) * epochs + e, silo.id)`: the pair
/// (global epoch counter, federate id) gives every federate its own
/// stream while keeping a one-federate session identical to sequential
/// training with the same total epoch count.
///
/// Returns the trained parameters and the mean per-batch loss. A
/// non-finite loss or gradient aborts with a diagnostic naming the round
/// and federate.
pub fn client_train<E: Element>(
    params: &ParamSet<E>,
    config: &FcnConfig,
    silo: &Silo,
    hp: &Hyperparams,
    round: u32,
) -> Result<(ParamSet<E>, f64), ProtoError> {
    hp.validate_training()?;
    if round == 0 {
        return Err(ProtoError::Session("round numbers start at 1".into()));
    }
    if silo.samples.is_empty() {
        return Err(ProtoError::Session(format!(
            "federate {}: silo holds no samples",
            silo.id
        )));
    }
    let mut theta = params.clone();
    let mut loss_sum = 0.0;
    let mut batch_count = 0usize;
    for e in 0..hp.epochs {
        let global_epoch = u64::from(round - 1) * u64::from(hp.epochs) + u64::from(e);
        let epoch_seed = derive_seed(hp.base_seed, global_epoch, silo.id as u64);
        let epoch_batches = batches(silo, hp.batch_size as usize, epoch_seed)
            .map_err(|err| ProtoError::Session(err.to_string()))?;
        for batch in epoch_batches {
            let (images, targets) = to_batch::<E>(&batch, config.num_classes)
                .map_err(|err| ProtoError::Session(err.to_string()))?;
            let (loss, grads) =
                compute_gradients(&theta, config, &images, &targets).map_err(|err| {
                    match err {
                        NnError::NonFinite(what) => ProtoError::NumericAbort {
                            federate: silo.id as u64,
                            round,
                            reason: format!("non-finite {what} in epoch {e}"),
                        },
                        other => ProtoError::Session(format!(
                            "federate {} round {round} epoch {e}: {other}",
                            silo.id
                        )),
                    }
                })?;
            if !loss.is_finite() {
                return Err(ProtoError::NumericAbort {
                    federate: silo.id as u64,
                    round,
                    reason: format!("loss {loss} in epoch {e}"),
                });
            }
            theta = sgd_step(&theta, &grads, hp.learning_rate)?;
            loss_sum += loss;
            batch_count += 1;
        }
    }
    Ok((theta, loss_sum / batch_count as f64))
}

/// Server-side phase of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Global parameters are going out to the federates.
    Broadcasting,
    /// Waiting on local updates; the barrier is open.
    Collecting,
    /// All updates arrived; ready to average.
    Aggregating,
    /// Aggregate consumed; the round is over.
    Done,
}

/// Aggregation barrier for one round.
///
/// Updates are recorded one by one; the state moves to
/// [`Phase::Aggregating`] only once every expected federate has reported,
/// and [`RoundState::take_updates`] refuses to hand anything out before
/// then. Duplicate, stale, or unexpected updates are protocol errors.
#[derive(Debug)]
pub struct RoundState<E: Element> {
    round: u32,
    phase: Phase,
    expected: Vec<u64>,
    updates: BTreeMap<u64, LocalUpdate<E>>,
}

impl<E: Element> RoundState<E> {
    pub fn new(round: u32, expected: Vec<u64>) -> Result<Self, ProtoError> {
        if round == 0 {
            return Err(ProtoError::Session("round numbers start at 1".into()));
        }
        if expected.is_empty() {
            return Err(ProtoError::Session("a round needs at least one federate".into()));
        }
        let mut sorted = expected;
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProtoError::Session("duplicate federate ids".into()));
        }
        Ok(RoundState { round, phase: Phase::Broadcasting, expected: sorted, updates: BTreeMap::new() })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Marks the broadcast finished and opens the collection barrier.
    pub fn begin_collecting(&mut self) -> Result<(), ProtoError> {
        if self.phase != Phase::Broadcasting {
            return Err(ProtoError::Session(format!(
                "round {}: collection opened twice",
                self.round
            )));
        }
        self.phase = Phase::Collecting;
        Ok(())
    }

    /// Records one local update, closing the barrier when the last one
    /// arrives.
    pub fn record(&mut self, update: LocalUpdate<E>) -> Result<(), ProtoError> {
        if self.phase != Phase::Collecting {
            return Err(ProtoError::Session(format!(
                "round {}: update from federate {} outside the collecting phase",
                self.round, update.federate_id
            )));
        }
        if update.round != self.round {
            return Err(ProtoError::Session(format!(
                "stale update: federate {} sent round {}, server is in round {}",
                update.federate_id, update.round, self.round
            )));
        }
        if !self.expected.contains(&update.federate_id) {
            return Err(ProtoError::Session(format!(
                "round {}: update from unknown federate {}",
                self.round, update.federate_id
            )));
        }
        if self.updates.contains_key(&update.federate_id) {
            return Err(ProtoError::Session(format!(
                "round {}: duplicate update from federate {}",
                self.round, update.federate_id
            )));
        }
        self.updates.insert(update.federate_id, update);
        if self.updates.len() == self.expected.len() {
            self.phase = Phase::Aggregating;
        }
        Ok(())
    }

    /// Federates that have not reported yet.
    pub fn missing(&self) -> Vec<u64> {
        self.expected
            .iter()
            .copied()
            .filter(|id| !self.updates.contains_key(id))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.updates.len() == self.expected.len()
    }

    /// Hands out the updates sorted by federate id, or errors if the
    /// barrier has not closed. Consumes the round.
    pub fn take_updates(&mut self) -> Result<Vec<LocalUpdate<E>>, ProtoError> {
        if self.phase != Phase::Aggregating {
            return Err(ProtoError::Session(format!(
                "round {}: aggregation before all updates arrived (missing: {:?})",
                self.round,
                self.missing()
            )));
        }
        self.phase = Phase::Done;
        Ok(std::mem::take(&mut self.updates).into_values().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition};
    use crate::nn::init_params;
    use crate::tensor::Tensor;

    fn set_of(values: &[f64]) -> ParamSet<f64> {
        ParamSet::new(vec![(
            "w".to_string(),
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        )])
        .unwrap()
    }

    fn random_set(seed: u64, n: usize) -> ParamSet<f64> {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let data: Vec<f64> = (0..n).map(|_| rng.next_symmetric(3.0)).collect();
        ParamSet::new(vec![
            ("a".to_string(), Tensor::new(vec![n], data.clone()).unwrap()),
            ("b".to_string(), Tensor::new(vec![n], data.into_iter().rev().collect()).unwrap()),
        ])
        .unwrap()
    }

    fn values(p: &ParamSet<f64>) -> Vec<f64> {
        p.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    #[test]
    fn hyperparams_bounds_are_enforced() {
        let good = Hyperparams {
            epochs: 1,
            batch_size: 1,
            rounds: 1,
            learning_rate: 0.05,
            base_seed: 1,
        };
        assert!(good.validate().is_ok());
        for bad in [
            Hyperparams { epochs: 0, ..good.clone() },
            Hyperparams { batch_size: 0, ..good.clone() },
            Hyperparams { rounds: 0, ..good.clone() },
            Hyperparams { learning_rate: 0.0, ..good.clone() },
            Hyperparams { learning_rate: -1.0, ..good.clone() },
            Hyperparams { learning_rate: f64::NAN, ..good.clone() },
            Hyperparams { learning_rate: f64::INFINITY, ..good.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn fedavg_of_two_sets_is_the_mean() {
        let avg = fedavg(&[set_of(&[1.0, 3.0]), set_of(&[3.0, 5.0])]).unwrap();
        assert_eq!(values(&avg), vec![2.0, 4.0]);
    }

    #[test]
    fn fedavg_of_one_set_is_bit_identical() {
        let a = random_set(11, 40);
        assert!(fedavg(std::slice::from_ref(&a)).unwrap().bit_eq(&a));
    }

    #[test]
    fn fedavg_of_identical_copies_is_exact() {
        for k in [2usize, 3, 5, 7] {
            let a = random_set(k as u64, 64);
            let copies: Vec<ParamSet<f64>> = (0..k).map(|_| a.clone()).collect();
            let avg = fedavg(&copies).unwrap();
            assert_eq!(values(&avg), values(&a), "k = {k}");
        }
    }

    #[test]
    fn fedavg_is_permutation_invariant_within_tolerance() {
        let sets = [random_set(1, 30), random_set(2, 30), random_set(3, 30)];
        let abc = fedavg(&sets).unwrap();
        let cab = fedavg(&[sets[2].clone(), sets[0].clone(), sets[1].clone()]).unwrap();
        for (x, y) in values(&abc).iter().zip(values(&cab)) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn fedavg_commutes_with_scaling() {
        let sets = [random_set(5, 25), random_set(6, 25), random_set(7, 25)];
        let scaled: Vec<ParamSet<f64>> = sets
            .iter()
            .map(|s| {
                ParamSet::new(
                    s.iter()
                        .map(|(n, t)| (n.to_string(), t.map(|v| v * 3.7)))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let then_scale = values(&fedavg(&sets).unwrap());
        let scale_first = values(&fedavg(&scaled).unwrap());
        for (x, y) in then_scale.iter().zip(scale_first) {
            assert!((x * 3.7 - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn fedavg_rejects_empty_and_incompatible_input() {
        assert!(fedavg::<f64>(&[]).is_err());
        let a = set_of(&[1.0]);
        let b = set_of(&[1.0, 2.0]);
        assert!(fedavg(&[a, b]).is_err());
    }

    #[test]
    fn weighted_average_uses_sample_counts() {
        let avg = fedavg_weighted(&[(set_of(&[0.0]), 1), (set_of(&[4.0]), 3)]).unwrap();
        assert_eq!(values(&avg), vec![3.0]);
    }

    #[test]
    fn weighted_with_equal_counts_matches_fedavg_bitwise() {
        let sets = [random_set(21, 33), random_set(22, 33), random_set(23, 33)];
        let plain = fedavg(&sets).unwrap();
        for count in [1u64, 3, 183] {
            let weighted =
                fedavg_weighted(&sets.iter().map(|s| (s.clone(), count)).collect::<Vec<_>>())
                    .unwrap();
            assert!(weighted.bit_eq(&plain), "count = {count}");
        }
    }

    #[test]
    fn weighted_with_zero_count_ignores_that_set() {
        let avg = fedavg_weighted(&[(random_set(31, 20), 5), (random_set(32, 20), 0)]).unwrap();
        assert_eq!(values(&avg), values(&random_set(31, 20)));
    }

    #[test]
    fn weighted_rejects_zero_total() {
        assert!(fedavg_weighted(&[(set_of(&[1.0]), 0), (set_of(&[2.0]), 0)]).is_err());
    }

    fn tiny_setup() -> (FcnConfig, Hyperparams, Vec<crate::data::SegSample>) {
        let config = FcnConfig {
            in_channels: 3,
            num_classes: 3,
            hidden_channels: vec![4],
            kernel_size: 3,
            seed: 7,
        };
        let samples = generate_synthetic(8, 8, 8, 3, 99).unwrap();
        let hp = Hyperparams {
            epochs: 2,
            batch_size: 4,
            rounds: 1,
            learning_rate: 0.1,
            base_seed: 5,
        };
        (config, hp, samples)
    }

    #[test]
    fn client_train_is_deterministic() {
        let (config, hp, samples) = tiny_setup();
        let silo = Silo { id: 0, samples };
        let init = init_params::<f64>(&config).unwrap();
        let (p1, l1) = client_train(&init, &config, &silo, &hp, 1).unwrap();
        let (p2, l2) = client_train(&init, &config, &silo, &hp, 1).unwrap();
        assert!(p1.bit_eq(&p2));
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(l1.is_finite());
        assert!(!p1.bit_eq(&init));
    }

    #[test]
    fn client_train_varies_with_round_and_federate() {
        let (config, mut hp, samples) = tiny_setup();
        hp.batch_size = 1;
        hp.epochs = 1;
        let silo0 = Silo { id: 0, samples: samples.clone() };
        let silo1 = Silo { id: 1, samples };
        let init = init_params::<f64>(&config).unwrap();
        let (r1, _) = client_train(&init, &config, &silo0, &hp, 1).unwrap();
        let (r2, _) = client_train(&init, &config, &silo0, &hp, 2).unwrap();
        let (other, _) = client_train(&init, &config, &silo1, &hp, 1).unwrap();
        // Different shuffle order changes the SGD trajectory.
        assert!(!r1.bit_eq(&r2));
        assert!(!r1.bit_eq(&other));
    }

    #[test]
    fn client_train_rejects_bad_input() {
        let (config, hp, samples) = tiny_setup();
        let silo = Silo { id: 0, samples };
        let init = init_params::<f64>(&config).unwrap();
        assert!(client_train(&init, &config, &silo, &hp, 0).is_err());
        let empty = Silo { id: 1, samples: vec![] };
        assert!(client_train(&init, &config, &empty, &hp, 1).is_err());
        let mut bad = hp.clone();
        bad.learning_rate = -0.5;
        assert!(client_train(&init, &config, &silo, &bad, 1).is_err());
    }

    #[test]
    fn one_round_with_two_federates_matches_manual_average() {
        let (config, hp, samples) = tiny_setup();
        let silos = partition(&samples, 2, 42).unwrap();
        let init = init_params::<f64>(&config).unwrap();
        let mut locals = Vec::new();
        for silo in &silos {
            let (p, _) = client_train(&init, &config, silo, &hp, 1).unwrap();
            locals.push(p);
        }
        let global = fedavg(&locals).unwrap();
        assert!(global.all_finite());
        assert!(!global.bit_eq(&locals[0]));
    }

    #[test]
    fn round_state_enforces_the_barrier() {
        let mk = |fid: u64| {
            LocalUpdate {
                round: 1,
                federate_id: fid,
                params: set_of(&[fid as f64]),
                sample_count: 10,
                loss: 0.5,
            }
        };
        let mut state = RoundState::new(1, vec![0, 1]).unwrap();
        assert_eq!(state.phase(), Phase::Broadcasting);
        assert!(state.record(mk(0)).is_err(), "collecting not open yet");
        state.begin_collecting().unwrap();
        assert!(state.take_updates().is_err(), "no updates yet");
        state.record(mk(1)).unwrap();
        assert_eq!(state.missing(), vec![0]);
        assert!(state.take_updates().is_err(), "one update missing");
        state.record(mk(0)).unwrap();
        assert_eq!(state.phase(), Phase::Aggregating);
        let updates = state.take_updates().unwrap();
        assert_eq!(
            updates.iter().map(|u| u.federate_id).collect::<Vec<_>>(),
            vec![0, 1],
            "sorted by federate id"
        );
        assert_eq!(state.phase(), Phase::Done);
    }

    #[test]
    fn round_state_rejects_duplicate_stale_and_unknown() {
        let mk = |round: u32, fid: u64| {
            LocalUpdate {
                round,
                federate_id: fid,
                params: set_of(&[1.0]),
                sample_count: 1,
                loss: 0.1,
            }
        };
        let mut state = RoundState::new(2, vec![0, 1]).unwrap();
        state.begin_collecting().unwrap();
        state.record(mk(2, 0)).unwrap();
        assert!(state.record(mk(2, 0)).is_err(), "duplicate");
        assert!(state.record(mk(1, 1)).is_err(), "stale round");
        assert!(state.record(mk(2, 9)).is_err(), "unknown federate");
        assert!(RoundState::<f64>::new(1, vec![3, 3]).is_err());
        assert!(RoundState::<f64>::new(1, vec![]).is_err());
        assert!(RoundState::<f64>::new(0, vec![0]).is_err());
    }
}
