//! Server and federate session loops over a [`FrameChannel`].
//!
//! Both loops are synchronous and fail-stop: the first malformed or
//! out-of-order message, decode failure, timeout, or closed peer aborts
//! the session with a diagnostic naming the round and federate. Nothing
//! is retried and no round aggregates a partial set of updates.

use std::time::Duration;

use super::{
    codec::{decode_message, encode_message},
    Aggregation, FedMessage, Hyperparams, LocalUpdate, RoundState,
};
use crate::data::Silo;
use crate::error::ProtoError;
use crate::fedproto::{client_train, fedavg, fedavg_weighted};
use crate::nn::{init_params, FcnConfig};
use crate::params::ParamSet;
use crate::tensor::Element;
use crate::transport::FrameChannel;

/// Encodes and sends one message.
pub fn send_message<E: Element, C: FrameChannel + ?Sized>(
    channel: &mut C,
    msg: &FedMessage<E>,
) -> Result<(), ProtoError> {
    channel.send_frame(&encode_message(msg))?;
    Ok(())
}

/// Blocks for the next message and decodes it.
pub fn recv_message<E: Element, C: FrameChannel + ?Sized>(
    channel: &mut C,
) -> Result<FedMessage<E>, ProtoError> {
    decode_message(&channel.recv_frame()?)
}

/// Server-side knobs that are not part of the shared [`Hyperparams`].
#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub aggregation: Aggregation,
    /// Receive deadline per message; `None` waits forever.
    pub timeout: Option<Duration>,
}

/// Runs a full federated session over one channel per federate and
/// returns the final global parameters.
///
/// The server owns the schedule: it admits one join per channel, runs
/// `hp.rounds` rounds of broadcast-train-aggregate, then broadcasts
/// `Complete`. After each aggregation `on_round` receives the round
/// number, the new global parameters, and the mean of the federates'
/// local losses; an error from the callback aborts the session. With
/// `hp.rounds == 0` no round runs and the initial parameters come back
/// unchanged.
///
/// Silo contents never reach this function; everything it learns about a
/// federate is what `LocalUpdate` carries.
pub fn run_server<E, C, F>(
    channels: &mut [C],
    config: &FcnConfig,
    hp: &Hyperparams,
    init: ParamSet<E>,
    options: &ServerOptions,
    mut on_round: F,
) -> Result<ParamSet<E>, ProtoError>
where
    E: Element,
    C: FrameChannel,
    F: FnMut(u32, &ParamSet<E>, f64) -> Result<(), ProtoError>,
{
    if channels.is_empty() {
        return Err(ProtoError::Session("a session needs at least one federate".into()));
    }
    config.validate()?;
    hp.validate_training()?;
    init_params::<E>(config)?.ensure_compatible(&init, "server init")?;

    let n = channels.len() as u64;
    let mut ids: Vec<u64> = Vec::with_capacity(channels.len());
    for ch in channels.iter_mut() {
        ch.set_timeout(options.timeout)?;
        match recv_message::<E, _>(ch)? {
            FedMessage::JoinRequest { federate_id } => {
                if federate_id >= n {
                    return Err(ProtoError::Session(format!(
                        "federate id {federate_id} out of range for {n} federates"
                    )));
                }
                if ids.contains(&federate_id) {
                    return Err(ProtoError::Session(format!(
                        "federate id {federate_id} joined twice"
                    )));
                }
                send_message(
                    ch,
                    &FedMessage::<E>::JoinAck {
                        assigned_index: federate_id,
                        config: config.clone(),
                        hp: hp.clone(),
                    },
                )?;
                ids.push(federate_id);
            }
            other => {
                return Err(ProtoError::Session(format!(
                    "expected JoinRequest, got {}",
                    other.kind()
                )))
            }
        }
    }

    let mut global = init;
    for round in 1..=hp.rounds {
        let mut state = RoundState::new(round, ids.clone())?;
        // One encode, identical bytes to every federate.
        let frame = encode_message(&FedMessage::RoundBegin { round, params: global.clone() });
        for (i, ch) in channels.iter_mut().enumerate() {
            ch.send_frame(&frame).map_err(|e| {
                ProtoError::Session(format!(
                    "round {round}: broadcasting to federate {}: {e}",
                    ids[i]
                ))
            })?;
        }
        state.begin_collecting()?;

        for (i, ch) in channels.iter_mut().enumerate() {
            let msg = recv_message::<E, _>(ch).map_err(|e| {
                ProtoError::Session(format!(
                    "round {round}: waiting on federate {}: {e}",
                    ids[i]
                ))
            })?;
            match msg {
                FedMessage::LocalUpdate(update) => {
                    if update.federate_id != ids[i] {
                        return Err(ProtoError::Session(format!(
                            "round {round}: channel of federate {} delivered an update from {}",
                            ids[i], update.federate_id
                        )));
                    }
                    state.record(update)?;
                }
                other => {
                    return Err(ProtoError::Session(format!(
                        "round {round}: expected LocalUpdate from federate {}, got {}",
                        ids[i],
                        other.kind()
                    )))
                }
            }
        }

        let updates = state.take_updates()?;
        let mean_loss =
            updates.iter().map(|u| u.loss).sum::<f64>() / updates.len() as f64;
        global = match options.aggregation {
            Aggregation::Mean => {
                let sets: Vec<ParamSet<E>> = updates.into_iter().map(|u| u.params).collect();
                fedavg(&sets)?
            }
            Aggregation::Weighted => {
                let pairs: Vec<(ParamSet<E>, u64)> =
                    updates.into_iter().map(|u| (u.params, u.sample_count)).collect();
                fedavg_weighted(&pairs)?
            }
        };
        on_round(round, &global, mean_loss)?;
    }

    let frame = encode_message(&FedMessage::Complete { params: global.clone() });
    for (i, ch) in channels.iter_mut().enumerate() {
        ch.send_frame(&frame).map_err(|e| {
            ProtoError::Session(format!("completing session with federate {}: {e}", ids[i]))
        })?;
    }
    Ok(global)
}

/// Joins a session, trains every round on `silo`, and returns the final
/// global parameters from `Complete`.
///
/// `config` is the federate's own expectation of the model; a mismatch
/// with the server's config is an error, while the training schedule is
/// taken from the acknowledgement verbatim.
pub fn run_client<E: Element, C: FrameChannel>(
    channel: &mut C,
    silo: &Silo,
    config: &FcnConfig,
    timeout: Option<Duration>,
) -> Result<ParamSet<E>, ProtoError> {
    channel.set_timeout(timeout)?;
    send_message(channel, &FedMessage::<E>::JoinRequest { federate_id: silo.id as u64 })?;
    let hp = match recv_message::<E, _>(channel)? {
        FedMessage::JoinAck { assigned_index, config: server_config, hp } => {
            if assigned_index != silo.id as u64 {
                return Err(ProtoError::Session(format!(
                    "server assigned index {assigned_index}, silo id is {}",
                    silo.id
                )));
            }
            if server_config != *config {
                return Err(ProtoError::Session(
                    "server model config differs from local config".into(),
                ));
            }
            hp
        }
        other => {
            return Err(ProtoError::Session(format!(
                "expected JoinAck, got {}",
                other.kind()
            )))
        }
    };

    let mut last_round = 0u32;
    loop {
        match recv_message::<E, _>(channel)? {
            FedMessage::RoundBegin { round, params } => {
                if round <= last_round {
                    return Err(ProtoError::Session(format!(
                        "round went backwards: {round} after {last_round}"
                    )));
                }
                last_round = round;
                let (trained, loss) = client_train(&params, config, silo, &hp, round)?;
                send_message(
                    channel,
                    &FedMessage::LocalUpdate(LocalUpdate {
                        round,
                        federate_id: silo.id as u64,
                        params: trained,
                        sample_count: silo.samples.len() as u64,
                        loss,
                    }),
                )?;
            }
            FedMessage::GlobalModel { .. } => {}
            FedMessage::Complete { params } => return Ok(params),
            other => {
                return Err(ProtoError::Session(format!(
                    "unexpected {} mid-session",
                    other.kind()
                )))
            }
        }
    }
}
