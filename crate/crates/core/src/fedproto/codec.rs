//! Binary codec for [`FedMessage`] frames.
//!
//! Frame layout: a big-endian `u32` payload length, one tag byte, then
//! the payload. Payload integers and floats are little-endian; parameter
//! sets are embedded as `FPS1` blocks (see [`crate::params`]). A frame is
//! decoded all-or-nothing: any truncation, trailing garbage, length
//! mismatch, or unknown tag yields an error and no message.

use super::{FedMessage, Hyperparams, LocalUpdate};
use crate::error::ProtoError;
use crate::nn::FcnConfig;
use crate::params::{decode_params, encode_params, Cursor};
use crate::tensor::Element;
use crate::transport::{frame_len, FRAME_HEADER_BYTES, MAX_FRAME_BYTES};

pub const TAG_JOIN_REQUEST: u8 = 1;
pub const TAG_JOIN_ACK: u8 = 2;
pub const TAG_ROUND_BEGIN: u8 = 3;
pub const TAG_LOCAL_UPDATE: u8 = 4;
pub const TAG_GLOBAL_MODEL: u8 = 5;
pub const TAG_COMPLETE: u8 = 6;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_config(out: &mut Vec<u8>, config: &FcnConfig) {
    put_u32(out, config.in_channels as u32);
    put_u32(out, config.num_classes as u32);
    put_u32(out, config.kernel_size as u32);
    put_u64(out, config.seed);
    put_u32(out, config.hidden_channels.len() as u32);
    for &h in &config.hidden_channels {
        put_u32(out, h as u32);
    }
}

fn get_config(cur: &mut Cursor<'_>) -> Result<FcnConfig, ProtoError> {
    let in_channels = cur.u32("config in_channels")? as usize;
    let num_classes = cur.u32("config num_classes")? as usize;
    let kernel_size = cur.u32("config kernel_size")? as usize;
    let seed = cur.u64("config seed")?;
    let n = cur.u32("config hidden count")? as usize;
    let mut hidden_channels = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        hidden_channels.push(cur.u32("config hidden channel")? as usize);
    }
    Ok(FcnConfig { in_channels, num_classes, hidden_channels, kernel_size, seed })
}

fn put_hyperparams(out: &mut Vec<u8>, hp: &Hyperparams) {
    put_u32(out, hp.epochs);
    put_u32(out, hp.batch_size);
    put_u32(out, hp.rounds);
    put_f64(out, hp.learning_rate);
    put_u64(out, hp.base_seed);
}

fn get_hyperparams(cur: &mut Cursor<'_>) -> Result<Hyperparams, ProtoError> {
    Ok(Hyperparams {
        epochs: cur.u32("hp epochs")?,
        batch_size: cur.u32("hp batch_size")?,
        rounds: cur.u32("hp rounds")?,
        learning_rate: cur.f64("hp learning_rate")?,
        base_seed: cur.u64("hp base_seed")?,
    })
}

fn encode_body<E: Element>(msg: &FedMessage<E>) -> (u8, Vec<u8>) {
    let mut out = Vec::new();
    let tag = match msg {
        FedMessage::JoinRequest { federate_id } => {
            put_u64(&mut out, *federate_id);
            TAG_JOIN_REQUEST
        }
        FedMessage::JoinAck { assigned_index, config, hp } => {
            put_u64(&mut out, *assigned_index);
            put_config(&mut out, config);
            put_hyperparams(&mut out, hp);
            TAG_JOIN_ACK
        }
        FedMessage::RoundBegin { round, params } => {
            put_u32(&mut out, *round);
            out.extend_from_slice(&encode_params(params));
            TAG_ROUND_BEGIN
        }
        FedMessage::LocalUpdate(u) => {
            put_u32(&mut out, u.round);
            put_u64(&mut out, u.federate_id);
            put_u64(&mut out, u.sample_count);
            put_f64(&mut out, u.loss);
            out.extend_from_slice(&encode_params(&u.params));
            TAG_LOCAL_UPDATE
        }
        FedMessage::GlobalModel { round, params } => {
            put_u32(&mut out, *round);
            out.extend_from_slice(&encode_params(params));
            TAG_GLOBAL_MODEL
        }
        FedMessage::Complete { params } => {
            out.extend_from_slice(&encode_params(params));
            TAG_COMPLETE
        }
    };
    (tag, out)
}

/// Encodes one message as a complete frame, header included.
///
/// Panics if the payload would exceed [`MAX_FRAME_BYTES`]; parameter sets
/// near that size are far outside this crate's model scale.
pub fn encode_message<E: Element>(msg: &FedMessage<E>) -> Vec<u8> {
    let (tag, payload) = encode_body(msg);
    assert!(
        payload.len() as u64 <= MAX_FRAME_BYTES,
        "message payload of {} bytes exceeds the frame cap",
        payload.len()
    );
    let mut frame = Vec::with_capacity(FRAME_HEADER_BYTES + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.push(tag);
    frame.extend_from_slice(&payload);
    frame
}

pub(crate) fn decode_body<E: Element>(
    tag: u8,
    payload: &[u8],
) -> Result<FedMessage<E>, ProtoError> {
    let mut cur = Cursor::new(payload);
    match tag {
        TAG_JOIN_REQUEST => {
            let federate_id = cur.u64("join federate id")?;
            cur.finish("join request")?;
            Ok(FedMessage::JoinRequest { federate_id })
        }
        TAG_JOIN_ACK => {
            let assigned_index = cur.u64("ack index")?;
            let config = get_config(&mut cur)?;
            let hp = get_hyperparams(&mut cur)?;
            cur.finish("join ack")?;
            Ok(FedMessage::JoinAck { assigned_index, config, hp })
        }
        TAG_ROUND_BEGIN => {
            let round = cur.u32("round number")?;
            let params = decode_params::<E>(cur.rest())?;
            Ok(FedMessage::RoundBegin { round, params })
        }
        TAG_LOCAL_UPDATE => {
            let round = cur.u32("update round")?;
            let federate_id = cur.u64("update federate id")?;
            let sample_count = cur.u64("update sample count")?;
            let loss = cur.f64("update loss")?;
            let params = decode_params::<E>(cur.rest())?;
            Ok(FedMessage::LocalUpdate(LocalUpdate {
                round,
                federate_id,
                params,
                sample_count,
                loss,
            }))
        }
        TAG_GLOBAL_MODEL => {
            let round = cur.u32("global round")?;
            let params = decode_params::<E>(cur.rest())?;
            Ok(FedMessage::GlobalModel { round, params })
        }
        TAG_COMPLETE => {
            let params = decode_params::<E>(cur.rest())?;
            Ok(FedMessage::Complete { params })
        }
        other => Err(ProtoError::UnknownTag(other)),
    }
}

/// Decodes one complete frame produced by [`encode_message`].
pub fn decode_message<E: Element>(frame: &[u8]) -> Result<FedMessage<E>, ProtoError> {
    if frame.len() < FRAME_HEADER_BYTES {
        return Err(ProtoError::Truncated { context: "frame header" });
    }
    let header: [u8; 4] = frame[..4].try_into().expect("four header bytes");
    let len = frame_len(&header).map_err(ProtoError::Transport)?;
    let body = &frame[FRAME_HEADER_BYTES..];
    if body.len() != len {
        return Err(ProtoError::Codec(format!(
            "frame length field says {len} payload bytes, frame holds {}",
            body.len()
        )));
    }
    decode_body(frame[4], body)
}
