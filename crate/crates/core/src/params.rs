//! Named parameter collections and their `FPS1` binary encoding.
//!
//! A [`ParamSet`] is the unit exchanged between federates and the server:
//! an ordered list of uniquely named tensors. Two sets are *compatible* when
//! names, order and shapes all match, which is the precondition for
//! averaging and for applying gradients.
//!
//! `FPS1` layout (all integers little-endian):
//!
//! ```text
//! magic "FPS1" | u32 entry count
//! per entry: u16 name len | name bytes (UTF-8) | u8 dtype (0=f32, 1=f64)
//!            | u8 ndim | u32 dims[ndim] | raw element bytes, little-endian
//! ```

use crate::error::{NnError, ProtoError};
use crate::tensor::{Dtype, Element, Tensor};

pub const FPS1_MAGIC: &[u8; 4] = b"FPS1";

/// Ordered, uniquely named tensors. `Θ` of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
}

/// Gradients mirror the parameter set they were computed for, entry by entry.
pub type Gradients<E> = ParamSet<E>;

impl<E: Element> ParamSet<E> {
    pub fn new(entries: Vec<(String, Tensor<E>)>) -> Result<Self, NnError> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(NnError::IncompatibleParams(format!(
                    "duplicate parameter name {name:?}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Entry at position `index`; panics when out of range.
    pub fn get_index(&self, index: usize) -> (&str, &Tensor<E>) {
        let (n, t) = &self.entries[index];
        (n.as_str(), t)
    }

    pub fn get_index_mut(&mut self, index: usize) -> (&str, &mut Tensor<E>) {
        let (n, t) = &mut self.entries[index];
        (n.as_str(), t)
    }

    /// Total scalar count across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names, same order, same shapes.
    pub fn compatible_with(&self, other: &ParamSet<E>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, at), (bn, bt))| an == bn && at.shape() == bt.shape())
    }

    pub fn ensure_compatible(&self, other: &ParamSet<E>, context: &str) -> Result<(), NnError> {
        if self.compatible_with(other) {
            Ok(())
        } else {
            Err(NnError::IncompatibleParams(context.to_string()))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Bitwise equality of names, shapes and element bits.
    pub fn bit_eq(&self, other: &ParamSet<E>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, at), (bn, bt))| an == bn && at.bit_eq(bt))
    }
}

/// A decoded `FPS1` payload whose dtype is only known at runtime.
#[derive(Debug, Clone)]
pub enum AnyParamSet {
    F32(ParamSet<f32>),
    F64(ParamSet<f64>),
}

impl AnyParamSet {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyParamSet::F32(_) => Dtype::F32,
            AnyParamSet::F64(_) => Dtype::F64,
        }
    }
}

/// Encodes a parameter set in the `FPS1` format.
pub fn encode_params<E: Element>(params: &ParamSet<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * E::DTYPE.size_bytes());
    out.extend_from_slice(FPS1_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(E::DTYPE as u8);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], ProtoError> {
        if self.pos + n > self.bytes.len() {
            return Err(ProtoError::Truncated { context });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, ProtoError> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, ProtoError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, context: &'static str) -> Result<u32, ProtoError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, context: &'static str) -> Result<u64, ProtoError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, context: &'static str) -> Result<f64, ProtoError> {
        Ok(f64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    /// Hands back everything not yet read.
    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    /// Errors unless the cursor consumed every byte.
    pub(crate) fn finish(&self, context: &'static str) -> Result<(), ProtoError> {
        if self.pos != self.bytes.len() {
            return Err(ProtoError::Codec(format!(
                "{context}: {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_entries<E: Element>(cur: &mut Cursor<'_>) -> Result<ParamSet<E>, ProtoError> {
    let count = cur.u32("fps1 entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16("fps1 name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "fps1 name")?)
            .map_err(|e| ProtoError::Codec(format!("fps1 name not utf-8: {e}")))?
            .to_string();
        let dtype_tag = cur.u8("fps1 dtype")?;
        let dtype = Dtype::from_tag(dtype_tag)
            .ok_or_else(|| ProtoError::Codec(format!("fps1 unknown dtype tag {dtype_tag}")))?;
        if dtype != E::DTYPE {
            return Err(ProtoError::Codec(format!(
                "fps1 entry {name:?} has dtype {dtype:?}, expected {:?}",
                E::DTYPE
            )));
        }
        let ndim = cur.u8("fps1 ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("fps1 dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let width = dtype.size_bytes();
        let raw = cur.take(n * width, "fps1 values")?;
        let data: Vec<E> = raw.chunks_exact(width).map(E::read_le).collect();
        entries.push((
            name,
            Tensor::new(shape, data).map_err(|e| ProtoError::Codec(e.to_string()))?,
        ));
    }
    ParamSet::new(entries).map_err(|e| ProtoError::Codec(e.to_string()))
}

/// Decodes an `FPS1` payload whose dtype must match `E`.
pub fn decode_params<E: Element>(bytes: &[u8]) -> Result<ParamSet<E>, ProtoError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "fps1 magic")? != FPS1_MAGIC {
        return Err(ProtoError::Codec("fps1 bad magic".into()));
    }
    let set = decode_entries::<E>(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(ProtoError::Codec(format!(
            "fps1 trailing bytes: {} unread",
            bytes.len() - cur.pos
        )));
    }
    Ok(set)
}

/// Decodes an `FPS1` payload of either dtype. Mixed-dtype sets (legal in the
/// format, never produced by this crate) are rejected.
pub fn decode_params_any(bytes: &[u8]) -> Result<AnyParamSet, ProtoError> {
    // Peek at the first entry's dtype to pick a decode path.
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "fps1 magic")? != FPS1_MAGIC {
        return Err(ProtoError::Codec("fps1 bad magic".into()));
    }
    let count = cur.u32("fps1 entry count")?;
    if count == 0 {
        return Ok(AnyParamSet::F32(ParamSet::empty()));
    }
    let name_len = cur.u16("fps1 name length")? as usize;
    cur.take(name_len, "fps1 name")?;
    let tag = cur.u8("fps1 dtype")?;
    match Dtype::from_tag(tag) {
        Some(Dtype::F32) => decode_params::<f32>(bytes).map(AnyParamSet::F32),
        Some(Dtype::F64) => decode_params::<f64>(bytes).map(AnyParamSet::F64),
        None => Err(ProtoError::Codec(format!("fps1 unknown dtype tag {tag}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> ParamSet<f32> {
        ParamSet::new(vec![
            (
                "layer.weight".into(),
                Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.0, 4.25]).unwrap(),
            ),
            ("layer.bias".into(), Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names() {
        let t = Tensor::<f32>::zeros(vec![1]);
        assert!(ParamSet::new(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }

    #[test]
    fn compatibility_requires_names_order_shapes() {
        let a = sample_set();
        assert!(a.compatible_with(&a.clone()));

        let reordered = ParamSet::new(vec![
            ("layer.bias".into(), Tensor::<f32>::zeros(vec![2])),
            ("layer.weight".into(), Tensor::<f32>::zeros(vec![2, 2])),
        ])
        .unwrap();
        assert!(!a.compatible_with(&reordered));

        let reshaped = ParamSet::new(vec![
            ("layer.weight".into(), Tensor::<f32>::zeros(vec![4])),
            ("layer.bias".into(), Tensor::<f32>::zeros(vec![2])),
        ])
        .unwrap();
        assert!(!a.compatible_with(&reshaped));
    }

    #[test]
    fn fps1_roundtrip_identity() {
        let set = sample_set();
        let bytes = encode_params(&set);
        assert_eq!(&bytes[..4], FPS1_MAGIC);
        let back = decode_params::<f32>(&bytes).unwrap();
        assert!(set.bit_eq(&back));
    }

    #[test]
    fn fps1_empty_set_roundtrips() {
        let set = ParamSet::<f64>::empty();
        let back = decode_params::<f64>(&encode_params(&set)).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn fps1_dtype_mismatch_rejected() {
        let bytes = encode_params(&sample_set());
        assert!(decode_params::<f64>(&bytes).is_err());
    }

    #[test]
    fn fps1_truncation_rejected() {
        let bytes = encode_params(&sample_set());
        for cut in [3, 7, 11, bytes.len() - 1] {
            assert!(decode_params::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn fps1_trailing_bytes_rejected() {
        let mut bytes = encode_params(&sample_set());
        bytes.push(0);
        assert!(decode_params::<f32>(&bytes).is_err());
    }

    #[test]
    fn decode_any_picks_dtype() {
        let bytes = encode_params(&sample_set());
        match decode_params_any(&bytes).unwrap() {
            AnyParamSet::F32(set) => assert!(set.bit_eq(&sample_set())),
            AnyParamSet::F64(_) => panic!("wrong dtype"),
        }
    }
}
