//! Named parameter storage, RMSprop and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"SPNC" | version u16 | count u32
//! per parameter:
//!   name_len u16 | name bytes | rank u8 | extents u32 * rank
//!   values f32 * n | accumulator f32 * n | frozen u8
//! ```

use std::collections::HashMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPNC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    acc: Tensor<T>,
    frozen: bool,
}

/// Ordered, uniquely named trainable parameters with RMSprop state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name `{name}`")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig("parameter name too long".into()));
        }
        let acc = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.clone(),
            value,
            acc,
            frozen: false,
        });
        self.index.insert(name, self.entries.len() - 1);
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].value
    }

    pub fn accumulator(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].acc
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.entries[i].frozen
    }

    pub fn set_frozen(&mut self, i: usize, frozen: bool) {
        self.entries[i].frozen = frozen;
    }

    /// Freezes every parameter whose name starts with one of `prefixes` and
    /// unfreezes the rest.
    pub fn freeze_prefixes(&mut self, prefixes: &[&str]) {
        for e in &mut self.entries {
            e.frozen = prefixes.iter().any(|p| e.name.starts_with(p));
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    acc: e.acc.cast(),
                    frozen: e.frozen,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// RMSprop hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 0.05,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// One RMSprop update:
/// `acc <- rho * acc + (1 - rho) * g^2`, `p <- p - lr * g / sqrt(acc + eps)`.
///
/// Frozen parameters and parameters without a gradient are left untouched,
/// accumulators included.
pub fn rmsprop_step<T: Scalar>(store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], opt: &RmsProp) {
    let lr = T::from_f64(opt.lr);
    let rho = T::from_f64(opt.rho);
    let one_minus = T::from_f64(1.0 - opt.rho);
    let eps = T::from_f64(opt.epsilon);
    for (entry, grad) in store.entries.iter_mut().zip(grads) {
        let Some(g) = grad else { continue };
        if entry.frozen {
            continue;
        }
        debug_assert_eq!(entry.value.shape(), g.shape());
        let acc = entry.acc.data_mut();
        let val = entry.value.data_mut();
        for ((a, p), &gv) in acc.iter_mut().zip(val.iter_mut()).zip(g.data()) {
            *a = rho * *a + one_minus * gv * gv;
            *p = *p - lr * gv / (*a + eps).sqrt();
        }
    }
}

impl ParamStore<f32> {
    pub fn save_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.num_values() * 8 + self.len() * 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.value.shape().len() as u8);
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in e.acc.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(e.frozen as u8);
        }
        out
    }

    pub fn load_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::CorruptCheckpoint(format!("shape overflow in `{name}`")))?;
                shape.push(d);
            }
            let bytes_needed = n
                .checked_mul(8)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("shape overflow in `{name}`")))?;
            if bytes_needed > r.remaining() {
                return Err(Error::CorruptCheckpoint(format!("truncated data for `{name}`")));
            }
            let value = r.f32s(n)?;
            let acc = r.f32s(n)?;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::CorruptCheckpoint(format!("bad frozen flag {other}"))),
            };
            let idx = store
                .insert(name.clone(), Tensor::from_vec(&shape, value)?)
                .map_err(|_| Error::CorruptCheckpoint(format!("duplicate parameter `{name}`")))?;
            store.entries[idx].acc = Tensor::from_vec(&shape, acc)?;
            store.entries[idx].frozen = frozen;
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("hf.stem.w", Tensor::from_vec(&[2, 1, 1, 3], vec![0.5, -1.25, 3.0, 1e-7, f32::MIN_POSITIVE, -0.0]).unwrap())
            .unwrap();
        let b = s.insert("hd.out.b", Tensor::from_vec(&[1], vec![0.75]).unwrap()).unwrap();
        s.set_frozen(b, true);
        s.entries[0].acc.data_mut()[2] = 0.125;
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = sample_store();
        let before = s.clone();
        let grads: Vec<_> = (0..s.len()).map(|i| Some(Tensor::zeros(s.value(i).shape()))).collect();
        rmsprop_step(&mut s, &grads, &RmsProp::default());
        for i in 0..s.len() {
            assert_eq!(s.value(i), before.value(i));
        }
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut s = sample_store();
        let before = s.clone();
        let grads: Vec<_> = (0..s.len()).map(|i| Some(Tensor::full(s.value(i).shape(), 2.0))).collect();
        rmsprop_step(&mut s, &grads, &RmsProp::default());
        assert_eq!(s.value(1), before.value(1));
        assert_eq!(s.accumulator(1), before.accumulator(1));
        assert_ne!(s.value(0), before.value(0));
    }

    #[test]
    fn scalar_recurrence_matches_hand_steps() {
        let opt = RmsProp {
            lr: 0.01,
            rho: 0.9,
            epsilon: 1e-8,
        };
        let mut s = ParamStore::<f64>::new();
        s.insert("p", Tensor::scalar(1.0)).unwrap();
        let g = 0.3;
        let (mut p, mut acc) = (1.0f64, 0.0f64);
        for _ in 0..25 {
            rmsprop_step(&mut s, &[Some(Tensor::scalar(g))], &opt);
            acc = 0.9 * acc + 0.1 * g * g;
            p -= 0.01 * g / (acc + 1e-8).sqrt();
        }
        assert!((s.value(0).item() - p).abs() < 1e-14);
        assert!((s.accumulator(0).item() - acc).abs() < 1e-16);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let s = sample_store();
        let bytes = s.save_checkpoint();
        let back = ParamStore::load_checkpoint(&bytes).unwrap();
        assert_eq!(back.save_checkpoint(), bytes);
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["hf.stem.w", "hd.out.b"]);
        assert!(back.is_frozen(1) && !back.is_frozen(0));
        for i in 0..s.len() {
            let a: Vec<u32> = s.value(i).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.value(i).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_store_round_trip() {
        let bytes = ParamStore::<f32>::new().save_checkpoint();
        assert_eq!(bytes.len(), 10);
        assert!(ParamStore::load_checkpoint(&bytes).unwrap().is_empty());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample_store().save_checkpoint();
        for cut in 0..bytes.len() {
            let err = ParamStore::load_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CorruptCheckpoint(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_overflow_rejected() {
        let mut bytes = sample_store().save_checkpoint();
        bytes[0] = b'X';
        assert!(matches!(ParamStore::load_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));

        let mut evil = Vec::new();
        evil.extend_from_slice(MAGIC);
        evil.extend_from_slice(&VERSION.to_le_bytes());
        evil.extend_from_slice(&1u32.to_le_bytes());
        evil.extend_from_slice(&1u16.to_le_bytes());
        evil.push(b'x');
        evil.push(4);
        for _ in 0..4 {
            evil.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(ParamStore::load_checkpoint(&evil), Err(Error::CorruptCheckpoint(_))));
    }
}
