//! Dense row-major tensors and the `TNSR` binary container.
//!
//! Values are held as `f64` regardless of the dtype tag; the tag decides how
//! a tensor is serialized and which values it may hold (integral dtypes only
//! accept integers in range, `float32` only accepts values that survive the
//! narrowing exactly). No operation broadcasts.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::instrument;

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const TNSR_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F64,
    F32,
    U8,
    I32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
            DType::U8 => 2,
            DType::I32 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F64,
            1 => DType::F32,
            2 => DType::U8,
            3 => DType::I32,
            _ => return None,
        })
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }

    fn admits(self, v: f64) -> bool {
        match self {
            DType::F64 => true,
            DType::F32 => v.is_nan() || (v as f32) as f64 == v,
            DType::U8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
            DType::I32 => v.fract() == 0.0 && (i32::MIN as f64..=i32::MAX as f64).contains(&v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "empty dimension list".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "zero-sized dimension".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; n],
            dtype: DType::F64,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {n} elements but {} were given", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            dtype: DType::F64,
        })
    }

    /// Retags the tensor, rejecting values the target dtype cannot hold.
    pub fn with_dtype(mut self, dtype: DType) -> Result<Self> {
        if let Some((i, v)) = self.data.iter().enumerate().find(|(_, &v)| !dtype.admits(v)) {
            return Err(Error::Value(format!(
                "element {i} = {v} is not representable as {dtype:?}"
            )));
        }
        self.dtype = dtype;
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
            dtype: DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= d {
                return Err(Error::Shape(format!(
                    "index {index:?} out of bounds for {:?}",
                    self.shape
                )));
            }
            off += i * s;
        }
        Ok(off)
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return Err(Error::Shape(format!(
                "offset {offset} out of bounds for {} elements",
                self.data.len()
            )));
        }
        let mut index = vec![0; self.shape.len()];
        for (k, s) in self.strides().into_iter().enumerate() {
            index[k] = offset / s;
            offset %= s;
        }
        Ok(index)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
            dtype: self.dtype,
        })
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        instrument::tally_elementwise(self.data.len());
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            dtype: DType::F64,
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
            dtype: DType::F64,
        }
    }

    /// Concatenates `parts` along `axis`; every other axis must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return Err(Error::Shape(format!(
                "concat axis {axis} out of range for rank {}",
                first.ndim()
            )));
        }
        for p in &parts[1..] {
            let compatible = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * shape[axis] * inner);
        for o in 0..outer {
            for p in parts {
                let slab = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * slab..(o + 1) * slab]);
            }
        }
        instrument::tally_elementwise(data.len());
        Ok(Tensor {
            shape,
            data,
            dtype: first.dtype,
        })
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape[axis] {
            return Err(Error::Shape(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * self.shape[axis] + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor {
            shape,
            data,
            dtype: self.dtype,
        })
    }

    /// Index of the largest value along `axis` for every other position
    /// (first index wins ties). Used to turn logits into labels.
    pub fn argmax_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::Shape(format!("argmax axis {axis} out of range")));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let k = self.shape[axis];
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = self.data[o * k * inner + i];
                for c in 1..k {
                    let v = self.data[(o * k + c) * inner + i];
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                out.push(best as f64);
            }
        }
        let mut shape: Vec<usize> = self.shape[..axis].to_vec();
        shape.extend_from_slice(&self.shape[axis + 1..]);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out)?.with_dtype(DType::I32)
    }

    pub fn write_tnsr<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TNSR_MAGIC)?;
        w.write_all(&[TNSR_VERSION, self.dtype.code(), self.shape.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * self.dtype.size_of());
        for &v in &self.data {
            match self.dtype {
                DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::U8 => buf.push(v as u8),
                DType::I32 => buf.extend_from_slice(&(v as i32).to_le_bytes()),
            }
        }
        w.write_all(&buf)
    }

    pub fn to_tnsr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_tnsr(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one record. `base` is the offset of the reader's start within the
    /// enclosing file, so format errors can point at the absolute position.
    pub fn read_tnsr<R: Read>(r: &mut R, base: u64) -> Result<Tensor> {
        let mut reader = OffsetReader { inner: r, offset: base };
        let magic: [u8; 4] = reader.array("magic")?;
        if &magic != TNSR_MAGIC {
            return Err(Error::Format {
                offset: base,
                reason: format!("bad magic {magic:?}, expected \"TNSR\""),
            });
        }
        let [version, dtype_code, ndim] = reader.array::<3>("header")?;
        if version != TNSR_VERSION {
            return Err(Error::Format {
                offset: base + 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let dtype = DType::from_code(dtype_code).ok_or_else(|| Error::Format {
            offset: base + 5,
            reason: format!("unknown dtype code {dtype_code}"),
        })?;
        if ndim == 0 {
            return Err(Error::Format {
                offset: base + 6,
                reason: "zero dimensions".into(),
            });
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let at = reader.offset;
            let d = u32::from_le_bytes(reader.array("dimension")?) as usize;
            if d == 0 {
                return Err(Error::Format {
                    offset: at,
                    reason: "zero-sized dimension".into(),
                });
            }
            shape.push(d);
        }
        let n = check_shape(&shape).map_err(|e| Error::Format {
            offset: reader.offset,
            reason: e.to_string(),
        })?;
        let mut payload = vec![0u8; n * dtype.size_of()];
        reader.fill(&mut payload, "payload")?;
        let data: Vec<f64> = match dtype {
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::U8 => payload.iter().map(|&b| b as f64).collect(),
            DType::I32 => payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok(Tensor { shape, data, dtype })
    }

    pub fn from_tnsr_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut cursor = bytes;
        let t = Tensor::read_tnsr(&mut cursor, 0)?;
        if !cursor.is_empty() {
            return Err(Error::Format {
                offset: (bytes.len() - cursor.len()) as u64,
                reason: format!("{} trailing bytes", cursor.len()),
            });
        }
        Ok(t)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_tnsr_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_tnsr_bytes(&bytes)
    }
}

pub(crate) struct OffsetReader<'a, R: Read> {
    pub(crate) inner: &'a mut R,
    pub(crate) offset: u64,
}

impl<R: Read> OffsetReader<'_, R> {
    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + got as u64,
                        reason: format!("truncated {what}: needed {} more bytes", buf.len() - got),
                    })
                }
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Format {
                        offset: self.offset + got as u64,
                        reason: e.to_string(),
                    })
                }
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_fills_every_element() {
        let t = Tensor::new(&[2, 3], 0.0).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0; 6]);
        assert_eq!(Tensor::new(&[1], 7.5).unwrap().data(), &[7.5]);
        assert_eq!(Tensor::new(&[2, 2, 2], 1.0).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(matches!(Tensor::new(&[], 0.0), Err(Error::InvalidShape { .. })));
        assert!(matches!(Tensor::new(&[2, 0], 0.0), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn add_examples() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.add(&a.zeros_like()).unwrap(), a);
        let c = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let d = Tensor::from_vec(&[1], vec![-0.5]).unwrap();
        assert_eq!(c.add(&d).unwrap().data(), &[0.0]);
    }

    #[test]
    fn add_does_not_broadcast() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
        let c = Tensor::zeros(&[3, 2]).unwrap();
        assert!(a.add(&c).is_err());
    }

    #[test]
    fn concat_channel_examples() {
        let a = Tensor::new(&[1, 4, 8, 8, 8], 1.0).unwrap();
        let b = Tensor::new(&[1, 4, 8, 8, 8], 2.0).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 8, 8, 8, 8]);
        assert_eq!(c.narrow(1, 4, 4).unwrap(), b);

        let single = Tensor::concat(&[&a], 1).unwrap();
        assert_eq!(single, a);

        let parts: Vec<Tensor> = [2usize, 3, 5]
            .iter()
            .enumerate()
            .map(|(i, &ch)| Tensor::new(&[1, ch, 2, 2], i as f64).unwrap())
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = Tensor::concat(&refs, 1).unwrap();
        assert_eq!(cat.shape(), &[1, 10, 2, 2]);
        assert_eq!(cat.get(&[0, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(cat.get(&[0, 2, 0, 0]).unwrap(), 1.0);
        assert_eq!(cat.get(&[0, 9, 0, 0]).unwrap(), 2.0);
    }

    #[test]
    fn concat_rejects_mismatched_dims() {
        let a = Tensor::zeros(&[1, 2, 4]).unwrap();
        let b = Tensor::zeros(&[1, 2, 5]).unwrap();
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
    }

    #[test]
    fn tnsr_header_layout() {
        let t = Tensor::from_vec(&[2], vec![1.0, -2.0])
            .unwrap()
            .with_dtype(DType::I32)
            .unwrap();
        let bytes = t.to_tnsr_bytes();
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 3);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &1i32.to_le_bytes());
        assert_eq!(&bytes[15..19], &(-2i32).to_le_bytes());
        assert_eq!(bytes.len(), 19);
    }

    #[test]
    fn tnsr_truncation_and_magic() {
        let t = Tensor::new(&[3, 2], 0.25).unwrap();
        let bytes = t.to_tnsr_bytes();
        for cut in [0, 3, 6, 9, bytes.len() - 1] {
            let err = Tensor::from_tnsr_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
        let mut swapped = bytes.clone();
        swapped[..4].copy_from_slice(b"RSNT");
        assert!(matches!(
            Tensor::from_tnsr_bytes(&swapped),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn dtype_tags_validate_values() {
        assert!(Tensor::new(&[1], 0.5).unwrap().with_dtype(DType::U8).is_err());
        assert!(Tensor::new(&[1], 300.0).unwrap().with_dtype(DType::U8).is_err());
        assert!(Tensor::new(&[1], 0.1).unwrap().with_dtype(DType::F32).is_err());
        assert!(Tensor::new(&[1], 0.5).unwrap().with_dtype(DType::F32).is_ok());
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #[test]
        fn linearization_round_trip(shape in shape_strategy()) {
            let t = Tensor::zeros(&shape).unwrap();
            for off in 0..t.len() {
                let idx = t.unravel(off).unwrap();
                prop_assert_eq!(t.offset(&idx).unwrap(), off);
            }
        }

        #[test]
        fn add_commutes_and_associates(shape in shape_strategy(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            // Exact associativity holds for dyadic values.
            let q = |t: &Tensor| Tensor::from_vec(&shape, t.data().iter().map(|v| (v * 64.0).round() / 64.0).collect()).unwrap();
            let (a, b, c) = (q(&a), q(&b), q(&mk(&mut rng)));
            prop_assert_eq!(a.add(&b).unwrap().add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
        }

        #[test]
        fn concat_then_narrow_recovers_parts(
            rest in prop::collection::vec(1usize..4, 0..3),
            channels in prop::collection::vec(1usize..4, 1..4),
        ) {
            let parts: Vec<Tensor> = channels.iter().enumerate().map(|(i, &c)| {
                let mut shape = vec![2, c];
                shape.extend_from_slice(&rest);
                let n: usize = shape.iter().product();
                Tensor::from_vec(&shape, (0..n).map(|k| (i * 1000 + k) as f64).collect()).unwrap()
            }).collect();
            let refs: Vec<&Tensor> = parts.iter().collect();
            let cat = Tensor::concat(&refs, 1).unwrap();
            let mut start = 0;
            for p in &parts {
                prop_assert_eq!(&cat.narrow(1, start, p.shape()[1]).unwrap(), p);
                start += p.shape()[1];
            }
        }

        #[test]
        fn tnsr_round_trip(shape in shape_strategy(), seed in any::<u64>(), code in 0u8..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dtype = DType::from_code(code).unwrap();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| match dtype {
                DType::F64 => rng.random_range(-1e6..1e6),
                DType::F32 => rng.random_range(-1e3f32..1e3) as f64,
                DType::U8 => rng.random_range(0..=255u8) as f64,
                DType::I32 => rng.random::<i32>() as f64,
            }).collect();
            let t = Tensor::from_vec(&shape, data).unwrap().with_dtype(dtype).unwrap();
            prop_assert_eq!(Tensor::from_tnsr_bytes(&t.to_tnsr_bytes()).unwrap(), t);
        }
    }
}
