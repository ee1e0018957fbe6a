//! Binary tensor files.
//!
//! Single tensor: `"SLT1"`, `u32` rank, `rank x u64` dims, `u8` dtype
//! (0 = f32, 1 = f64), row-major little-endian payload.
//!
//! Container: `"SLT1"`, `u32` 0xFFFFFFFF in place of the rank, `u32` header
//! length and UTF-8 header, `u32` entry count, then per entry a `u32` name
//! length, the UTF-8 name and a tensor body (rank, dims, dtype, payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLT1";
pub const CONTAINER_MARKER: u32 = u32::MAX;
const MAX_RANK: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::TensorFormat(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Elements widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        self.write_body(w)
    }

    fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[self.data.tag()])?;
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r)?;
        let rank = read_u32(r)?;
        if rank == CONTAINER_MARKER {
            return Err(Error::TensorFormat(
                "expected a single tensor, found a container".into(),
            ));
        }
        Self::read_body(r, rank)
    }

    fn read_body<R: Read>(r: &mut R, rank: u32) -> Result<Self> {
        if rank > MAX_RANK {
            return Err(Error::TensorFormat(format!("rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = read_u64(r)?;
            dims.push(usize::try_from(d).map_err(|_| {
                Error::TensorFormat(format!("dimension {d} does not fit in memory"))
            })?);
        }
        let n = element_count(&dims)?;
        let mut tag = [0u8; 1];
        read_exact(r, &mut tag)?;
        let data = match tag[0] {
            0 => {
                let bytes = read_payload(r, n, 4)?;
                TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                let bytes = read_payload(r, n, 8)?;
                TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            t => return Err(Error::TensorFormat(format!("unknown dtype tag {t}"))),
        };
        Ok(Self { dims, data })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let t = Self::read(&mut r)?;
        expect_eof(&mut r)?;
        Ok(t)
    }
}

/// Named tensors with a free-form text header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    pub header: String,
    pub entries: Vec<(String, Tensor)>,
}

impl TensorContainer {
    pub fn new(header: impl Into<String>) -> Self {
        Self {
            header: header.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::TensorFormat(format!("duplicate entry {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but missing entries are an error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::TensorFormat(format!("missing entry {name:?}")))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_MARKER.to_le_bytes())?;
        write_str(w, &self.header)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            write_str(w, name)?;
            t.write_body(w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r)?;
        if read_u32(r)? != CONTAINER_MARKER {
            return Err(Error::TensorFormat(
                "expected a container, found a single tensor".into(),
            ));
        }
        let header = read_str(r)?;
        let count = read_u32(r)?;
        let mut c = Self::new(header);
        for _ in 0..count {
            let name = read_str(r)?;
            let rank = read_u32(r)?;
            c.push(name, Tensor::read_body(r, rank)?)?;
        }
        Ok(c)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let c = Self::read(&mut r)?;
        expect_eof(&mut r)?;
        Ok(c)
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::TensorFormat(format!("dims {dims:?} overflow")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TensorFormat("truncated file".into()),
        _ => Error::Io(e),
    })
}

fn read_payload<R: Read>(r: &mut R, n: usize, width: usize) -> Result<Vec<u8>> {
    let len = n
        .checked_mul(width)
        .ok_or_else(|| Error::TensorFormat("payload size overflows".into()))?;
    let mut bytes = Vec::new();
    r.take(len as u64).read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(Error::TensorFormat(format!(
            "payload has {} bytes, header promises {len}",
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn read_magic<R: Read>(r: &mut R) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m)?;
    if &m != MAGIC {
        return Err(Error::TensorFormat(format!("bad magic {m:?}")));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let bytes = read_payload(r, len, 1)?;
    String::from_utf8(bytes).map_err(|_| Error::TensorFormat("name is not UTF-8".into()))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::TensorFormat(
            "trailing bytes after tensor data".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], TensorData::F32(vec![1.0, -2.0])).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let mut expected = b"SLT1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.push(0);
        expected.extend(1f32.to_le_bytes());
        expected.extend((-2f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn scalar_and_empty() {
        for t in [
            Tensor::from_f64(vec![], vec![3.5]).unwrap(),
            Tensor::from_f64(vec![0, 4], vec![]).unwrap(),
        ] {
            let mut buf = Vec::new();
            t.write(&mut buf).unwrap();
            assert_eq!(Tensor::read(&mut buf.as_slice()).unwrap(), t);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(Tensor::from_f64(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::from_f64(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert!(Tensor::read(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Tensor::read(&mut bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4 + 4 + 8] = 7;
        assert!(Tensor::read(&mut bad.as_slice()).is_err());
        assert!(TensorContainer::read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn container_rejects_duplicates_and_single_tensors() {
        let mut c = TensorContainer::new("h");
        let t = Tensor::from_f64(vec![1], vec![1.0]).unwrap();
        c.push("a", t.clone()).unwrap();
        assert!(c.push("a", t).is_err());
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert!(Tensor::read(&mut buf.as_slice()).is_err());
        assert!(c.require("b").is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(0usize..4, 0..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            let dims2 = dims.clone();
            prop_oneof![
                prop::collection::vec(any::<f32>(), n).prop_map(move |v| Tensor::new(
                    dims.clone(),
                    TensorData::F32(v)
                )
                .unwrap()),
                prop::collection::vec(any::<f64>(), n).prop_map(move |v| Tensor::new(
                    dims2.clone(),
                    TensorData::F64(v)
                )
                .unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn tensor_bytes_round_trip(t in arb_tensor()) {
            let mut a = Vec::new();
            t.write(&mut a).unwrap();
            let back = Tensor::read(&mut a.as_slice()).unwrap();
            let mut b = Vec::new();
            back.write(&mut b).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn container_bytes_round_trip(
            header in ".{0,40}",
            ts in prop::collection::vec(arb_tensor(), 0..4),
        ) {
            let mut c = TensorContainer::new(header);
            for (i, t) in ts.into_iter().enumerate() {
                c.push(format!("entry{i}"), t).unwrap();
            }
            let mut a = Vec::new();
            c.write(&mut a).unwrap();
            let back = TensorContainer::read(&mut a.as_slice()).unwrap();
            let mut b = Vec::new();
            back.write(&mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
