//! Named-tensor container file, used for checkpoints and cached datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"STMK"
//! version u32 (currently 1)
//! count   u32
//! entry × count:
//!   name_len u32, name utf-8,
//!   dtype    u8 (1 = f32, 2 = f64),
//!   rank     u32, dims rank × u64,
//!   payload  numel × dtype size, raw LE scalars
//! ```
//!
//! No compression and no alignment games: round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Element};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"STMK";
pub const VERSION: u32 = 1;

/// A stored tensor in either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }
}

/// Typed view of an [`AnyTensor`]; errors instead of casting, so checkpoints
/// can never silently change precision.
pub trait FromAny: Element {
    fn from_any(name: &str, t: &AnyTensor) -> Result<Tensor<Self>>;
    fn into_any(t: Tensor<Self>) -> AnyTensor;
}

impl FromAny for f32 {
    fn from_any(name: &str, t: &AnyTensor) -> Result<Tensor<f32>> {
        match t {
            AnyTensor::F32(t) => Ok(t.clone()),
            AnyTensor::F64(_) => Err(Error::Checkpoint(format!("entry '{name}' is f64, expected f32"))),
        }
    }
    fn into_any(t: Tensor<f32>) -> AnyTensor {
        AnyTensor::F32(t)
    }
}

impl FromAny for f64 {
    fn from_any(name: &str, t: &AnyTensor) -> Result<Tensor<f64>> {
        match t {
            AnyTensor::F64(t) => Ok(t.clone()),
            AnyTensor::F32(_) => Err(Error::Checkpoint(format!("entry '{name}' is f32, expected f64"))),
        }
    }
    fn into_any(t: Tensor<f64>) -> AnyTensor {
        AnyTensor::F64(t)
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct Container {
    entries: Vec<(String, AnyTensor)>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &AnyTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: AnyTensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn push_tensor<E: FromAny>(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        self.push(name, E::into_any(tensor));
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_tensor<E: FromAny>(&self, name: &str) -> Result<Tensor<E>> {
        let any = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?;
        E::from_any(name, any)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.dtype().tag()])?;
            let dims = tensor.dims();
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut payload = Vec::new();
            match tensor {
                AnyTensor::F32(t) => {
                    payload.reserve(t.numel() * 4);
                    for &v in t.data() {
                        v.write_le(&mut payload);
                    }
                }
                AnyTensor::F64(t) => {
                    payload.reserve(t.numel() * 8);
                    for &v in t.data() {
                        v.write_le(&mut payload);
                    }
                }
            }
            w.write_all(&payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_or(&mut r, &mut magic, "header magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic {:02x?}, not a checkpoint file",
                path.display(),
                magic
            )));
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = read_u32(&mut r, "entry count")? as usize;
        let mut out = Container::new();
        for i in 0..count {
            let at = |field: &str| format!("entry {i} of {count}: {field}");
            let name_len = read_u32(&mut r, &at("name length"))? as usize;
            if name_len > 4096 {
                return Err(Error::Checkpoint(at("unreasonable name length")));
            }
            let mut name_bytes = vec![0u8; name_len];
            read_exact_or(&mut r, &mut name_bytes, &at("name"))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint(at("name is not utf-8")))?;
            let mut tag = [0u8; 1];
            read_exact_or(&mut r, &mut tag, &format!("entry '{name}': dtype"))?;
            let dtype = Dtype::from_tag(tag[0])
                .ok_or_else(|| Error::Checkpoint(format!("entry '{name}': unknown dtype tag {}", tag[0])))?;
            let rank = read_u32(&mut r, &format!("entry '{name}': rank"))? as usize;
            if rank > 16 {
                return Err(Error::Checkpoint(format!("entry '{name}': unreasonable rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for d in 0..rank {
                let mut b = [0u8; 8];
                read_exact_or(&mut r, &mut b, &format!("entry '{name}': dim {d}"))?;
                let v = u64::from_le_bytes(b);
                let v: usize = v
                    .try_into()
                    .map_err(|_| Error::Checkpoint(format!("entry '{name}': dim {d} too large")))?;
                if v == 0 {
                    return Err(Error::Checkpoint(format!("entry '{name}': zero extent in dims")));
                }
                numel = numel
                    .checked_mul(v)
                    .ok_or_else(|| Error::Checkpoint(format!("entry '{name}': element count overflow")))?;
                dims.push(v);
            }
            let mut payload = vec![0u8; numel * dtype.size_bytes()];
            read_exact_or(&mut r, &mut payload, &format!("entry '{name}': payload"))?;
            let tensor = match dtype {
                Dtype::F32 => {
                    let data: Vec<f32> = payload.chunks_exact(4).map(f32::read_le).collect();
                    AnyTensor::F32(Tensor::from_vec(dims, data)?)
                }
                Dtype::F64 => {
                    let data: Vec<f64> = payload.chunks_exact(8).map(f64::read_le).collect();
                    AnyTensor::F64(Tensor::from_vec(dims, data)?)
                }
            };
            out.push(name, tensor);
        }
        Ok(out)
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_f64, seeded};

    fn sample() -> Container {
        let mut rng = seeded(9);
        let mut c = Container::new();
        c.push_tensor("stem.conv.w", Tensor::<f32>::from_fn([4, 3, 3, 3], |_| normal_f64(&mut rng) as f32));
        c.push_tensor("head.w", Tensor::<f64>::from_fn([6, 4], |_| normal_f64(&mut rng)));
        c.push_tensor("meta/labels", Tensor::<f32>::from_vec([3], vec![0.0, 2.0, 5.0]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.stmk");
        let c = sample();
        c.write_to(&path).unwrap();
        let back = Container::read_from(&path).unwrap();
        assert_eq!(back.len(), c.len());
        for ((n1, t1), (n2, t2)) in c.entries().zip(back.entries()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2, "payload of '{n1}' must round-trip exactly");
        }
        let w: Tensor<f32> = back.get_tensor("stem.conv.w").unwrap();
        assert_eq!(w.dims(), [4, 3, 3, 3]);
    }

    #[test]
    fn truncation_names_the_failing_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.stmk");
        sample().write_to(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        let short = dir.path().join("short.stmk");
        std::fs::write(&short, cut).unwrap();
        let err = Container::read_from(&short).unwrap_err().to_string();
        assert!(err.contains("meta/labels"), "error was: {err}");
        assert!(err.contains("truncated"), "error was: {err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"NOPE....").unwrap();
        let err = Container::read_from(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "error was: {err}");
    }

    #[test]
    fn dtype_mismatch_is_an_error_not_a_cast() {
        let c = sample();
        assert!(c.get_tensor::<f64>("stem.conv.w").is_err());
        assert!(c.get_tensor::<f32>("head.w").is_err());
        assert!(c.get_tensor::<f32>("no.such").is_err());
    }
}
