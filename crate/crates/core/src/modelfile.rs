//! Self-describing binary container for model parameters.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      b"EVRM"
//! version    u32
//! hasher     dim: u64, n_orders: u32, orders: u32 × n_orders, seed: u64
//! n_tensors  u32
//! tensor     name_len: u32, name: utf-8, ndim: u32, dims: u64 × ndim, payload: f32 × Π dims
//! ```
//!
//! Parameters live in `f64` during training but are always rounded to `f32` after each
//! update, so saving and loading is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::embedder::FeatureHasher;
use crate::tensor::Matrix;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EVRM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub hasher: FeatureHasher,
    pub tensors: Vec<NamedTensor>,
}

impl ModelFile {
    pub fn new(hasher: FeatureHasher) -> Self {
        ModelFile {
            version: FORMAT_VERSION,
            hasher,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: impl IntoIterator<Item = f64>) {
        let data: Vec<f32> = data.into_iter().map(|x| x as f32).collect();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.push(name, vec![m.rows(), m.cols()], m.as_slice().iter().copied());
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, vec![v.len()], v.iter().copied());
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ModelFormat(format!("missing tensor \"{name}\"")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.get(name)?;
        match t.shape[..] {
            [rows, cols] => Ok(Matrix::from_vec(rows, cols, t.data.iter().map(|&x| x as f64).collect())),
            _ => Err(Error::ModelFormat(format!("tensor \"{name}\" is not a matrix: {:?}", t.shape))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(Error::ModelFormat(format!("tensor \"{name}\" is not a vector: {:?}", t.shape)));
        }
        Ok(t.data.iter().map(|&x| x as f64).collect())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.vector(name)?[..] {
            [x] => Ok(x),
            _ => Err(Error::ModelFormat(format!("tensor \"{name}\" is not a scalar"))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(self.version)?;
        w.write_u64::<LittleEndian>(self.hasher.dim as u64)?;
        w.write_u32::<LittleEndian>(self.hasher.ngram_orders.len() as u32)?;
        for &n in &self.hasher.ngram_orders {
            w.write_u32::<LittleEndian>(n as u32)?;
        }
        w.write_u64::<LittleEndian>(self.hasher.seed)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for t in &self.tensors {
            w.write_u32::<LittleEndian>(t.name.len() as u32)?;
            w.write_all(t.name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
            for &d in &t.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &x in &t.data {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let n_orders = r.read_u32::<LittleEndian>()? as usize;
        let ngram_orders = (0..n_orders)
            .map(|_| r.read_u32::<LittleEndian>().map(|n| n as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let hasher = FeatureHasher::new(dim, ngram_orders, seed)?;
        let n_tensors = r.read_u32::<LittleEndian>()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::ModelFormat("tensor name is not utf-8".into()))?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(ModelFile {
            version,
            hasher,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        ModelFile::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bytes() {
        let mut f = ModelFile::new(FeatureHasher::new(16, vec![1, 3], 42).unwrap());
        f.push_matrix("w", &Matrix::from_vec(2, 3, vec![1.0, -2.5, 3.0, 0.125, 5.0, 6.0]));
        f.push_vector("b", &[0.5]);
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        let back = ModelFile::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.scalar("b").unwrap(), 0.5);
        assert_eq!(back.matrix("w").unwrap().get(1, 0), 0.125);
        assert!(back.get("nope").is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(ModelFile::read_from(&mut &b"NOPE\x01\x00\x00\x00"[..]).is_err());
        assert!(ModelFile::read_from(&mut &b"EV"[..]).is_err());
    }
}
