//! Self-describing tensor container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "MCSF" | format version u32
//! n_meta u32   | n_meta × (key str, value str)
//! n_tensor u32 | n_tensor × (name str, ndim u32, ndim × u64 dims, prod(dims) × f64)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Activation, GruCell, Head, Mlp, NnError};

pub const MAGIC: &[u8; 4] = b"MCSF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if n > self.buf.len() - self.pos {
            return Err(NnError::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| NnError::Format(e.to_string()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str, NnError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| NnError::Format(format!("missing metadata key {key:?}")))
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor { name: name.into(), shape, data });
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NnError::Format(format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend((t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported format version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let too_large = || NnError::Format("tensor too large".into());
            let len = shape.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d)).ok_or_else(too_large)?;
            let bytes = r.take(len.checked_mul(8).ok_or_else(too_large)?)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            ck.tensors.push(Tensor { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(NnError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn put_mlp(&mut self, prefix: &str, net: &Mlp) {
        self.set_meta(format!("{prefix}.activation"), net.activation().name());
        self.set_meta(format!("{prefix}.head"), net.head().name());
        self.set_meta(format!("{prefix}.layers"), (net.dims().len() - 1).to_string());
        for k in 0..net.dims().len() - 1 {
            let (w, b) = net.layer(k);
            let (i, o) = (net.dims()[k], net.dims()[k + 1]);
            self.push(format!("{prefix}/l{k}/w"), vec![o, i], w.to_vec());
            self.push(format!("{prefix}/l{k}/b"), vec![o], b.to_vec());
        }
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<Mlp, NnError> {
        let activation = match self.meta(&format!("{prefix}.activation"))? {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => return Err(NnError::Format(format!("unknown activation {other:?}"))),
        };
        let head = match self.meta(&format!("{prefix}.head"))? {
            "softmax" => Head::Softmax,
            "linear" => Head::Linear,
            "activated" => Head::Activated,
            other => return Err(NnError::Format(format!("unknown head {other:?}"))),
        };
        let n_layers: usize = self
            .meta(&format!("{prefix}.layers"))?
            .parse()
            .map_err(|_| NnError::Format("bad layer count".into()))?;
        let mut dims = Vec::with_capacity(n_layers + 1);
        let mut params = Vec::new();
        for k in 0..n_layers {
            let w = self.tensor(&format!("{prefix}/l{k}/w"))?;
            let b = self.tensor(&format!("{prefix}/l{k}/b"))?;
            if w.shape.len() != 2 || b.shape != [w.shape[0]] {
                return Err(NnError::Format(format!("bad shapes in layer {prefix}/l{k}")));
            }
            if k == 0 {
                dims.push(w.shape[1]);
            } else if dims[k] != w.shape[1] {
                return Err(NnError::Format(format!("layer {prefix}/l{k} does not chain")));
            }
            dims.push(w.shape[0]);
            params.extend(&w.data);
            params.extend(&b.data);
        }
        Mlp::from_params(&dims, activation, head, params)
    }

    pub fn put_gru(&mut self, prefix: &str, cell: &GruCell) {
        self.set_meta(format!("{prefix}.input_dim"), cell.input_dim().to_string());
        self.set_meta(format!("{prefix}.hidden_dim"), cell.hidden_dim().to_string());
        self.push(format!("{prefix}/gru"), vec![cell.num_params()], cell.params().to_vec());
    }

    pub fn get_gru(&self, prefix: &str) -> Result<GruCell, NnError> {
        let dim = |key: &str| -> Result<usize, NnError> {
            self.meta(&format!("{prefix}.{key}"))?
                .parse()
                .map_err(|_| NnError::Format(format!("bad {prefix}.{key}")))
        };
        let t = self.tensor(&format!("{prefix}/gru"))?;
        GruCell::from_params(dim("input_dim")?, dim("hidden_dim")?, t.data.clone())
    }
}
