//! Named parameter storage, tape binding, and the checkpoint file format.
//!
//! A checkpoint is a plain-text header followed by raw little-endian `f32`
//! values:
//!
//! ```text
//! aprnet-checkpoint v1
//! count 2
//! content.s1.conv_a.w 32x3x3x1
//! content.s1.conv_a.b 32
//! data
//! <288 + 32 values, 4 bytes each, in header order>
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &str = "aprnet-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        assert!(!name.contains(char::is_whitespace), "parameter names cannot contain spaces");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Fan-in scaled normal conv kernel `(out, kh, kw, in)`.
    pub fn add_conv_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        (out, kh, kw, inp): (usize, usize, usize, usize),
        rng: &mut R,
    ) -> ParamId {
        let std = (2.0 / (kh * kw * inp) as f64).sqrt();
        self.add(name, Tensor::randn(&[out, kh, kw, inp], std, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on the tape: as leaves when `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Overwrites values from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut by_name: HashMap<String, Tensor<T>> = entries.into_iter().collect();
        for (name, slot) in self.names.iter().zip(self.values.iter_mut()) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != slot.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

/// Tape handles for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles for a store's parameters, in store order, created elsewhere.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, zeros where the output did not depend on a parameter.
    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    let mut header = format!("{MAGIC}\ncount {}\n", store.len());
    for (name, t) in store.named() {
        let dims: Vec<String> = t.dims().iter().map(usize::to_string).collect();
        header.push_str(&format!("{name} {}\n", dims.join("x")));
    }
    header.push_str("data\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(store.num_values() * 4);
    for t in store.values() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not utf-8"))
    };
    if next_line()? != MAGIC {
        return Err(bad("not an aprnet checkpoint"));
    }
    let count: usize = next_line()?
        .strip_prefix("count ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad("missing tensor count"))?;
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| bad(&format!("malformed header line {line:?}")))?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad(&format!("bad dims in {line:?}"))))
            .collect::<Result<_>>()?;
        specs.push((name.to_string(), dims));
    }
    if next_line()? != "data" {
        return Err(bad("missing data marker"));
    }
    let mut data = &bytes[pos..];
    let mut out = Vec::with_capacity(count);
    for (name, dims) in specs {
        let n: usize = dims.iter().product();
        if data.len() < n * 4 {
            return Err(bad(&format!("truncated data for {name}")));
        }
        let values = data[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        data = &data[n * 4..];
        out.push((name, Tensor::new(&dims, values)?));
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after data"));
    }
    Ok(out)
}
