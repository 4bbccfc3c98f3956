//! Named model parameters, their initialization, updates, and on-disk form.
//!
//! Parameters live in a [`ParameterSet`]: an ordered map from name to tensor
//! plus the update group the tensor belongs to. Generator and discriminator
//! losses each produce a gradient map restricted to one group, so the two
//! updates never leak into each other even though forward passes share nodes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which loss updates a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    Generator,
    Discriminator,
}

impl ParamGroup {
    fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Generator => "generator",
            ParamGroup::Discriminator => "discriminator",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(ParamGroup::Generator),
            "discriminator" => Ok(ParamGroup::Discriminator),
            other => Err(Error::Checkpoint(format!("unknown parameter group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub group: ParamGroup,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    /// Registers a parameter. Names must be unique and free of whitespace
    /// (they appear as single fields in the checkpoint manifest).
    pub fn insert(&mut self, name: &str, tensor: Tensor, group: ParamGroup) -> Result<()> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!("bad parameter name `{name}`")));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(
            name.to_string(),
            ParamEntry { tensor, group },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    /// In-place SGD update `p -= lr * g` for every gradient in the map.
    /// Every gradient must name an existing parameter of matching shape.
    pub fn sgd_step(&mut self, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, grad) in grads {
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if entry.tensor.shape() != grad.shape() {
                return Err(Error::Contract(format!(
                    "gradient shape {:?} does not match parameter `{name}` {:?}",
                    grad.shape(),
                    entry.tensor.shape()
                )));
            }
            for (p, g) in entry.tensor.values_mut().iter_mut().zip(grad.values()) {
                *p -= lr * g;
            }
        }
        Ok(())
    }
}

/// Xavier-uniform sample of the given shape: bound `sqrt(6 / (fan_in + fan_out))`
/// with a matrix `(r, c)` read as fan_out `r`, fan_in `c`; a vector `(n)` is
/// treated as `(1, n)` and a scalar as `(1, 1)`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Result<Tensor> {
    let (fan_out, fan_in) = match shape.as_slice() {
        [n] => (1usize, *n),
        [r, c] => (*r, *c),
        other => {
            return Err(Error::Shape(format!(
                "xavier init supports rank 1 and 2, got {other:?}"
            )))
        }
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let values = (0..numel)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(shape, values)
}

/// Xavier bound for a shape, exposed for range checks.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_out, fan_in) = match shape {
        [n] => (1usize, *n),
        [r, c] => (*r, *c),
        _ => return f64::NAN,
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Global-norm gradient clipping across every tensor in the map. When the
/// joint L2 norm exceeds `threshold`, all gradients are scaled by
/// `threshold / norm`; otherwise they pass through untouched. Returns the
/// pre-clip norm.
pub fn clip_gradients(grads: &mut BTreeMap<String, Tensor>, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let mut sumsq = 0.0;
    for t in grads.values() {
        for v in t.values() {
            sumsq += v * v;
        }
    }
    let norm = sumsq.sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for t in grads.values_mut() {
            for v in t.values_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

const CHECKPOINT_MAGIC: &str = "bootchat-checkpoint v1";

/// Writes parameters plus string metadata as a text manifest followed by a
/// raw little-endian f64 payload. Values round-trip bit-exactly.
pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let ctx = || format!("writing checkpoint {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str(CHECKPOINT_MAGIC);
    header.push('\n');
    for (k, v) in meta {
        if k.chars().any(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry `{k}` is not single-line")));
        }
        header.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0usize;
    for (name, entry) in params.iter() {
        let dims: Vec<String> = entry.tensor.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "tensor {name} {} {} {} {offset}\n",
            entry.group.as_str(),
            entry.tensor.shape().len(),
            dims.join(" "),
        ));
        offset += entry.tensor.numel() * 8;
    }
    header.push_str(&format!("payload {offset}\n"));
    w.write_all(header.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
    for (_, entry) in params.iter() {
        for v in entry.tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(ctx(), e))?;
        }
    }
    w.flush().map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, BTreeMap<String, String>)> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::new(file);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(ctx(), e))?;

    let mut pos = 0usize;
    let mut next_line = |raw: &[u8]| -> Result<(String, usize)> {
        let start = pos;
        while pos < raw.len() && raw[pos] != b'\n' {
            pos += 1;
        }
        if pos >= raw.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let line = std::str::from_utf8(&raw[start..pos])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?
            .to_string();
        pos += 1;
        Ok((line, pos))
    };

    let (magic, _) = next_line(&raw)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic line `{magic}`")));
    }

    let mut meta = BTreeMap::new();
    struct Manifest {
        name: String,
        group: ParamGroup,
        shape: Vec<usize>,
        offset: usize,
    }
    let mut manifest: Vec<Manifest> = Vec::new();
    let payload_len;
    loop {
        let (line, _) = next_line(&raw)?;
        let mut fields = line.split(' ');
        match fields.next() {
            Some("meta") => {
                let k = fields
                    .next()
                    .ok_or_else(|| Error::Checkpoint("meta line missing key".into()))?;
                let v: Vec<&str> = fields.collect();
                meta.insert(k.to_string(), v.join(" "));
            }
            Some("tensor") => {
                let name = fields
                    .next()
                    .ok_or_else(|| Error::Checkpoint("tensor line missing name".into()))?
                    .to_string();
                let group = ParamGroup::parse(
                    fields
                        .next()
                        .ok_or_else(|| Error::Checkpoint("tensor line missing group".into()))?,
                )?;
                let rest: Vec<usize> = fields
                    .map(|f| {
                        f.parse::<usize>()
                            .map_err(|_| Error::Checkpoint(format!("bad number `{f}`")))
                    })
                    .collect::<Result<_>>()?;
                if rest.len() < 2 {
                    return Err(Error::Checkpoint("tensor line too short".into()));
                }
                let ndim = rest[0];
                if rest.len() != ndim + 2 {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` manifest length does not match rank {ndim}"
                    )));
                }
                let shape = rest[1..1 + ndim].to_vec();
                let offset = rest[1 + ndim];
                manifest.push(Manifest { name, group, shape, offset });
            }
            Some("payload") => {
                let n = fields
                    .next()
                    .ok_or_else(|| Error::Checkpoint("payload line missing size".into()))?;
                payload_len = n
                    .parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad payload size `{n}`")))?;
                break;
            }
            other => {
                return Err(Error::Checkpoint(format!("unexpected header line `{other:?}`")));
            }
        }
    }

    let payload = &raw[pos..];
    if payload.len() != payload_len {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, manifest promises {payload_len}",
            payload.len()
        )));
    }

    let mut params = ParameterSet::new();
    for m in &manifest {
        let numel: usize = m.shape.iter().product();
        let end = m.offset + numel * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` overruns payload", m.name)));
        }
        let mut values = Vec::with_capacity(numel);
        for chunk in payload[m.offset..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.insert(&m.name, Tensor::new(m.shape.clone(), values)?, m.group)?;
    }
    Ok((params, meta))
}
