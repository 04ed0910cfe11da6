//! STRW binary weight files.
//!
//! Layout (little-endian): magic `STRW`, version `u32`, tensor count `u32`,
//! then per tensor: name length `u16`, UTF-8 name, rank `u8`, `rank` dims as
//! `u32`, dtype tag `u8` (0 = f32), raw values.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::graph::{LayerGraph, Op, BN_EPS};
use super::{Float, NnError};

pub const MAGIC: &[u8; 4] = b"STRW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated while reading {what}"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn format_err(tensor: Option<&str>, detail: impl Into<String>) -> NnError {
    NnError::WeightFormat { tensor: tensor.map(str::to_string), detail: detail.into() }
}

/// Parses an STRW byte stream.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedTensor>, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|e| format_err(None, e))?;
    if magic != MAGIC {
        return Err(format_err(None, "bad magic, not an STRW file"));
    }
    let version = r.u32("version").map_err(|e| format_err(None, e))?;
    if version != VERSION {
        return Err(format_err(None, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count").map_err(|e| format_err(None, e))? as usize;
    let mut out: Vec<NamedTensor> = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let prev = out.last().map(|t| t.name.clone());
        let after = || match &prev {
            Some(p) => format!("tensor #{i} (after {p})"),
            None => format!("tensor #{i}"),
        };
        let len = r.u16("name length").map_err(|e| format_err(Some(&after()), e))? as usize;
        let raw = r.take(len, "name").map_err(|e| format_err(Some(&after()), e))?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| format_err(Some(&after()), "name is not UTF-8"))?
            .to_string();
        let ctx = |e: String| format_err(Some(&name), e);
        let rank = r.u8("rank").map_err(ctx)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims").map_err(ctx)? as usize);
        }
        let dtype = r.u8("dtype").map_err(ctx)?;
        if dtype != DTYPE_F32 {
            return Err(ctx(format!("unsupported dtype tag {dtype}")));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ctx("dims overflow".into()))?;
        let raw = r.take(n, "values").map_err(ctx)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(format_err(None, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn encode_weights(tensors: &[NamedTensor]) -> Result<Vec<u8>, NnError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| format_err(Some(&t.name), "name too long"))?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| format_err(Some(&t.name), "rank too large"))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(format_err(Some(&t.name), "shape does not match value count"));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| format_err(Some(&t.name), "dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// All parameters and buffers of `graph` as canonical named f32 tensors.
pub fn graph_tensors(graph: &LayerGraph) -> Vec<NamedTensor> {
    graph
        .named_tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

pub fn save_weights(graph: &LayerGraph, path: &Path) -> Result<(), NnError> {
    let bytes = encode_weights(&graph_tensors(graph))?;
    fs::write(path, bytes).map_err(|source| NnError::Io { path: path.to_path_buf(), source })
}

/// How strictly [`load_into`] matches file tensors to graph tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Skip parameters whose shape differs (a pretrained head being replaced).
    pub skip_mismatched_head: bool,
}

/// Copies file tensors into the graph by canonical name. Batch-norm running
/// statistics may be absent (folded at export); they then default to the
/// identity transform.
pub fn load_into(graph: &mut LayerGraph, tensors: Vec<NamedTensor>, opts: LoadOptions) -> Result<(), NnError> {
    let head = head_names(graph);
    let bn_eps: HashMap<String, Float> = graph
        .nodes()
        .iter()
        .filter_map(|n| match n.op {
            Op::BatchNorm { eps, .. } => Some((n.name.clone(), eps)),
            _ => None,
        })
        .collect();
    let mut by_name: HashMap<String, NamedTensor> = HashMap::with_capacity(tensors.len());
    for t in tensors {
        if by_name.contains_key(&t.name) {
            return Err(format_err(Some(&t.name), "duplicate tensor"));
        }
        by_name.insert(t.name.clone(), t);
    }
    for (name, slot) in graph.named_tensors_mut() {
        match by_name.remove(&name) {
            Some(t) => {
                if t.shape != slot.shape() {
                    if opts.skip_mismatched_head && head.contains(&name) {
                        continue;
                    }
                    return Err(NnError::WeightShape { name, expected: slot.shape().to_vec(), found: t.shape });
                }
                if let Some(bad) = t.data.iter().position(|v| !v.is_finite()) {
                    return Err(format_err(Some(&name), format!("non-finite value at index {bad}")));
                }
                for (d, s) in slot.data_mut().iter_mut().zip(&t.data) {
                    *d = *s as Float;
                }
            }
            None if name.ends_with("running_mean") => slot.data_mut().fill(0.0),
            None if name.ends_with("running_var") => {
                let node = name.trim_end_matches(".running_var");
                slot.data_mut().fill(1.0 - bn_eps.get(node).copied().unwrap_or(BN_EPS));
            }
            None => return Err(NnError::MissingTensor(name)),
        }
    }
    if let Some(extra) = by_name.into_keys().min() {
        return Err(NnError::UnexpectedTensor(extra));
    }
    Ok(())
}

fn head_names(graph: &LayerGraph) -> Vec<String> {
    super::head_node(graph)
        .map(|id| graph.node(id).param_names().collect())
        .unwrap_or_default()
}

pub fn load_weights(graph: &mut LayerGraph, path: &Path, opts: LoadOptions) -> Result<(), NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io { path: path.to_path_buf(), source })?;
    load_into(graph, decode_weights(&bytes)?, opts)
}
