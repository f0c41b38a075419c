//! `CGM1` model checkpoints.
//!
//! Layout (little-endian): magic `CGM1`, `u32` version, `u32` length of a
//! JSON header, the header, `u32` record count, then per record a `u32`
//! name length, the UTF-8 name, `u32` rows, `u32` cols and `rows * cols`
//! `f64` values in row-major order.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::ModelState;
use super::readout::{Dense, Readout};
use crate::encoders::{EncoderHeads, ProjectionHead};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::optim::{Adam, AdamConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGM1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    modalities: Vec<String>,
    layers: usize,
    readout_layers: usize,
    train_heads: bool,
    adam: AdamConfig,
    step: u64,
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_record(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) {
    debug_assert_eq!(rows * cols, data.len());
    push_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    push_u32(out, rows);
    push_u32(out, cols);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let header = Header {
        modalities: state.modalities.iter().map(|m| m.name().to_string()).collect(),
        layers: state.weights.len(),
        readout_layers: state.readout.layers.len(),
        train_heads: state.train_heads,
        adam: state.adam.config,
        step: state.adam.step,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut records: Vec<(String, usize, usize, &[f64])> = Vec::new();
    let mat = |m: &'_ Array2<f64>| (m.nrows(), m.ncols());
    for h in &state.heads {
        let (r, c) = mat(&h.weight);
        records.push((format!("head.{}.weight", h.modality.name()), r, c, h.weight.as_slice().unwrap()));
        records.push((format!("head.{}.bias", h.modality.name()), 1, h.bias.len(), h.bias.as_slice().unwrap()));
    }
    for (k, w) in state.weights.iter().enumerate() {
        let (r, c) = mat(w);
        records.push((format!("gcn.{k}.weight"), r, c, w.as_slice().unwrap()));
    }
    for (l, layer) in state.readout.layers.iter().enumerate() {
        let (r, c) = mat(&layer.weight);
        records.push((format!("readout.{l}.weight"), r, c, layer.weight.as_slice().unwrap()));
        records.push((format!("readout.{l}.bias"), 1, layer.bias.len(), layer.bias.as_slice().unwrap()));
    }
    for (slot, (m, v)) in state.adam.first.iter().zip(&state.adam.second).enumerate() {
        records.push((format!("adam.{slot}.first"), 1, m.len(), m));
        records.push((format!("adam.{slot}.second"), 1, v.len(), v));
    }

    encode_records(&json, &records)
}

fn encode_records(header: &[u8], records: &[(String, usize, usize, &[f64])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION as usize);
    push_u32(&mut out, header.len());
    out.extend_from_slice(header);
    push_u32(&mut out, records.len());
    for (name, r, c, data) in records {
        push_record(&mut out, name, *r, *c, data);
    }
    out
}

struct Cursor<'a> {
    name: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::format(self.name, self.bytes.len() as u64, format!("truncated {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

struct Record {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Parse the container: returns the header, its byte offset and the records.
fn decode_records<H: serde::de::DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<(H, usize, VecDeque<Record>)> {
    let mut cur = Cursor { name, bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(name, 0, "bad magic, expected `CGM1`"));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(name, 4, format!("unsupported checkpoint version {version}")));
    }
    let hlen = cur.u32("header length")?;
    let hpos = cur.pos;
    let header: H = serde_json::from_slice(cur.take(hlen, "header")?)
        .map_err(|e| Error::format(name, hpos as u64, format!("header: {e}")))?;
    let count = cur.u32("record count")?;
    let mut records = VecDeque::with_capacity(count);
    for _ in 0..count {
        let at = cur.pos;
        let len = cur.u32("record name")?;
        let rname = std::str::from_utf8(cur.take(len, "record name")?)
            .map_err(|_| Error::format(name, at as u64, "record name is not UTF-8"))?
            .to_string();
        let rows = cur.u32("record shape")?;
        let cols = cur.u32("record shape")?;
        let size = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::format(name, at as u64, "record size overflows"))?;
        let data_at = cur.pos;
        let raw = cur.take(size, "record data")?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                name,
                (data_at + bad * 8) as u64,
                format!("non-finite value in `{rname}`"),
            ));
        }
        records.push_back(Record {
            name: rname,
            rows,
            cols,
            data,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(name, cur.pos as u64, "trailing bytes"));
    }
    Ok((header, hpos, records))
}

fn parse_modalities(name: &str, hpos: usize, names: &[String]) -> Result<Vec<Modality>> {
    names
        .iter()
        .map(|s| {
            Modality::ALL
                .into_iter()
                .find(|m| m.name() == s)
                .ok_or_else(|| Error::format(name, hpos as u64, format!("unknown modality `{s}`")))
        })
        .collect()
}

fn matrix(r: Record) -> Array2<f64> {
    Array2::from_shape_vec((r.rows, r.cols), r.data).expect("shape checked")
}

fn pop_head(
    records: &mut VecDeque<Record>,
    name: &str,
    len: usize,
    m: Modality,
) -> Result<ProjectionHead> {
    let weight = matrix(pop(records, name, len, &format!("head.{}.weight", m.name()))?);
    let bias = Array1::from(pop(records, name, len, &format!("head.{}.bias", m.name()))?.data);
    if bias.len() != weight.nrows() {
        return Err(Error::format(name, 0, format!("{} head bias does not match its weight", m.name())));
    }
    Ok(ProjectionHead {
        modality: m,
        weight,
        bias,
    })
}

pub fn decode_checkpoint(name: &str, bytes: &[u8]) -> Result<ModelState> {
    let (header, hpos, mut records): (Header, _, _) = decode_records(name, bytes)?;
    let count = records.len();
    let modalities = parse_modalities(name, hpos, &header.modalities)?;
    let mut heads = Vec::new();
    for &m in &modalities {
        heads.push(pop_head(&mut records, name, bytes.len(), m)?);
    }
    let mut next = |expected: &str| pop(&mut records, name, bytes.len(), expected);
    let weights = (0..header.layers)
        .map(|k| next(&format!("gcn.{k}.weight")).map(matrix))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::new();
    for l in 0..header.readout_layers {
        let weight = matrix(next(&format!("readout.{l}.weight"))?);
        let bias = Array1::from(next(&format!("readout.{l}.bias"))?.data);
        layers.push(Dense { weight, bias });
    }
    let mut adam = Adam::new(header.adam, &[]);
    adam.step = header.step;
    let slots = (count - (header.modalities.len() * 2 + header.layers + header.readout_layers * 2).min(count)) / 2;
    for slot in 0..slots {
        adam.first.push(next(&format!("adam.{slot}.first"))?.data);
        adam.second.push(next(&format!("adam.{slot}.second"))?.data);
    }
    drop(next);
    if let Some(extra) = records.front() {
        return Err(Error::format(name, 0, format!("unexpected record `{}`", extra.name)));
    }
    let state = ModelState {
        modalities,
        heads,
        weights,
        readout: Readout { layers },
        train_heads: header.train_heads,
        adam,
    };
    validate(name, &state)?;
    Ok(state)
}

fn pop(records: &mut VecDeque<Record>, name: &str, len: usize, expected: &str) -> Result<Record> {
    let r = records
        .pop_front()
        .ok_or_else(|| Error::format(name, len as u64, format!("missing record `{expected}`")))?;
    if r.name != expected {
        return Err(Error::format(
            name,
            0,
            format!("expected record `{expected}`, found `{}`", r.name),
        ));
    }
    Ok(r)
}

fn validate(name: &str, st: &ModelState) -> Result<()> {
    let bad = |msg: String| Err(Error::format(name, 0, msg));
    let Some(d) = st.weights.first().map(|w| w.nrows()) else {
        return bad("checkpoint has no GCN layers".into());
    };
    if st.weights.iter().any(|w| w.dim() != (d, d)) {
        return bad(format!("GCN weights must all be {d}x{d}"));
    }
    for h in &st.heads {
        if h.weight.nrows() != d || h.bias.len() != d {
            return bad(format!("{} head does not output {d} dims", h.modality.name()));
        }
    }
    let mut width = st.modalities.len() * d;
    for (l, layer) in st.readout.layers.iter().enumerate() {
        if layer.weight.ncols() != width || layer.bias.len() != layer.weight.nrows() {
            return bad(format!("readout layer {l} has inconsistent shape"));
        }
        width = layer.weight.nrows();
    }
    if width != d {
        return bad(format!("readout outputs {width} dims, expected {d}"));
    }
    let sizes: Vec<usize> = {
        let mut v = Vec::new();
        if st.train_heads {
            for h in &st.heads {
                v.push(h.weight.len());
                v.push(h.bias.len());
            }
        }
        v.extend(st.weights.iter().map(|w| w.len()));
        for l in &st.readout.layers {
            v.push(l.weight.len());
            v.push(l.bias.len());
        }
        v
    };
    let moments: Vec<usize> = st.adam.first.iter().map(|m| m.len()).collect();
    let second: Vec<usize> = st.adam.second.iter().map(|m| m.len()).collect();
    if moments != sizes || second != sizes {
        return bad("optimizer moments do not match the parameters".into());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct HeadsHeader {
    kind: String,
    modalities: Vec<String>,
}

const HEADS_KIND: &str = "encoder_heads";

/// The three trained projection heads in the `CGM1` container, header kind
/// `encoder_heads`.
pub fn encode_heads(heads: &EncoderHeads) -> Vec<u8> {
    let header = HeadsHeader {
        kind: HEADS_KIND.into(),
        modalities: Modality::ALL.iter().map(|m| m.name().to_string()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut records: Vec<(String, usize, usize, &[f64])> = Vec::new();
    for m in Modality::ALL {
        let h = heads.get(m);
        records.push((
            format!("head.{}.weight", m.name()),
            h.weight.nrows(),
            h.weight.ncols(),
            h.weight.as_slice().unwrap(),
        ));
        records.push((format!("head.{}.bias", m.name()), 1, h.bias.len(), h.bias.as_slice().unwrap()));
    }
    encode_records(&json, &records)
}

pub fn decode_heads(name: &str, bytes: &[u8]) -> Result<EncoderHeads> {
    let (header, hpos, mut records): (HeadsHeader, _, _) = decode_records(name, bytes)?;
    if header.kind != HEADS_KIND {
        return Err(Error::format(name, hpos as u64, format!("expected kind `{HEADS_KIND}`, found `{}`", header.kind)));
    }
    if parse_modalities(name, hpos, &header.modalities)? != Modality::ALL {
        return Err(Error::format(name, hpos as u64, "heads file must hold text, visual and poi"));
    }
    let text = pop_head(&mut records, name, bytes.len(), Modality::Text)?;
    let visual = pop_head(&mut records, name, bytes.len(), Modality::Visual)?;
    let poi = pop_head(&mut records, name, bytes.len(), Modality::Poi)?;
    if let Some(extra) = records.front() {
        return Err(Error::format(name, 0, format!("unexpected record `{}`", extra.name)));
    }
    let d = text.weight.nrows();
    if visual.weight.nrows() != d || poi.weight.nrows() != d || visual.weight.ncols() != text.weight.ncols() {
        return Err(Error::format(name, 0, "heads have inconsistent shapes"));
    }
    Ok(EncoderHeads { text, visual, poi })
}

pub fn write_heads(path: &Path, heads: &EncoderHeads) -> Result<()> {
    std::fs::write(path, encode_heads(heads)).map_err(|e| Error::io(path, e))
}

pub fn read_heads(path: &Path) -> Result<EncoderHeads> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_heads(&path.display().to_string(), &bytes)
}

pub fn write_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&path.display().to_string(), &bytes)
}
