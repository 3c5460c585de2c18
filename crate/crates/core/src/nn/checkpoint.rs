//! `ACLK1` checkpoint files.
//!
//! Layout: the 5-byte magic `ACLK1`, then records until end of file. Each
//! record is
//!
//! ```text
//! u32 LE  name length       u8      dtype (0 = f32, 1 = packed bits)
//! [u8]    UTF-8 name        u32 LE  rank
//! u64 LE  extent × rank     payload
//! ```
//!
//! `f32` payloads are little-endian. Bit payloads hold `ceil(n / 8)` bytes,
//! least significant bit first.

use std::path::Path;

use super::layers::{Layer, MaskedWeights};
use super::network::Network;
use crate::error::{Error, Result};
use crate::pruning::Mask;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"ACLK1";

const DTYPE_F32: u8 = 0;
const DTYPE_BITS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    Bits(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    fn tensor(name: String, t: &Tensor) -> Self {
        Self { name, shape: t.shape().to_vec(), data: RecordData::F32(t.data().to_vec()) }
    }

    fn mask(name: String, m: &Mask) -> Self {
        Self { name, shape: vec![m.rows(), m.cols()], data: RecordData::Bits(m.bits().to_vec()) }
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(match r.data {
            RecordData::F32(_) => DTYPE_F32,
            RecordData::Bits(_) => DTYPE_BITS,
        });
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &e in &r.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &r.data {
            RecordData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RecordData::Bits(bits) => {
                for chunk in bits.chunks(8) {
                    out.push(chunk.iter().enumerate().fold(0u8, |b, (i, &on)| b | ((on as u8) << i)));
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(field, format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("magic", "not an ACLK1 checkpoint"));
    }
    let mut cur = Cursor { bytes, pos: MAGIC.len() };
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(len, "name")?.to_vec())
            .map_err(|_| Error::format("name", "not valid UTF-8"))?;
        let dtype = cur.take(1, "dtype")?[0];
        let rank = cur.u32("rank")? as usize;
        let shape = (0..rank).map(|_| cur.u64("extents").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F32 => RecordData::F32(
                cur.take(n * 4, "payload")?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DTYPE_BITS => {
                let packed = cur.take(n.div_ceil(8), "payload")?;
                RecordData::Bits((0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
            }
            other => return Err(Error::format("dtype", format!("unknown tag {other} for {name}"))),
        };
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

fn push_masked(out: &mut Vec<Record>, prefix: &str, p: &MaskedWeights) {
    out.push(Record::tensor(format!("{prefix}.weight"), &p.weight));
    out.push(Record::tensor(format!("{prefix}.bias"), &p.bias));
    out.push(Record::tensor(format!("{prefix}.threshold"), &p.threshold));
    out.push(Record::mask(format!("{prefix}.prune_mask"), &p.prune_mask));
    out.push(Record::mask(format!("{prefix}.freeze_mask"), &p.freeze_mask));
}

/// Every persistent tensor and mask of the network, in layer order.
pub fn network_records(net: &Network) -> Vec<Record> {
    let mut out = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let prefix = format!("{i}.{}", layer.name());
        match layer {
            Layer::Dense(d) => push_masked(&mut out, &prefix, &d.params),
            Layer::Conv(c) => push_masked(&mut out, &prefix, &c.params),
            Layer::BatchNorm(b) => {
                out.push(Record::tensor(format!("{prefix}.gain"), &b.gain));
                out.push(Record::tensor(format!("{prefix}.shift"), &b.shift));
                out.push(Record::tensor(format!("{prefix}.running_mean"), &b.running_mean));
                out.push(Record::tensor(format!("{prefix}.running_var"), &b.running_var));
                out.push(Record {
                    name: format!("{prefix}.frozen"),
                    shape: vec![1],
                    data: RecordData::Bits(vec![b.frozen]),
                });
            }
            _ => {}
        }
    }
    out
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&network_records(net))).map_err(|e| Error::io(path, e))
}

/// Restores state saved by [`save`] into a network of the same architecture.
pub fn load_into(net: &mut Network, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(net, decode(&bytes)?)
}

pub fn restore(net: &mut Network, records: Vec<Record>) -> Result<()> {
    let expected = network_records(net);
    if records.len() != expected.len() {
        return Err(Error::format(
            "records",
            format!("{} records, architecture needs {}", records.len(), expected.len()),
        ));
    }
    for (got, want) in records.iter().zip(&expected) {
        if got.name != want.name || got.shape != want.shape {
            return Err(Error::format(
                got.name.clone(),
                format!("expected {} {:?}, found {:?}", want.name, want.shape, got.shape),
            ));
        }
        if std::mem::discriminant(&got.data) != std::mem::discriminant(&want.data) {
            return Err(Error::format(got.name.clone(), "wrong dtype"));
        }
    }
    // Names, shapes and dtypes match network_records, so records can be consumed in order.
    let mut it = records.into_iter().map(|r| r.data);
    for layer in &mut net.layers {
        if let Layer::BatchNorm(b) = layer {
            take_f32(&mut it, &mut b.gain);
            take_f32(&mut it, &mut b.shift);
            take_f32(&mut it, &mut b.running_mean);
            take_f32(&mut it, &mut b.running_var);
            b.frozen = take_bits(&mut it)[0];
        } else if let Some(p) = layer.masked_mut() {
            take_f32(&mut it, &mut p.weight);
            take_f32(&mut it, &mut p.bias);
            take_f32(&mut it, &mut p.threshold);
            let (rows, cols) = (p.rows(), p.cols());
            p.prune_mask = Mask::from_bits(rows, cols, take_bits(&mut it))?;
            p.freeze_mask = Mask::from_bits(rows, cols, take_bits(&mut it))?;
        }
    }
    Ok(())
}

fn take_f32(it: &mut impl Iterator<Item = RecordData>, t: &mut Tensor) {
    if let Some(RecordData::F32(v)) = it.next() {
        t.data_mut().copy_from_slice(&v);
    }
}

fn take_bits(it: &mut impl Iterator<Item = RecordData>) -> Vec<bool> {
    match it.next() {
        Some(RecordData::Bits(b)) => b,
        _ => Vec::new(),
    }
}
