//! Binary dataset files.
//!
//! Layout (little-endian): magic `GRPDATA\0`, `u32` version, `u8` domain tag
//! (0 Sokoban, 1 TSP), `u64` record count, `u32` observation height and width
//! (zero for TSP), then per record a `u32` byte length and the payload, then a
//! CRC-32 of every preceding byte.
//!
//! Sokoban payload: current and goal observations as packed bits (channel-major,
//! LSB first), `u8` action, `u32` plan length. TSP payload: `u16` node count,
//! `u64` visited mask, `u16` current, `u16` start, `u16` action, `u32` edge
//! count, then `(u16, u16, f64)` per edge.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use super::{Dataset, SokobanSample, TspSample};
use crate::sokoban::Observation;
use crate::tensor::Tensor;
use crate::tsp::{TspState, WeightedGraph};

const MAGIC: &[u8; 8] = b"GRPDATA\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 8 + 4 + 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a dataset file")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> DatasetError {
    DatasetError::Malformed(msg.into())
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let (tag, (h, wd)) = match dataset {
        Dataset::Sokoban(s) => (0u8, s.first().map_or((0, 0), |x| (x.current.height(), x.current.width()))),
        Dataset::Tsp(_) => (1u8, (0, 0)),
    };
    buf.push(tag);
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(wd as u32).to_le_bytes());
    let mut record = Vec::new();
    match dataset {
        Dataset::Sokoban(samples) => {
            for s in samples {
                for obs in [&s.current, &s.goal] {
                    if obs.height() != h || obs.width() != wd {
                        return Err(malformed("observations of different sizes in one dataset"));
                    }
                }
                record.clear();
                pack_bits(&s.current.channels, &mut record)?;
                pack_bits(&s.goal.channels, &mut record)?;
                record.push(u8::try_from(s.action).map_err(|_| malformed("action index"))?);
                record.extend_from_slice(&s.plan_length.to_le_bytes());
                push_record(&mut buf, &record);
            }
        }
        Dataset::Tsp(samples) => {
            for s in samples {
                record.clear();
                let n = s.graph.node_count();
                record.extend_from_slice(&(n as u16).to_le_bytes());
                record.extend_from_slice(&s.state.visited_mask().to_le_bytes());
                for v in [s.state.current, s.state.start, s.action] {
                    record.extend_from_slice(&(v as u16).to_le_bytes());
                }
                record.extend_from_slice(&(s.graph.edge_count() as u32).to_le_bytes());
                for (u, v, wt) in s.graph.edges() {
                    record.extend_from_slice(&(u as u16).to_le_bytes());
                    record.extend_from_slice(&(v as u16).to_le_bytes());
                    record.extend_from_slice(&wt.to_le_bytes());
                }
                push_record(&mut buf, &record);
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

fn push_record(buf: &mut Vec<u8>, record: &[u8]) {
    buf.extend_from_slice(&(record.len() as u32).to_le_bytes());
    buf.extend_from_slice(record);
}

fn pack_bits(t: &Tensor, out: &mut Vec<u8>) -> Result<(), DatasetError> {
    for chunk in t.values().chunks(8) {
        let mut byte = 0u8;
        for (k, &v) in chunk.iter().enumerate() {
            if v == 1.0 {
                byte |= 1 << k;
            } else if v != 0.0 {
                return Err(malformed("observation entries must be 0 or 1"));
            }
        }
        out.push(byte);
    }
    Ok(())
}

fn unpack_bits(bytes: &[u8], shape: [usize; 3]) -> Tensor {
    let len = shape.iter().product::<usize>();
    let values = (0..len).map(|i| f64::from((bytes[i / 8] >> (i % 8)) & 1)).collect();
    Tensor::new(shape.to_vec(), values).expect("length matches shape")
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() < n {
            return Err(DatasetError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset, DatasetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(if bytes.len() < 8 { DatasetError::Truncated } else { DatasetError::BadMagic });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(DatasetError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DatasetError::Checksum { stored, computed });
    }
    let mut c = Cursor { bytes: &body[8..] };
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version(version));
    }
    let tag = c.u8()?;
    let count = usize::try_from(c.u64()?).map_err(|_| malformed("record count"))?;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let dataset = match tag {
        0 => {
            let obs_bytes = (3 * h * w).div_ceil(8);
            let mut samples = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let len = c.u32()? as usize;
                if len != 2 * obs_bytes + 5 {
                    return Err(malformed("Sokoban record length"));
                }
                let mut rec = Cursor { bytes: c.take(len)? };
                let current = unpack_bits(rec.take(obs_bytes)?, [3, h, w]);
                let goal = unpack_bits(rec.take(obs_bytes)?, [3, h, w]);
                samples.push(SokobanSample {
                    current: Observation { channels: current },
                    goal: Observation { channels: goal },
                    action: rec.u8()? as usize,
                    plan_length: rec.u32()?,
                });
            }
            Dataset::Sokoban(samples)
        }
        1 => {
            let mut samples: Vec<TspSample> = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let len = c.u32()? as usize;
                let mut rec = Cursor { bytes: c.take(len)? };
                let n = rec.u16()? as usize;
                let visited = rec.u64()?;
                let current = rec.u16()? as usize;
                let start = rec.u16()? as usize;
                let action = rec.u16()? as usize;
                let m = rec.u32()? as usize;
                let mut graph = WeightedGraph::empty(n).map_err(|e| malformed(e.to_string()))?;
                for _ in 0..m {
                    let (u, v, wt) = (rec.u16()? as usize, rec.u16()? as usize, rec.f64()?);
                    graph.add_edge(u, v, wt).map_err(|e| malformed(e.to_string()))?;
                }
                if !rec.bytes.is_empty() {
                    return Err(malformed("TSP record length"));
                }
                let state = TspState::from_parts(visited, current, start, n).ok_or_else(|| malformed("TSP state"))?;
                // Consecutive samples from one tour share their graph.
                let graph = match samples.last() {
                    Some(prev) if *prev.graph == graph => prev.graph.clone(),
                    _ => Arc::new(graph),
                };
                samples.push(TspSample { graph, state, action });
            }
            Dataset::Tsp(samples)
        }
        other => return Err(malformed(format!("unknown domain tag {other}"))),
    };
    if !c.bytes.is_empty() {
        return Err(malformed("trailing bytes after the last record"));
    }
    Ok(dataset)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    read_dataset(BufReader::new(File::open(path)?))
}
