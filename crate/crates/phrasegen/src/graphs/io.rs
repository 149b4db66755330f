//! Binary tensor dataset files: one file per dataset split.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "GRTENSR1"
//! version u32
//! n_samples, n_tracks, n_positions, m_max   u32 each
//! per sample, row-major:
//!   S        n_tracks * n_positions          u8 (0/1)
//!   pitch    n_tracks * n_positions * m_max  u8 tokens
//!   duration n_tracks * n_positions * m_max  u8 tokens
//! ```
//!
//! Phrase and song datasets share the format; they differ only in the
//! header dimensions and token vocabulary.

use super::{ContentTensor, StructureTensor};
use std::io::{self, Read, Write};

pub const TENSOR_MAGIC: &[u8; 8] = b"GRTENSR1";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("tensor file I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("bad tensor file: {0}")]
    Format(String),
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorIoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes a homogeneous list of (S, C) tensor pairs.
pub fn write_tensors(
    w: &mut impl Write,
    items: &[(StructureTensor, ContentTensor)],
) -> Result<(), TensorIoError> {
    let (n_tracks, n_positions, m_max) = match items.first() {
        Some((s, c)) => (s.n_tracks, s.n_positions, c.m_max),
        None => (0, 0, 0),
    };
    for (s, c) in items {
        if s.n_tracks != n_tracks
            || s.n_positions != n_positions
            || c.n_tracks != n_tracks
            || c.n_positions != n_positions
            || c.m_max != m_max
        {
            return Err(TensorIoError::Format("inhomogeneous tensor shapes".into()));
        }
    }
    w.write_all(TENSOR_MAGIC)?;
    write_u32(w, TENSOR_VERSION)?;
    write_u32(w, items.len() as u32)?;
    write_u32(w, n_tracks as u32)?;
    write_u32(w, n_positions as u32)?;
    write_u32(w, m_max as u32)?;
    for (s, c) in items {
        let bytes: Vec<u8> = s.as_slice().iter().map(|&b| u8::from(b)).collect();
        w.write_all(&bytes)?;
        w.write_all(&c.pitch)?;
        w.write_all(&c.duration)?;
    }
    Ok(())
}

/// Reads back what [`write_tensors`] wrote.
pub fn read_tensors(r: &mut impl Read) -> Result<Vec<(StructureTensor, ContentTensor)>, TensorIoError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorIoError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != TENSOR_VERSION {
        return Err(TensorIoError::Format(format!("unsupported version {version}")));
    }
    let n_samples = read_u32(r)? as usize;
    let n_tracks = read_u32(r)? as usize;
    let n_positions = read_u32(r)? as usize;
    let m_max = read_u32(r)? as usize;
    let cells = n_tracks * n_positions;
    let mut items = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut s_bytes = vec![0u8; cells];
        r.read_exact(&mut s_bytes)?;
        let mut s = StructureTensor::zeros(n_tracks, n_positions);
        for (i, &b) in s_bytes.iter().enumerate() {
            if b > 1 {
                return Err(TensorIoError::Format(format!("non-boolean S byte {b}")));
            }
            if b == 1 {
                s.set(i / n_positions, i % n_positions, true);
            }
        }
        let mut c = ContentTensor::padded(n_tracks, n_positions, m_max, 0, 0);
        r.read_exact(&mut c.pitch)?;
        r.read_exact(&mut c.duration)?;
        items.push((s, c));
    }
    Ok(items)
}

pub fn write_tensor_file(
    path: &std::path::Path,
    items: &[(StructureTensor, ContentTensor)],
) -> Result<(), TensorIoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(&mut f, items)?;
    f.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &std::path::Path) -> Result<Vec<(StructureTensor, ContentTensor)>, TensorIoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensors(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_phrase_graph, M_MAX, PITCH_PAD};
    use crate::midi::{QNote, QuantizedScore};

    #[test]
    fn tensor_file_round_trip() {
        let mut q = QuantizedScore::empty(16, 4);
        q.tracks[0].push(QNote { pitch: 60, onset_step: 0, duration_steps: 4 });
        q.tracks[2].push(QNote { pitch: 40, onset_step: 8, duration_steps: 2 });
        let g = build_phrase_graph(&q);
        let items = vec![(g.s.clone(), g.c.clone()), (g.s, g.c)];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &items).unwrap();
        let back = read_tensors(&mut buf.as_slice()).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn empty_file_round_trips() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[]).unwrap();
        assert!(read_tensors(&mut buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let s = crate::graphs::StructureTensor::zeros(3, 64);
        let c = crate::graphs::ContentTensor::padded(3, 64, M_MAX, PITCH_PAD, 0);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[(s, c)]).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_tensors(&mut buf.as_slice()), Err(TensorIoError::Format(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let s = crate::graphs::StructureTensor::zeros(3, 64);
        let c = crate::graphs::ContentTensor::padded(3, 64, M_MAX, PITCH_PAD, 0);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[(s, c)]).unwrap();
        buf.truncate(buf.len() - 10);
        assert!(read_tensors(&mut buf.as_slice()).is_err());
    }
}
