//! Versioned binary checkpoints: magic, version, the full
//! [`GraphSpec`] as a JSON blob, the training step counter, then the
//! named parameter tensors (f64, little-endian).

use super::params::{Param, ParamSet};
use super::spec::GraphSpec;
use super::vae::GraphVae;
use super::ModelError;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GVAECKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: GraphSpec,
    pub params: ParamSet,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_vae(vae: &GraphVae, step: u64) -> Checkpoint {
        Checkpoint { spec: vae.spec.clone(), params: vae.params.clone(), step }
    }

    pub fn into_vae(self) -> Result<GraphVae, ModelError> {
        GraphVae::from_parts(self.spec, self.params)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let spec_json = serde_json::to_vec(&self.spec)
            .map_err(|e| ModelError::Format(format!("spec serialization: {e}")))?;
        w.write_all(&(spec_json.len() as u32).to_le_bytes())?;
        w.write_all(&spec_json)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.params.entries.len() as u32).to_le_bytes())?;
        for p in &self.params.entries {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[p.shape.len() as u8])?;
            for &d in &p.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &x in &p.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Checkpoint, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        let spec_len = read_u32(r)? as usize;
        let mut spec_json = vec![0u8; spec_len];
        r.read_exact(&mut spec_json)?;
        let spec: GraphSpec = serde_json::from_slice(&spec_json)
            .map_err(|e| ModelError::Format(format!("spec deserialization: {e}")))?;
        let mut step_bytes = [0u8; 8];
        r.read_exact(&mut step_bytes)?;
        let step = u64::from_le_bytes(step_bytes);
        let n_params = read_u32(r)? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n_params {
            let mut len_bytes = [0u8; 2];
            r.read_exact(&mut len_bytes)?;
            let mut name = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| ModelError::Format("non-UTF8 parameter name".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0f64; numel];
            let mut buf = [0u8; 8];
            for x in &mut data {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            params.entries.push(Param { name, shape, data });
        }
        Ok(Checkpoint { spec, params, step })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Checkpoint::read(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::ModelKind;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let vae = GraphVae::new(GraphSpec::tiny(ModelKind::Song), 77).unwrap();
        let ckpt = Checkpoint::from_vae(&vae, 1234);
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        let restored = back.into_vae().unwrap();
        assert_eq!(restored.params, vae.params);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let vae = GraphVae::new(GraphSpec::tiny(ModelKind::Song), 1).unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_vae(&vae, 0).write(&mut buf).unwrap();
        buf[3] = b'X';
        assert!(matches!(Checkpoint::read(&mut buf.as_slice()), Err(ModelError::Format(_))));
        let short = &buf[..buf.len() / 2];
        assert!(Checkpoint::read(&mut &short[..]).is_err());
    }

    #[test]
    fn spec_mismatch_is_detected() {
        let song = GraphVae::new(GraphSpec::tiny(ModelKind::Song), 1).unwrap();
        let phrase_spec = GraphSpec::tiny(ModelKind::Phrase);
        assert!(matches!(
            GraphVae::from_parts(phrase_spec, song.params),
            Err(ModelError::SpecMismatch(_))
        ));
    }
}
