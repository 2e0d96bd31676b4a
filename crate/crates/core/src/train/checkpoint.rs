//! Trainer state format: magic `MPAT`, version, the resolved config as
//! JSON, the step counter, the embedded model checkpoints, and the Adam
//! moments per model. Randomness needs no serialization: streams are
//! keyed by (seed, step, role).

use std::io::{Read, Write};
use std::path::Path;

use super::{AdamState, ModelSet, TrainConfig, TrainError, TrainState};
use crate::model::{load_model, save_model, ModelGraph};

const MAGIC: &[u8; 4] = b"MPAT";
const VERSION: u32 = 1;

pub fn save_state(state: &TrainState, mut w: impl Write) -> Result<(), TrainError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&state.config)
        .map_err(|e| TrainError::Checkpoint(format!("config serialization: {e}")))?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&state.step.to_le_bytes())?;
    w.write_all(&[state.models.aux.is_some() as u8])?;
    write_model(&mut w, &state.models.main)?;
    if let Some(aux) = &state.models.aux {
        write_model(&mut w, aux)?;
    }
    write_adam(&mut w, &state.adam_main)?;
    if let Some(adam) = &state.adam_aux {
        write_adam(&mut w, adam)?;
    }
    Ok(())
}

pub fn load_state(mut r: impl Read) -> Result<TrainState, TrainError> {
    let mut magic = [0u8; 4];
    read_all(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let config_len = read_u32(&mut r, "config length")? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_all(&mut r, &mut config_bytes, "config")?;
    let config: TrainConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
    let step = read_u64(&mut r, "step")?;
    let mut has_aux = [0u8; 1];
    read_all(&mut r, &mut has_aux, "aux flag")?;
    let main = read_model(&mut r)?;
    let aux = if has_aux[0] != 0 {
        Some(read_model(&mut r)?)
    } else {
        None
    };
    let adam_main = read_adam(&mut r)?;
    let adam_aux = if has_aux[0] != 0 {
        Some(read_adam(&mut r)?)
    } else {
        None
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(TrainError::Checkpoint("trailing bytes".into()));
    }
    Ok(TrainState {
        config,
        step,
        models: ModelSet { main, aux },
        adam_main,
        adam_aux,
    })
}

pub fn save_state_to(state: &TrainState, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_state(state, &mut file)
}

pub fn load_state_from(path: impl AsRef<Path>) -> Result<TrainState, TrainError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    load_state(file)
}

fn write_model(w: &mut impl Write, model: &ModelGraph) -> Result<(), TrainError> {
    let mut blob = Vec::new();
    save_model(model, &mut blob)?;
    w.write_all(&(blob.len() as u64).to_le_bytes())?;
    w.write_all(&blob)?;
    Ok(())
}

fn read_model(r: &mut impl Read) -> Result<ModelGraph, TrainError> {
    let len = read_u64(r, "model blob length")? as usize;
    let mut blob = vec![0u8; len];
    read_all(r, &mut blob, "model blob")?;
    Ok(load_model(blob.as_slice())?)
}

fn write_adam(w: &mut impl Write, adam: &AdamState) -> Result<(), TrainError> {
    w.write_all(&adam.t.to_le_bytes())?;
    w.write_all(&(adam.m.len() as u32).to_le_bytes())?;
    for (m, v) in adam.m.iter().zip(adam.v.iter()) {
        w.write_all(&(m.len() as u64).to_le_bytes())?;
        for &x in m {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_adam(r: &mut impl Read) -> Result<AdamState, TrainError> {
    let t = read_u64(r, "adam step counter")?;
    let n = read_u32(r, "adam tensor count")? as usize;
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        let len = read_u64(r, "adam tensor length")? as usize;
        let mut mi = Vec::with_capacity(len);
        for _ in 0..len {
            read_all(r, &mut buf, "adam first moments")?;
            mi.push(f64::from_le_bytes(buf));
        }
        let mut vi = Vec::with_capacity(len);
        for _ in 0..len {
            read_all(r, &mut buf, "adam second moments")?;
            vi.push(f64::from_le_bytes(buf));
        }
        m.push(mi);
        v.push(vi);
    }
    Ok(AdamState { t, m, v })
}

fn read_all(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), TrainError> {
    r.read_exact(buf)
        .map_err(|_| TrainError::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, TrainError> {
    let mut buf = [0u8; 4];
    read_all(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, TrainError> {
    let mut buf = [0u8; 8];
    read_all(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}
