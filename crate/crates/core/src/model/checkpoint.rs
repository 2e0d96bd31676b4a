//! Model checkpoint format: magic `MPAC`, version, the config, then
//! every parameter tensor in [`ModelGraph::visit`] order as shape-tagged
//! little-endian f64 data.

use std::io::{Read, Write};

use super::{Activation, HeadKind, ModelConfig, ModelError, ModelGraph};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MPAC";
const VERSION: u32 = 1;

pub fn save_model(model: &ModelGraph, mut w: impl Write) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        model.config.layers,
        model.config.heads,
        model.config.hidden,
        model.config.ffn_dim,
        model.config.vocab,
        model.config.max_len,
        model.config.guided_layers,
        model.config.guided_heads,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&[match model.config.activation {
        Activation::Relu => 0u8,
        Activation::Gelu => 1u8,
    }])?;
    w.write_all(&[match model.head {
        HeadKind::Generator => 0u8,
        HeadKind::Discriminator => 1u8,
    }])?;
    let mut err = None;
    model.visit(|_, t| {
        if err.is_some() {
            return;
        }
        if let Err(e) = write_tensor(&mut w, t) {
            err = Some(e);
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn load_model(mut r: impl Read) -> Result<ModelGraph, ModelError> {
    let mut magic = [0u8; 4];
    read_all(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ModelError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(ModelError::Format(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let layers = read_u32(&mut r, "layers")? as usize;
    let heads = read_u32(&mut r, "heads")? as usize;
    let hidden = read_u32(&mut r, "hidden")? as usize;
    let ffn_dim = read_u32(&mut r, "ffn_dim")? as usize;
    let vocab = read_u32(&mut r, "vocab")? as usize;
    let max_len = read_u32(&mut r, "max_len")? as usize;
    let guided_layers = read_u32(&mut r, "guided_layers")? as usize;
    let guided_heads = read_u32(&mut r, "guided_heads")? as usize;
    let mut tag = [0u8; 2];
    read_all(&mut r, &mut tag, "activation/head tags")?;
    let activation = match tag[0] {
        0 => Activation::Relu,
        1 => Activation::Gelu,
        other => return Err(ModelError::Format(format!("unknown activation tag {other}"))),
    };
    let head = match tag[1] {
        0 => HeadKind::Generator,
        1 => HeadKind::Discriminator,
        other => return Err(ModelError::Format(format!("unknown head tag {other}"))),
    };
    let config = ModelConfig {
        layers,
        heads,
        hidden,
        ffn_dim,
        vocab,
        max_len,
        guided_layers,
        guided_heads,
        activation,
    };
    config.validate()?;

    // read into a freshly shaped graph, validating each tensor's shape
    let mut model = ModelGraph::init(config, head, 0)?;
    let mut err = None;
    model.visit_mut(|name, t| {
        if err.is_some() {
            return;
        }
        match read_tensor(&mut r, t.rows(), t.cols(), name) {
            Ok(read) => *t = read,
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok(model)
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<(), ModelError> {
    w.write_all(&(t.rows() as u32).to_le_bytes())?;
    w.write_all(&(t.cols() as u32).to_le_bytes())?;
    for &v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Tensor, ModelError> {
    let got_rows = read_u32(r, name)? as usize;
    let got_cols = read_u32(r, name)? as usize;
    if (got_rows, got_cols) != (rows, cols) {
        return Err(ModelError::Format(format!(
            "tensor {name}: shape [{got_rows}, {got_cols}] does not match expected [{rows}, {cols}]"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        read_all(r, &mut buf, name)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(Tensor::new(rows, cols, data))
}

fn read_all(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    r.read_exact(buf)
        .map_err(|_| ModelError::Format(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    read_all(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}
