//! Binary model format.
//!
//! ```text
//! magic "TNGM" | version u32 | S u32 | N u32 | B u32 | C u32
//! per layer (input, block fc1/fc2..., output): weights in×out row-major, then bias
//! ```
//!
//! All integers and floats little-endian; floats are `f32`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Dense, ModelConfig, ModelError, ResidualMlp};

pub const MODEL_MAGIC: [u8; 4] = *b"TNGM";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<W: Write>(model: &ResidualMlp<f32>, mut sink: W) -> Result<(), ModelError> {
    let c = model.config();
    sink.write_all(&MODEL_MAGIC)?;
    for v in [
        MODEL_VERSION,
        c.input_dim as u32,
        c.neurons as u32,
        c.blocks as u32,
        c.classes as u32,
    ] {
        sink.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(model.param_count() * 4);
    for v in model.parameters() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

fn read_exact<R: Read>(src: &mut R, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ModelError::Format(format!("truncated {what}")),
        _ => ModelError::Io(e),
    })
}

fn read_u32<R: Read>(src: &mut R, what: &str) -> Result<u32, ModelError> {
    let mut b = [0; 4];
    read_exact(src, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_model<R: Read>(mut source: R) -> Result<ResidualMlp<f32>, ModelError> {
    let mut magic = [0; 4];
    read_exact(&mut source, &mut magic, "header")?;
    if magic != MODEL_MAGIC {
        return Err(ModelError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut source, "header")?;
    if version != MODEL_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u32(&mut source, "header")? as usize;
    }
    let config = ModelConfig {
        input_dim: dims[0],
        neurons: dims[1],
        blocks: dims[2],
        classes: dims[3],
    };
    config
        .validate()
        .map_err(|e| ModelError::Format(e.to_string()))?;
    let mut layers = Vec::with_capacity(2 + 2 * config.blocks);
    for (i, o) in config.layer_shapes() {
        let mut raw = vec![0u8; (i * o + o) * 4];
        read_exact(&mut source, &mut raw, "weights")?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let w = Array2::from_shape_vec((i, o), vals[..i * o].to_vec())
            .expect("length computed from shape");
        let b = Array1::from(vals[i * o..].to_vec());
        layers.push(Dense { w, b });
    }
    let mut extra = [0u8; 1];
    if source.read(&mut extra)? != 0 {
        return Err(ModelError::Format("trailing bytes after weights".into()));
    }
    ResidualMlp::from_layers(config, layers)
}
