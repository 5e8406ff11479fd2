//! Binary weight checkpoint. All fields are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PRDCKPT\0"
//!      8     4  version (u32, currently 1)
//!     12     4  cell kind (u32, 0 = lstm, 1 = gru)
//!     16     4  hidden units n (u32)
//!     20     4  input dim m (u32)
//!     24     4  window length (u32)
//!     28     8  normalization scale (f64)
//!     36     8  parameter count (u64)
//!     44   8*P  parameters (f64) in flat-vector order:
//!               kernel, recurrent, bias, dense, dense bias
//! ```

use std::io::{Read, Write};

use super::{
    param_count, CellKind, RecurrentError, RecurrentSpec, RecurrentWeights, TrainedNetwork,
};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> RecurrentError {
    RecurrentError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut out: W, net: &TrainedNetwork) -> Result<(), RecurrentError> {
    let spec = net.weights.spec;
    let mut buf = Vec::with_capacity(44 + 8 * net.weights.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cell: u32 = match spec.cell {
        CellKind::Lstm => 0,
        CellKind::Gru => 1,
    };
    buf.extend_from_slice(&cell.to_le_bytes());
    for v in [spec.hidden_units, spec.input_dim, spec.window_length] {
        let v = u32::try_from(v).map_err(|_| bad("dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&net.scale.to_le_bytes());
    buf.extend_from_slice(&(net.weights.params.len() as u64).to_le_bytes());
    for p in &net.weights.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<TrainedNetwork, RecurrentError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 44 {
        return Err(bad("file too short for header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cell = match u32_at(12) {
        0 => CellKind::Lstm,
        1 => CellKind::Gru,
        other => return Err(bad(format!("unknown cell kind {other}"))),
    };
    let spec = RecurrentSpec {
        cell,
        hidden_units: u32_at(16) as usize,
        input_dim: u32_at(20) as usize,
        window_length: u32_at(24) as usize,
    };
    spec.validate()?;
    let scale = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(bad(format!("invalid normalization scale {scale}")));
    }
    let count = u64::from_le_bytes(bytes[36..44].try_into().unwrap()) as usize;
    if count != param_count(&spec) {
        return Err(bad(format!(
            "parameter count {count} does not match spec ({})",
            param_count(&spec)
        )));
    }
    let body = &bytes[44..];
    if body.len() != 8 * count {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            8 * count,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let weights = RecurrentWeights { spec, params };
    if !weights.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(TrainedNetwork { weights, scale })
}
