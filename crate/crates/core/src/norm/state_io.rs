//! `NKT1` binary container for layer state and regression fixtures.
//!
//! ```text
//! "NKT1" | header length (u32 LE) | JSON header | f64 LE payload
//! ```
//!
//! The JSON header holds a format version, a string-to-string metadata map
//! and a field table; each field names a slice of the payload by offset and
//! length (in f64 values) plus its shape.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::running::{LayerState, Mode, RunningWhitener};
use super::NormError;
use crate::linalg::Mat;

pub const MAGIC: &[u8; 4] = b"NKT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn vector(name: &str, data: &[f64]) -> Self {
        TensorRecord { name: name.into(), shape: vec![data.len()], data: data.to_vec() }
    }

    pub fn matrix(name: &str, m: &Mat) -> Self {
        TensorRecord { name: name.into(), shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }

    pub fn to_mat(&self) -> Result<Mat, NormError> {
        match self.shape[..] {
            [r, c] => Ok(Mat::from_vec(r, c, self.data.clone())?),
            _ => Err(NormError::Format(format!("field '{}' has shape {:?}, expected 2-D", self.name, self.shape))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: BTreeMap<String, String>,
    fields: Vec<FieldEntry>,
}

pub fn write_nkt1<W: Write>(
    mut w: W,
    meta: &BTreeMap<String, String>,
    records: &[TensorRecord],
) -> Result<(), NormError> {
    let mut fields = Vec::with_capacity(records.len());
    let mut offset = 0;
    for r in records {
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(NormError::ShapeMismatch(format!(
                "field '{}' has shape {:?} but {} values",
                r.name,
                r.shape,
                r.data.len()
            )));
        }
        fields.push(FieldEntry { name: r.name.clone(), shape: r.shape.clone(), offset, len: r.data.len() });
        offset += r.data.len();
    }
    let header = serde_json::to_vec(&Header { version: FORMAT_VERSION, meta: meta.clone(), fields })
        .map_err(|e| NormError::Format(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| NormError::Format("header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    for r in records {
        for v in &r.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_nkt1<R: Read>(mut r: R) -> Result<(BTreeMap<String, String>, Vec<TensorRecord>), NormError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NormError::Format(format!("bad magic {magic:?}, expected NKT1")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| NormError::Format(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(NormError::Format(format!("unsupported version {}", header.version)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(NormError::Format("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    let mut records = Vec::with_capacity(header.fields.len());
    for f in header.fields {
        let end = f.offset.checked_add(f.len).filter(|&e| e <= values.len()).ok_or_else(|| {
            NormError::Format(format!("field '{}' runs past the end of the payload", f.name))
        })?;
        if f.shape.iter().product::<usize>() != f.len {
            return Err(NormError::Format(format!("field '{}' shape {:?} does not match length {}", f.name, f.shape, f.len)));
        }
        records.push(TensorRecord { name: f.name, shape: f.shape, data: values[f.offset..end].to_vec() });
    }
    Ok((header.meta, records))
}

pub fn encode_layer_state(state: &LayerState) -> Result<Vec<u8>, NormError> {
    let mut meta = BTreeMap::new();
    meta.insert("object".into(), "layer_state".into());
    meta.insert(
        "mode".into(),
        match state.mode {
            Mode::Train => "train",
            Mode::Eval => "eval",
        }
        .into(),
    );
    meta.insert("updates".into(), state.updates.to_string());
    let mut records = vec![
        TensorRecord::vector("gamma", &state.gamma),
        TensorRecord::vector("beta", &state.beta),
        TensorRecord::vector("running_mean", &state.running_mean),
        TensorRecord::vector("momentum", &[state.momentum]),
    ];
    let kind = match &state.running_whitener {
        RunningWhitener::None => "none",
        RunningWhitener::InvStd(v) => {
            records.push(TensorRecord::vector("running_whitener", v));
            "inv_std"
        }
        RunningWhitener::Whitener(m) => {
            records.push(TensorRecord::matrix("running_whitener", m));
            "whitener"
        }
        RunningWhitener::Covariance(m) => {
            records.push(TensorRecord::matrix("running_whitener", m));
            "covariance"
        }
    };
    meta.insert("running_whitener".into(), kind.into());
    let mut out = Vec::new();
    write_nkt1(&mut out, &meta, &records)?;
    Ok(out)
}

pub fn decode_layer_state(bytes: &[u8]) -> Result<LayerState, NormError> {
    let (meta, records) = read_nkt1(bytes)?;
    let get_meta = |k: &str| meta.get(k).ok_or_else(|| NormError::Format(format!("missing metadata '{k}'")));
    let field = |k: &str| {
        records.iter().find(|r| r.name == k).ok_or_else(|| NormError::Format(format!("missing field '{k}'")))
    };
    if get_meta("object")? != "layer_state" {
        return Err(NormError::Format("file does not hold a layer state".into()));
    }
    let mode = match get_meta("mode")?.as_str() {
        "train" => Mode::Train,
        "eval" => Mode::Eval,
        other => return Err(NormError::Format(format!("unknown mode '{other}'"))),
    };
    let updates = get_meta("updates")?.parse().map_err(|_| NormError::Format("bad update count".into()))?;
    let running_whitener = match get_meta("running_whitener")?.as_str() {
        "none" => RunningWhitener::None,
        "inv_std" => RunningWhitener::InvStd(field("running_whitener")?.data.clone()),
        "whitener" => RunningWhitener::Whitener(field("running_whitener")?.to_mat()?),
        "covariance" => RunningWhitener::Covariance(field("running_whitener")?.to_mat()?),
        other => return Err(NormError::Format(format!("unknown running statistic '{other}'"))),
    };
    let momentum = *field("momentum")?.data.first().ok_or_else(|| NormError::Format("empty momentum".into()))?;
    Ok(LayerState {
        gamma: field("gamma")?.data.clone(),
        beta: field("beta")?.data.clone(),
        running_mean: field("running_mean")?.data.clone(),
        running_whitener,
        momentum,
        mode,
        updates,
    })
}

pub fn save_layer_state(path: impl AsRef<Path>, state: &LayerState) -> Result<(), NormError> {
    fs::write(path, encode_layer_state(state)?)?;
    Ok(())
}

pub fn load_layer_state(path: impl AsRef<Path>) -> Result<LayerState, NormError> {
    decode_layer_state(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::running::BwStatsMode;

    #[test]
    fn layer_state_round_trips_bit_exactly() {
        let mut s = LayerState::batch_whitening(3, BwStatsMode::Covariance);
        s.gamma = vec![0.1, -2.5, 1.0 / 3.0];
        s.running_mean = vec![f64::MIN_POSITIVE, 1e300, -0.0];
        s.updates = 17;
        s.mode = Mode::Eval;
        let back = decode_layer_state(&encode_layer_state(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.running_mean[2].to_bits(), (-0.0f64).to_bits());

        let bn = LayerState::batch_norm(2);
        assert_eq!(decode_layer_state(&encode_layer_state(&bn).unwrap()).unwrap(), bn);
        let none = LayerState::stateless(2);
        assert_eq!(decode_layer_state(&encode_layer_state(&none).unwrap()).unwrap(), none);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_layer_state(&LayerState::batch_norm(2)).unwrap();
        assert_eq!(&bytes[..4], b"NKT1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(header["version"], 1);
        // gamma, beta, mean: 2 each; momentum: 1; inv std: 2
        assert_eq!(bytes.len() - 8 - len, 9 * 8);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode_layer_state(&LayerState::batch_norm(2)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_layer_state(&bad), Err(NormError::Format(_))));
        assert!(decode_layer_state(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_layer_state(&bytes[..6]).is_err());
        let bad_record = TensorRecord { name: "x".into(), shape: vec![3], data: vec![1.0] };
        assert!(write_nkt1(Vec::new(), &BTreeMap::new(), &[bad_record]).is_err());
    }
}
