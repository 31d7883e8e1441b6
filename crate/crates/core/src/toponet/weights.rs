//! Weights file: one line of compact JSON manifest, a `\n`, then every
//! layer's kernel followed by its bias as little-endian `f32`, in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkParams, LAYER_PLAN};
use crate::error::{Error, Result};
use crate::nn::ConvLayer;

const FORMAT: &str = "toponet-weights";
const VERSION: u32 = 1;
const DTYPE: &str = "f32le";
/// Manifests larger than this are rejected before parsing.
const MAX_MANIFEST: usize = 1 << 16;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    kernel: [usize; 4],
    bias: [usize; 1],
}

fn expected_layers() -> Vec<LayerEntry> {
    LAYER_PLAN
        .iter()
        .map(|&(name, i, o)| LayerEntry {
            name: name.into(),
            kernel: [o, i, 3, 3],
            bias: [o],
        })
        .collect()
}

pub fn weights_to_bytes(params: &NetworkParams) -> Vec<u8> {
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: DTYPE.into(),
        layers: expected_layers(),
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    out.reserve(4 * params.num_params());
    for v in params.flatten() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn load_weights_bytes(bytes: &[u8]) -> Result<NetworkParams> {
    let end = bytes
        .iter()
        .take(MAX_MANIFEST)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(0, "no manifest line terminator"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..end])
        .map_err(|e| Error::format(0, format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::format(0, format!("format '{}' is not '{FORMAT}'", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::format(
            0,
            format!("unsupported version {}, expected {VERSION}", manifest.version),
        ));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::format(0, format!("dtype '{}' is not '{DTYPE}'", manifest.dtype)));
    }
    let expected = expected_layers();
    if manifest.layers.len() != expected.len() {
        return Err(Error::format(
            0,
            format!("manifest lists {} layers, network has {}", manifest.layers.len(), expected.len()),
        ));
    }
    for (got, want) in manifest.layers.iter().zip(&expected) {
        if got != want {
            return Err(Error::format(
                0,
                format!(
                    "manifest layer {} {:?}/{:?} does not match expected {} {:?}/{:?}",
                    got.name, got.kernel, got.bias, want.name, want.kernel, want.bias
                ),
            ));
        }
    }
    let body = end + 1;
    let payload = &bytes[body..];
    let n: usize = expected.iter().map(|l| l.kernel.iter().product::<usize>() + l.bias[0]).sum();
    if payload.len() != 4 * n {
        return Err(Error::format(
            body as u64,
            format!("payload has {} bytes, expected {}", payload.len(), 4 * n),
        ));
    }
    let mut vals = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut layers = Vec::with_capacity(expected.len());
    for (li, e) in expected.iter().enumerate() {
        let w: Vec<f64> = vals.by_ref().take(e.kernel.iter().product()).collect();
        let b: Vec<f64> = vals.by_ref().take(e.bias[0]).collect();
        if let Some(v) = w.iter().chain(&b).find(|v| !v.is_finite()) {
            return Err(Error::format(body as u64, format!("layer {li} ({}) holds non-finite value {v}", e.name)));
        }
        layers.push(ConvLayer::new(e.kernel[1], e.kernel[0], w, b)?);
    }
    NetworkParams::from_layers(layers)
}

pub fn save_weights(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, weights_to_bytes(params)).map_err(|e| Error::file(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetworkParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    load_weights_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toponet::build_network;

    fn to_f32_precision(p: &NetworkParams) -> NetworkParams {
        let mut q = p.clone();
        let flat: Vec<f64> = p.flatten().iter().map(|&v| v as f32 as f64).collect();
        q.assign_flat(&flat).unwrap();
        q
    }

    #[test]
    fn round_trip() {
        let p = build_network(9);
        let bytes = weights_to_bytes(&p);
        let q = load_weights_bytes(&bytes).unwrap();
        assert_eq!(q, to_f32_precision(&p));
        assert_eq!(weights_to_bytes(&q), bytes);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let bytes = weights_to_bytes(&build_network(0));
        let err = load_weights_bytes(&bytes[..bytes.len() - 5]).unwrap_err().to_string();
        let full = 4 * crate::toponet::PARAM_COUNT;
        assert!(err.contains(&format!("{} bytes, expected {full}", full - 5)), "{err}");
    }

    #[test]
    fn shape_mismatch_is_format_error() {
        let bytes = weights_to_bytes(&build_network(0));
        let text = String::from_utf8_lossy(&bytes[..200]).into_owned();
        let bad = text.replacen("[16,2,3,3]", "[16,3,3,3]", 1);
        assert_ne!(bad, text);
        let mut edited = bad.into_bytes();
        edited.extend_from_slice(&bytes[200..]);
        let err = load_weights_bytes(&edited).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(load_weights_bytes(b"").is_err());
        assert!(load_weights_bytes(b"{}\n").is_err());
        assert!(load_weights_bytes(&[0xff; 64]).is_err());
    }
}
