//! VTXG on-disk grid format.
//!
//! ```text
//! "VTXG" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | payload
//! ```
//!
//! The payload is `T * V * H * W` little-endian `f32` values in `[T, V, H, W]`
//! order, holding standardized fields.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{GridError, GridSample, GridSeries, NormStats, Split, VariableRegistry};

pub const MAGIC: &[u8; 4] = b"VTXG";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub steps: usize,
    pub variables: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Dims,
    registry: VariableRegistry,
    stats: NormStats,
    latitudes: Vec<f64>,
    timestamps: Vec<i64>,
    split: Split,
}

/// Registry, statistics and latitudes without the payload, for external tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub registry: VariableRegistry,
    pub units: Vec<String>,
    pub stats: NormStats,
    pub latitudes: Vec<f64>,
    pub split: Split,
}

fn io_err(path: &Path, e: std::io::Error) -> GridError {
    GridError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn encode(series: &GridSeries) -> Result<Vec<u8>, GridError> {
    series.validate()?;
    let (v, h, w) = series.dims();
    let header = Header {
        dims: Dims { steps: series.len(), variables: v, height: h, width: w },
        registry: series.registry.clone(),
        stats: series.stats.clone(),
        latitudes: series.latitudes.clone(),
        timestamps: series.samples.iter().map(|s| s.timestamp).collect(),
        split: series.split,
    };
    let json = serde_json::to_vec(&header).map_err(|e| GridError::HeaderCorrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(9 + json.len() + series.len() * v * h * w * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in &series.samples {
        for x in s.data.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<GridSeries, GridError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(GridError::BadMagic { found: bytes.iter().take(4).copied().collect() });
    }
    let version = *bytes.get(4).ok_or_else(|| GridError::HeaderCorrupt("missing version byte".into()))?;
    if version != VERSION {
        return Err(GridError::VersionMismatch { found: version, expected: VERSION });
    }
    let len_bytes: [u8; 4] = bytes
        .get(5..9)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| GridError::HeaderCorrupt("header_len: missing".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(9..9 + header_len)
        .ok_or_else(|| GridError::HeaderCorrupt(format!("header_len: declares {header_len} bytes past end of file")))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| GridError::HeaderCorrupt(e.to_string()))?;
    let d = header.dims;
    if header.registry.len() != d.variables {
        return Err(GridError::HeaderCorrupt(format!(
            "registry: {} entries for dims.variables = {}",
            header.registry.len(),
            d.variables
        )));
    }
    if header.timestamps.len() != d.steps {
        return Err(GridError::HeaderCorrupt(format!(
            "timestamps: {} entries for dims.steps = {}",
            header.timestamps.len(),
            d.steps
        )));
    }
    if header.latitudes.len() != d.height {
        return Err(GridError::HeaderCorrupt(format!(
            "latitudes: {} entries for dims.height = {}",
            header.latitudes.len(),
            d.height
        )));
    }
    if header.stats.mean.len() != d.variables || header.stats.std.len() != d.variables {
        return Err(GridError::HeaderCorrupt(format!("stats: expected {} means and stds", d.variables)));
    }
    let per_step = d.variables * d.height * d.width;
    let payload = &bytes[9 + header_len..];
    let expected = d.steps * per_step * 4;
    if payload.len() < expected {
        return Err(GridError::PayloadTruncated { expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(GridError::HeaderCorrupt(format!(
            "dims: payload has {} bytes, dims imply {expected}",
            payload.len()
        )));
    }
    let samples = payload
        .chunks_exact(per_step * 4)
        .zip(&header.timestamps)
        .map(|(chunk, &timestamp)| {
            let values: Vec<f32> =
                chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            GridSample {
                data: Array3::from_shape_vec((d.variables, d.height, d.width), values).expect("sized chunk"),
                timestamp,
            }
        })
        .collect();
    GridSeries::new(samples, header.registry, header.stats, header.latitudes, header.split)
}

pub fn write_grid(path: impl AsRef<Path>, series: &GridSeries) -> Result<(), GridError> {
    let path = path.as_ref();
    let bytes = encode(series)?;
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridSeries, GridError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

pub fn sidecar(series: &GridSeries) -> Sidecar {
    Sidecar {
        registry: series.registry.clone(),
        units: series.registry.entries().iter().map(|e| e.units().to_string()).collect(),
        stats: series.stats.clone(),
        latitudes: series.latitudes.clone(),
        split: series.split,
    }
}

pub fn write_sidecar(path: impl AsRef<Path>, series: &GridSeries) -> Result<(), GridError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&sidecar(series)).map_err(|e| GridError::HeaderCorrupt(e.to_string()))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::griddata::{equal_angle_latitudes, GridSample};
    use proptest::prelude::*;

    fn series(v: usize, h: usize, w: usize, t: usize, values: &[f32]) -> GridSeries {
        let registry = VariableRegistry::synthetic(v).unwrap();
        let per = v * h * w;
        let samples = (0..t)
            .map(|k| GridSample {
                data: Array3::from_shape_fn((v, h, w), |(a, b, c)| {
                    values[(k * per + (a * h + b) * w + c) % values.len()]
                }),
                timestamp: 100 + 6 * k as i64,
            })
            .collect();
        let stats = NormStats { mean: (0..v).map(|i| i as f64 * 0.1).collect(), std: vec![1.5; v] };
        GridSeries::new(samples, registry, stats, equal_angle_latitudes(h), Split { train: t / 2, val: 0 }).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            v in 1usize..5, h in 1usize..6, w in 1usize..6, t in 1usize..4,
            values in prop::collection::vec(-1e6f32..1e6, 1..64),
        ) {
            let s = series(v, h, w, t, &values);
            let back = decode(&encode(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }

    #[test]
    fn weatherbench_registry_survives_header() {
        let registry = VariableRegistry::weatherbench();
        let v = registry.len();
        let mut s = series(v, 2, 2, 2, &[0.5, -0.25, 1.0]);
        s.registry = registry.clone();
        let back = decode(&encode(&s).unwrap()).unwrap();
        assert_eq!(back.registry, registry);
        assert_eq!(back.registry.get(7).unwrap().key(), "z500");
    }

    #[test]
    fn error_cases() {
        let s = series(2, 2, 3, 2, &[1.0, 2.0]);
        let bytes = encode(&s).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(GridError::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad), Err(GridError::VersionMismatch { found: 9, expected: VERSION }));

        let mut bad = bytes.clone();
        bad[12] = b'#';
        assert!(matches!(decode(&bad), Err(GridError::HeaderCorrupt(_))));

        let truncated = &bytes[..bytes.len() - 5];
        assert_eq!(
            decode(truncated),
            Err(GridError::PayloadTruncated { expected: 2 * 12 * 4, actual: 2 * 12 * 4 - 5 })
        );
    }

    #[test]
    fn file_round_trip_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let s = series(3, 4, 4, 3, &[0.1, 0.2, 0.3, -7.0]);
        let path = dir.path().join("x.vtxg");
        write_grid(&path, &s).unwrap();
        assert_eq!(read_grid(&path).unwrap(), s);
        let side = dir.path().join("x.json");
        write_sidecar(&side, &s).unwrap();
        let parsed: Sidecar = serde_json::from_str(&fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(parsed, sidecar(&s));
        assert!(matches!(read_grid(dir.path().join("missing.vtxg")), Err(GridError::Io { .. })));
    }
}
