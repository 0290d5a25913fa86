//! Artifact emission: binary grids, CSV files and run manifests.
//!
//! CSV dialect: comma-separated, `.` decimal point, one header row, LF
//! line endings. The binary grid layout is described in the README.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PolicyGrid, ValueGrid, YAxis};
use crate::model::ModelSpec;

/// FNV-1a over a byte string; used for config/model fingerprints.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Fingerprint of a model specification, stored in solved grids so that
/// policies cannot silently be simulated under a different model.
pub fn model_hash(model: &ModelSpec) -> u64 {
    fnv64(
        serde_json::to_string(model)
            .expect("model serializes")
            .as_bytes(),
    )
}

pub fn hash_of<T: Serialize>(value: &T) -> u64 {
    fnv64(
        serde_json::to_string(value)
            .expect("value serializes")
            .as_bytes(),
    )
}

const GRID_FORMAT_VERSION: u64 = 1;

/// Writes the solved grids as a single binary artifact.
///
/// Header (all little-endian 64-bit): format version, block count,
/// `n_t n_states n_y n_x`, bounds `t0 t1 x_min x_max y_min y_max`, the
/// model hash, the tax levels, then the stored slice times. Blocks follow
/// row-major (`t, state, y, x`): value, invest rate, output, and the
/// worst-case tax when present.
pub fn write_grid_binary(path: &Path, value: &ValueGrid, policy: &PolicyGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n_blocks = if policy.tax.is_some() { 4u64 } else { 3u64 };
    let g = &value.grid;
    let (y_min, y_max) = match &g.y_axis {
        Some(a) => (a.y_min, a.y_max),
        None => (0.0, 0.0),
    };
    for v in [
        GRID_FORMAT_VERSION,
        n_blocks,
        value.times.len() as u64,
        value.tax_states.len() as u64,
        g.n_y() as u64,
        g.n_x as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [
        value.times[0],
        *value.times.last().unwrap(),
        g.x_min,
        g.x_max,
        y_min,
        y_max,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&value.model_hash.to_le_bytes())?;
    for v in &value.tax_states {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &value.times {
        w.write_all(&v.to_le_bytes())?;
    }
    for block in [&value.values, &policy.invest_rate, &policy.output] {
        for v in block.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(tax) = &policy.tax {
        for v in tax.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads back a grid artifact written by [`write_grid_binary`].
///
/// The time-step count in the returned `GridSpec` reflects the stored
/// slices, not the original solver resolution.
pub fn read_grid_binary(path: &Path) -> Result<(ValueGrid, PolicyGrid)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let version = read_u64(&mut r)?;
    if version != GRID_FORMAT_VERSION {
        return Err(Error::Mismatch(format!(
            "unsupported grid format version {version}"
        )));
    }
    let n_blocks = read_u64(&mut r)?;
    let n_t = read_u64(&mut r)? as usize;
    let n_states = read_u64(&mut r)? as usize;
    let n_y = read_u64(&mut r)? as usize;
    let n_x = read_u64(&mut r)? as usize;
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let _t0 = read_f64(&mut r)?;
    let _t1 = read_f64(&mut r)?;
    let x_min = read_f64(&mut r)?;
    let x_max = read_f64(&mut r)?;
    let y_min = read_f64(&mut r)?;
    let y_max = read_f64(&mut r)?;
    let mut hash_buf = [0u8; 8];
    r.read_exact(&mut hash_buf)?;
    let model_hash = u64::from_le_bytes(hash_buf);
    let mut tax_states = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        tax_states.push(read_f64(&mut r)?);
    }
    let mut times = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        times.push(read_f64(&mut r)?);
    }
    let len = n_t * n_states * n_y * n_x;
    let read_block = |r: &mut BufReader<File>, len: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let values = read_block(&mut r, len)?;
    let invest_rate = read_block(&mut r, len)?;
    let output = read_block(&mut r, len)?;
    let tax = if n_blocks >= 4 {
        Some(read_block(&mut r, len)?)
    } else {
        None
    };
    let grid = GridSpec {
        x_min,
        x_max,
        n_x,
        y_axis: (n_y > 1).then_some(YAxis { y_min, y_max, n_y }),
        n_t: n_t.saturating_sub(1).max(1),
        theta_scheme: 1.0,
    };
    Ok((
        ValueGrid {
            grid,
            times,
            tax_states,
            values,
            model_hash,
        },
        PolicyGrid {
            invest_rate,
            output,
            tax,
        },
    ))
}

/// Writes the solved grid as CSV, one row per node:
/// `t,x,y,tau_state,value,gamma,q`. `time_stride` thins the time axis
/// (1 keeps every stored slice).
pub fn write_policy_csv(
    path: &Path,
    value: &ValueGrid,
    policy: &PolicyGrid,
    time_stride: usize,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let has_tax = policy.tax.is_some();
    if has_tax {
        writeln!(w, "t,x,y,tau_state,value,gamma,q,tau")?;
    } else {
        writeln!(w, "t,x,y,tau_state,value,gamma,q")?;
    }
    let xs = value.grid.x_values();
    let ys = value.grid.y_values();
    let sh = value.shape();
    let stride = time_stride.max(1);
    for ti in (0..sh.n_t).step_by(stride) {
        for s in 0..sh.n_states {
            for (k, &y) in ys.iter().enumerate() {
                for (j, &x) in xs.iter().enumerate() {
                    let idx = sh.idx(ti, s, k, j);
                    if has_tax {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{}",
                            value.times[ti],
                            x,
                            y,
                            s,
                            value.values[idx],
                            policy.invest_rate[idx],
                            policy.output[idx],
                            policy.tax.as_ref().unwrap()[idx]
                        )?;
                    } else {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{}",
                            value.times[ti],
                            x,
                            y,
                            s,
                            value.values[idx],
                            policy.invest_rate[idx],
                            policy.output[idx]
                        )?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes aligned named columns as CSV; every plotted figure gets its data
/// emitted through this sidecar writer.
pub fn write_series_csv(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(w, "{}", header.join(","))?;
    let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        let row: Vec<String> = columns
            .iter()
            .map(|(_, c)| c.get(i).map_or(String::new(), |v| v.to_string()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Run manifest: enough provenance to reproduce an artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub library_version: String,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profit_lipschitz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_lipschitz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_convergence: Option<f64>,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        let config_hash = format!("{:016x}", fnv64(config.to_string().as_bytes()));
        RunManifest {
            command: command.to_string(),
            config_hash,
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
            profit_lipschitz: None,
            value_lipschitz: None,
            control_cap: None,
            benchmark_slope: None,
            benchmark_level: None,
            grid_convergence: None,
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_ne!(fnv64(b"a"), fnv64(b"b"));
    }

    #[test]
    fn grid_binary_round_trip() {
        let grid = GridSpec {
            x_min: 0.0,
            x_max: 1.0,
            n_x: 4,
            y_axis: None,
            n_t: 2,
            theta_scheme: 1.0,
        };
        let len = 3 * 2 * 4; // times x states x nodes, single factor row
        let value = ValueGrid {
            grid,
            times: vec![0.0, 0.5, 1.0],
            tax_states: vec![0.0, 0.2],
            values: (0..len).map(|i| i as f64 * 0.25).collect(),
            model_hash: 42,
        };
        let policy = PolicyGrid {
            invest_rate: (0..len).map(|i| i as f64).collect(),
            output: vec![4.0; len],
            tax: None,
        };
        let dir = std::env::temp_dir().join(format!("abatement-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.bin");
        write_grid_binary(&path, &value, &policy).unwrap();
        let (v2, p2) = read_grid_binary(&path).unwrap();
        assert_eq!(v2.values, value.values);
        assert_eq!(v2.times, value.times);
        assert_eq!(v2.tax_states, value.tax_states);
        assert_eq!(v2.model_hash, 42);
        assert_eq!(p2.invest_rate, policy.invest_rate);
        assert_eq!(p2.output, policy.output);
        assert!(p2.tax.is_none());
        std::fs::remove_dir_all(&dir).ok();
    }
}
