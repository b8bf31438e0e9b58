//! Run artifacts: the binary parameter-vector container, the per-round CSV,
//! checkpoints, and the tidy plot-data export.
//!
//! Every format is deterministic: map iteration is ordered, floats are
//! rendered with Rust's shortest round-trip formatting, and schema versions
//! live in leading comment rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::ClientId;
use crate::data::ClientShards;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::server::{RoundReport, ServerState};

/// Magic bytes of the parameter-vector container.
pub const FCAP_MAGIC: &[u8; 4] = b"FCAP";
/// Container format version.
pub const FCAP_VERSION: u8 = 1;
/// Schema tag of the per-round CSV.
pub const ROUNDS_SCHEMA: &str = "fedcap-rounds-v1";
/// Schema tag of the tidy plot-data CSV.
pub const PLOTDATA_SCHEMA: &str = "fedcap-plotdata-v1";

/// Writes a parameter vector: magic, version byte, u64-LE dimension, then
/// the coordinates as f64-LE.
pub fn write_param_vector(path: &Path, v: &ParamVector) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 1 + 8 + 8 * v.dim());
    bytes.extend_from_slice(FCAP_MAGIC);
    bytes.push(FCAP_VERSION);
    bytes.extend_from_slice(&(v.dim() as u64).to_le_bytes());
    for &x in v.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a parameter vector written by [`write_param_vector`].
pub fn read_param_vector(path: &Path) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 {
        return Err(Error::malformed(path, "shorter than the fixed header"));
    }
    if &bytes[..4] != FCAP_MAGIC {
        return Err(Error::malformed(path, "bad magic bytes"));
    }
    if bytes[4] != FCAP_VERSION {
        return Err(Error::malformed(
            path,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    let dim = u64::from_le_bytes(bytes[5..13].try_into().expect("eight bytes")) as usize;
    let expected = 13 + 8 * dim;
    if bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("expected {expected} bytes for dim {dim}, found {}", bytes.len()),
        ));
    }
    let values = bytes[13..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok(ParamVector::new(values))
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders the per-round CSV: a schema comment, a header, then one row per
/// client per round. Optional columns are left empty.
pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = format!("# {ROUNDS_SCHEMA}\n");
    out.push_str(
        "round,client_id,role,verdict,update_norm,calibrated_norm,test_acc_customized,test_acc_personalized\n",
    );
    for report in reports {
        for row in &report.rows {
            let verdict = row.verdict.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.round,
                row.client_id,
                row.role,
                verdict,
                row.update_norm,
                fmt_opt_f64(row.calibrated_norm),
                row.acc_customized,
                fmt_opt_f64(row.acc_personalized),
            ));
        }
    }
    out
}

/// JSON sidecar stored next to the checkpoint vectors.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub round: usize,
    pub pool_ids: Vec<ClientId>,
    pub blacklist: Vec<ClientId>,
    pub extra_exchanges: usize,
}

/// Writes the final server state: the global model and both pools in the
/// parameter-vector container format plus a JSON sidecar.
pub fn write_checkpoint(dir: &Path, state: &ServerState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_param_vector(&dir.join("global.fcap"), state.global())?;
    for (id, v) in state.recovered_pool() {
        write_param_vector(&dir.join(format!("recovered_{id}.fcap")), v)?;
    }
    for (id, v) in state.calibrated_pool() {
        write_param_vector(&dir.join(format!("calibrated_{id}.fcap")), v)?;
    }
    let meta = CheckpointMeta {
        round: state.round(),
        pool_ids: state.recovered_pool().keys().cloned().collect(),
        blacklist: state.blacklist().iter().cloned().collect(),
        extra_exchanges: state.extra_exchanges(),
    };
    let path = dir.join("state.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::malformed(&path, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Renders client shards as CSV for inspection: one row per sample.
pub fn shards_csv(shards: &[ClientShards]) -> String {
    let input_dim = shards
        .first()
        .map(|s| s.train.input_dim())
        .unwrap_or(0);
    let mut out = String::from("client_id,split,label");
    for j in 0..input_dim {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (client_id, shard) in shards.iter().enumerate() {
        for (split, batch) in [("train", &shard.train), ("test", &shard.test)] {
            for i in 0..batch.len() {
                out.push_str(&format!("{client_id},{split},{}", batch.label(i)));
                for x in batch.feature_row(i) {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// One long-format metric row per (run, round, metric).
pub fn plotdata_csv(rows: &[(String, usize, String, f64)]) -> String {
    let mut out = format!("# {PLOTDATA_SCHEMA}\nrun,round,metric,value\n");
    for (run, round, metric, value) in rows {
        out.push_str(&format!("{run},{round},{metric},{value}\n"));
    }
    out
}

/// Creates `dir` (parents included), refusing to reuse a non-empty
/// directory unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::WouldOverwrite(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a text file, erroring with the path on failure.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a text file, erroring with the path on failure.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Collects the per-round metric series from a run directory's rounds CSV
/// for the plot-data export: mean benign/malicious update norms and mean
/// benign customized accuracy per round.
pub fn plot_rows_from_rounds_csv(
    run_name: &str,
    csv_text: &str,
    path: &Path,
) -> Result<Vec<(String, usize, String, f64)>> {
    let mut lines = csv_text.lines();
    match lines.next() {
        Some(first) if first == format!("# {ROUNDS_SCHEMA}") => {}
        _ => {
            return Err(Error::malformed(
                path,
                format!("missing schema comment '# {ROUNDS_SCHEMA}'"),
            ))
        }
    }
    match lines.next() {
        Some(header) if header.starts_with("round,client_id,role") => {}
        _ => return Err(Error::malformed(path, "missing column header")),
    }
    // round → (benign norms, malicious norms, benign accuracies)
    let mut per_round: BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::malformed(
                path,
                format!("row {}: expected 8 fields, found {}", i + 3, fields.len()),
            ));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::malformed(path, format!("row {}: bad {what} '{s}'", i + 3)))
        };
        let round: usize = fields[0]
            .parse()
            .map_err(|_| Error::malformed(path, format!("row {}: bad round", i + 3)))?;
        let norm = parse_f(fields[4], "update_norm")?;
        let entry = per_round.entry(round).or_default();
        match fields[2] {
            "benign" => {
                entry.0.push(norm);
                entry.2.push(parse_f(fields[6], "test_acc_customized")?);
            }
            "malicious" => entry.1.push(norm),
            other => {
                return Err(Error::malformed(
                    path,
                    format!("row {}: unknown role '{other}'", i + 3),
                ))
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut rows = Vec::new();
    for (round, (benign_norms, malicious_norms, benign_accs)) in &per_round {
        if !benign_norms.is_empty() {
            rows.push((
                run_name.to_string(),
                *round,
                "benign_update_norm".to_string(),
                mean(benign_norms),
            ));
        }
        if !malicious_norms.is_empty() {
            rows.push((
                run_name.to_string(),
                *round,
                "malicious_update_norm".to_string(),
                mean(malicious_norms),
            ));
        }
        if !benign_accs.is_empty() {
            rows.push((
                run_name.to_string(),
                *round,
                "benign_test_acc".to_string(),
                mean(benign_accs),
            ));
        }
    }
    Ok(rows)
}
