//! Run directory layout: `config.json`, `rounds.csv`, `records.json`,
//! `trajectories/*.jsonl`, and `checkpoints/round_k/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RoundRecord, RunState};
use crate::actor_critic::{ActorCritic, ActorCriticCheckpoint, EvalConfig};
use crate::dynamics::EnsembleDynamics;
use crate::envs::EnvKind;
use crate::error::{Error, Result};

pub const ROUNDS_HEADER: [&str; 5] = ["round", "mean_value", "success_count", "dyn_mse_2s", "wall_clock_s"];

/// Writes through a temporary sibling so that a crash never leaves a
/// half-written file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn fmt_value(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// `rounds.csv` contents for `records`.
pub fn rounds_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
    w.write_record(ROUNDS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            fmt_value(r.mean_value),
            r.success_count().to_string(),
            fmt_value(r.dyn_mse_2s),
            r.wall_clock_s.map(|s| format!("{s:.3}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))
}

/// Writes every report file of `state` under `dir`. Emitting the same
/// state twice produces identical files.
pub fn emit_reports(dir: &Path, state: &RunState) -> Result<()> {
    write_atomic(&dir.join("config.json"), &json_bytes(&state.cfg)?)?;
    write_atomic(&dir.join("rounds.csv"), &rounds_csv(&state.records)?)?;
    write_atomic(&dir.join("records.json"), &json_bytes(&state.records)?)?;
    let traj_dir = dir.join("trajectories");
    for (i, e) in state.store.entries.iter().enumerate() {
        let name = format!("{i:04}_{}_round{}.jsonl", e.provenance, e.round);
        write_atomic(&traj_dir.join(name), e.trajectory.to_jsonl()?.as_bytes())?;
    }
    for (i, tr) in state.test.iter().enumerate() {
        write_atomic(&traj_dir.join(format!("test_{i:02}.jsonl")), tr.to_jsonl()?.as_bytes())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub env: EnvKind,
    pub round: usize,
    pub seed: u64,
    pub eval: EvalConfig,
}

pub fn checkpoint_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("round_{round}"))
}

/// Saves the networks and data after the latest round.
pub fn save_checkpoint(run_dir: &Path, state: &RunState) -> Result<PathBuf> {
    let round = state.records.len();
    let dir = checkpoint_dir(run_dir, round);
    let meta = CheckpointMeta {
        env: state.env.kind,
        round,
        seed: state.cfg.seed,
        eval: state.cfg.eval.clone(),
    };
    write_atomic(&dir.join("meta.json"), &json_bytes(&meta)?)?;
    write_atomic(&dir.join("dynamics.json"), &serde_json::to_vec(&state.dynamics.checkpoint())?)?;
    write_atomic(&dir.join("actor_critic.json"), &serde_json::to_vec(&state.ac.checkpoint())?)?;
    write_atomic(&dir.join("store.json"), &serde_json::to_vec(&state.store)?)?;
    Ok(dir)
}

/// Networks restored from a checkpoint directory.
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub dynamics: EnsembleDynamics,
    pub ac: ActorCritic,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let meta: CheckpointMeta = serde_json::from_slice(&read("meta.json")?)?;
    let dynamics = EnsembleDynamics::load(&dir.join("dynamics.json"))?;
    let ac_ckpt: ActorCriticCheckpoint = serde_json::from_slice(&read("actor_critic.json")?)?;
    Ok(LoadedCheckpoint {
        meta,
        dynamics,
        ac: ActorCritic::from_checkpoint(&ac_ckpt)?,
    })
}
