//! Demonstration files: one JSON object per line, one line per transition,
//! with keys `s`, `a`, `r`, `s_next`, `done`, `episode_id`. Floats carry 17
//! significant digits so a write/read round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::data::{Source, Trajectory, Transition};
use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s_next: Vec<f64>,
    done: bool,
    episode_id: u64,
}

fn push_floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x:.16e}").unwrap();
    }
    out.push(']');
}

/// Serializes demonstrations. Every trajectory must end in a successful
/// terminal transition.
pub fn encode_demos(demos: &[Trajectory]) -> Result<String> {
    let mut out = String::new();
    for (episode, demo) in demos.iter().enumerate() {
        if !demo.success() || !demo.transitions.last().is_some_and(|t| t.done) {
            return Err(Error::UnsuccessfulDemo { index: episode });
        }
        for t in &demo.transitions {
            out.push_str("{\"s\":");
            push_floats(&mut out, &t.s);
            out.push_str(",\"a\":");
            push_floats(&mut out, &t.a);
            write!(out, ",\"r\":{}", if t.r == 1.0 { 1 } else { 0 }).unwrap();
            out.push_str(",\"s_next\":");
            push_floats(&mut out, &t.s_next);
            write!(out, ",\"done\":{},\"episode_id\":{episode}}}", t.done).unwrap();
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_demos(path: &Path, demos: &[Trajectory]) -> Result<()> {
    fs::write(path, encode_demos(demos)?)?;
    Ok(())
}

/// Parses demonstration text. `path` only labels errors.
pub fn decode_demos(text: &str, path: &Path) -> Result<Vec<Trajectory>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut demos: Vec<Trajectory> = Vec::new();
    let mut current: Vec<Transition> = Vec::new();
    let mut current_id: Option<u64> = None;
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        last_line = lineno;
        let rec: Record = serde_json::from_str(line).map_err(|e| err(lineno, e.to_string()))?;
        if rec.r != 0.0 && rec.r != 1.0 {
            return Err(err(lineno, format!("reward must be 0 or 1, got {}", rec.r)));
        }
        if rec.a.iter().any(|a| a.abs() > 1.0 + envs::ACTION_TOLERANCE) {
            return Err(err(lineno, "action component outside [-1, 1]".into()));
        }
        if rec.s.len() != rec.s_next.len() {
            return Err(err(lineno, "s and s_next lengths differ".into()));
        }
        match current_id {
            Some(id) if id == rec.episode_id => {}
            Some(id) => {
                return Err(err(
                    lineno,
                    format!("episode {id} ended without a terminal transition"),
                ))
            }
            None => current_id = Some(rec.episode_id),
        }
        let done = rec.done;
        current.push(Transition {
            s: rec.s,
            a: rec.a,
            r: rec.r,
            s_next: rec.s_next,
            done,
            source: Source::Demo,
        });
        if done {
            demos.push(Trajectory::new(std::mem::take(&mut current)));
            current_id = None;
        }
    }
    if !current.is_empty() {
        return Err(err(last_line, "file ends inside an episode (truncated?)".into()));
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(err(last_line, "missing trailing newline (truncated?)".into()));
    }
    Ok(demos)
}

pub fn read_demos(path: &Path) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    decode_demos(&text, path)
}

/// Hex SHA-256 of a demo file's bytes.
pub fn demo_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Rolls out the scripted expert until `count` successful episodes are
/// collected. Failed attempts are discarded; gives up after `100 * count`
/// attempts.
pub fn collect_demos(
    spec: &EnvSpec,
    count: usize,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    let mut demos = Vec::with_capacity(count);
    let max_attempts = 100 * count.max(1);
    let mut attempts = 0;
    while demos.len() < count {
        if attempts == max_attempts {
            return Err(Error::InsufficientData {
                what: "successful expert episodes",
                required: count,
                available: demos.len(),
            });
        }
        attempts += 1;
        let mut state = envs::reset(spec, rng);
        let mut ts = Vec::new();
        loop {
            let a = envs::scripted_expert(spec, &state, noise_std, rng);
            let res = envs::step(spec, &state, &a)?;
            ts.push(Transition {
                s: state.values.clone(),
                a,
                r: res.reward,
                s_next: res.next_state.values.clone(),
                done: res.success,
                source: Source::Demo,
            });
            if res.done {
                break;
            }
            state = res.next_state;
        }
        let traj = Trajectory::new(ts);
        if traj.success() {
            demos.push(traj);
        }
    }
    Ok(demos)
}
