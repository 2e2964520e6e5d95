//! Parameter checkpoints: a plain-text header naming every slice and its
//! shape, a `data N` line, then `N` little-endian `f64` values.
//!
//! Optimizer moments go to a sibling file with the `.adam` suffix.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::net::{ModelConfig, ScoreNet};
use super::train::{Adam, TrainState};
use crate::sde::SdeSchedule;
use crate::{Error, Result};

const MAGIC: &str = "speechdiff-checkpoint 1";
const ADAM_MAGIC: &str = "speechdiff-adam 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: ScoreNet,
    pub sched: SdeSchedule,
    pub state: Option<TrainState>,
}

fn adam_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".adam");
    PathBuf::from(p)
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Writes the network (and optimizer state, if given) atomically.
pub fn save_checkpoint(path: &Path, net: &ScoreNet, sched: &SdeSchedule, state: Option<&TrainState>) -> Result<()> {
    let mut buf = Vec::new();
    let model = serde_json::to_string(net.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let schedule = serde_json::to_string(sched).map_err(|e| Error::Checkpoint(e.to_string()))?;
    writeln!(buf, "{MAGIC}").unwrap();
    writeln!(buf, "model {model}").unwrap();
    writeln!(buf, "schedule {schedule}").unwrap();
    for s in net.slices() {
        writeln!(buf, "slice {} {} {} {}", s.name, s.offset, s.rows, s.cols).unwrap();
    }
    writeln!(buf, "data {}", net.num_params()).unwrap();
    write_f64s(&mut buf, net.params());
    write_atomic(path, &buf)?;

    if let Some(st) = state {
        let mut buf = Vec::new();
        writeln!(buf, "{ADAM_MAGIC}").unwrap();
        writeln!(buf, "step {}", st.adam.step).unwrap();
        writeln!(buf, "data {}", 2 * st.adam.m.len()).unwrap();
        write_f64s(&mut buf, &st.adam.m);
        write_f64s(&mut buf, &st.adam.v);
        write_atomic(&adam_path(path), &buf)?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Header {
    lines: Vec<String>,
    count: usize,
}

fn read_header<R: BufRead>(r: &mut R, magic: &str) -> Result<Header> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            return Err(bad("missing data line"));
        }
        let line = line.trim_end().to_string();
        if lines.is_empty() && line != magic {
            return Err(bad(format!("expected header {magic:?}")));
        }
        if let Some(n) = line.strip_prefix("data ") {
            let count = n.parse().map_err(|_| bad("bad data count"))?;
            return Ok(Header { lines, count });
        }
        lines.push(line);
    }
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != 8 * n {
        return Err(bad(format!("expected {} data bytes, found {}", 8 * n, bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn field<'a>(lines: &'a [String], key: &str) -> Result<&'a str> {
    let prefix = format!("{key} ");
    lines.iter().find_map(|l| l.strip_prefix(&prefix)).ok_or_else(|| bad(format!("missing {key} line")))
}

/// Loads a checkpoint and, when present, its optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, MAGIC)?;
    let config: ModelConfig = serde_json::from_str(field(&h.lines, "model")?).map_err(|e| bad(e.to_string()))?;
    let sched: SdeSchedule = serde_json::from_str(field(&h.lines, "schedule")?).map_err(|e| bad(e.to_string()))?;
    let params = read_f64s(&mut r, h.count)?;
    let net = ScoreNet::from_params(config, params).map_err(|e| bad(e.to_string()))?;

    let declared: Vec<&str> = h.lines.iter().filter(|l| l.starts_with("slice ")).map(|l| l.as_str()).collect();
    let expected: Vec<String> =
        net.slices().iter().map(|s| format!("slice {} {} {} {}", s.name, s.offset, s.rows, s.cols)).collect();
    if declared != expected.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(bad("slice table does not match the model architecture"));
    }

    let apath = adam_path(path);
    let state = if apath.exists() {
        let file = fs::File::open(&apath).map_err(|e| Error::io(&apath, e))?;
        let mut r = BufReader::new(file);
        let h = read_header(&mut r, ADAM_MAGIC)?;
        let step: u64 = field(&h.lines, "step")?.parse().map_err(|_| bad("bad step"))?;
        if h.count != 2 * net.num_params() {
            return Err(bad("optimizer state size does not match the model"));
        }
        let data = read_f64s(&mut r, h.count)?;
        let (m, v) = data.split_at(net.num_params());
        Some(TrainState { adam: Adam { m: m.to_vec(), v: v.to_vec(), step } })
    } else {
        None
    };
    Ok(Checkpoint { net, sched, state })
}
