use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CellResult;
use crate::error::{Error, Result};

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub topology: String,
    pub policy: String,
    pub delta_t: f64,
    pub mean_drops: f64,
    pub ci95: f64,
    pub episodes: usize,
    pub seconds: f64,
}

impl From<&CellResult> for ResultRow {
    fn from(c: &CellResult) -> Self {
        Self {
            topology: c.topology.clone(),
            policy: c.policy.clone(),
            delta_t: c.delta_t,
            mean_drops: c.mean_drops,
            ci95: c.ci95,
            episodes: c.per_episode.len(),
            seconds: c.seconds,
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_results_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for c in cells {
        w.serialize(ResultRow::from(c))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Full results, including per-episode totals.
pub fn write_results_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One JSONL file per episode under `dir`, named after the cell.
pub fn write_traces(dir: &Path, cells: &[CellResult]) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for c in cells {
        let stem: String = format!("{}_{}_dt{}", c.topology, c.policy, c.delta_t)
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || "-_.".contains(ch) { ch } else { '_' })
            .collect();
        for (i, ep) in c.episodes.iter().enumerate() {
            let path = dir.join(format!("{stem}_ep{i:04}.jsonl"));
            std::fs::write(&path, ep.trace_lines()?).map_err(|e| Error::io(&path, e))?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(topology: String, policy: String, delta_t: f64, per_episode: Vec<f64>, seconds: f64) -> CellResult {
        let (mean_drops, ci95) = super::super::mean_ci95(&per_episode);
        CellResult {
            topology,
            policy,
            delta_t,
            mean_drops,
            ci95,
            per_episode,
            seconds,
            error: None,
            episodes: Vec::new(),
        }
    }

    proptest! {
        #[test]
        fn csv_round_trips(
            rows in prop::collection::vec(
                ("[a-z0-9,\" -]{1,12}", "[a-z:;\\[\\]0-9.]{1,10}", 0.01f64..100.0,
                 prop::collection::vec(0.0f64..50.0, 2..6), 0.0f64..1e4),
                1..6,
            )
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("results.csv");
            let cells: Vec<CellResult> = rows
                .into_iter()
                .map(|(t, p, dt, eps, s)| cell(t, p, dt, eps, s))
                .collect();
            write_results_csv(&path, &cells).unwrap();
            let back = read_results_csv(&path).unwrap();
            let expected: Vec<ResultRow> = cells.iter().map(ResultRow::from).collect();
            prop_assert_eq!(back, expected);
        }
    }

    #[test]
    fn header_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let cells = vec![cell("cyc1d-5".into(), "jsq".into(), 1.0, vec![1.0, 2.0], 0.0)];
        let csv_path = dir.path().join("sub/results.csv");
        write_results_csv(&csv_path, &cells).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "topology,policy,delta_t,mean_drops,ci95,episodes,seconds"
        );
        let json_path = dir.path().join("results.json");
        write_results_json(&json_path, &cells).unwrap();
        let back: Vec<CellResult> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(back, cells);
    }
}
