//! Report files written by `relay` and the grouped summaries built from them.
//!
//! Each relay matrix produces `<stem>.csv` (one row per cell) and
//! `<stem>.meta.toml` (schema version, horizon, failure mode and the fleets
//! involved). `render` groups cells by algorithm pair and by test fleet.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use relaygen::agent::Algorithm;
use relaygen::relay::mean_std;

use crate::config::Variant;
use crate::{read_text, HarnessError};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetMeta {
    /// "test" or "stranger".
    pub role: String,
    pub name: String,
    pub variant: Variant,
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub manifest: String,
    pub ids: Vec<String>,
    /// Per-run ordinary-evaluation returns recorded at training time.
    pub ordinary_returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub horizon: u64,
    pub failure_mode: String,
    pub m_trajs: usize,
    pub eta: f64,
    pub k_per_traj: usize,
    pub seed: u64,
    pub failed_cells: usize,
    pub fleets: Vec<FleetMeta>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CellRow {
    pub test_id: String,
    pub stranger_id: String,
    pub test_algo: Option<Algorithm>,
    pub stranger_algo: Option<Algorithm>,
    pub n_states: usize,
    pub failure_rate: Option<f64>,
    pub failure_std: Option<f64>,
    pub mean_return: Option<f64>,
    pub return_std: Option<f64>,
    pub reference_rate: Option<f64>,
}

impl CellRow {
    pub fn is_diagonal(&self) -> bool {
        self.test_id == self.stranger_id
    }
}

#[derive(Clone, Debug)]
pub struct ReportInput {
    pub path: PathBuf,
    pub meta: ReportMeta,
    pub rows: Vec<CellRow>,
}

/// `stem` with `suffix` appended verbatim (stems may contain dots).
pub fn companion(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn meta_path(stem: &Path) -> PathBuf {
    companion(stem, ".meta.toml")
}

pub fn csv_path(stem: &Path) -> PathBuf {
    companion(stem, ".csv")
}

fn stem_of(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".meta.toml")
        .or_else(|| s.strip_suffix(".csv"))
        .unwrap_or(&s);
    PathBuf::from(stem)
}

/// Loads a report given either its CSV or its meta file.
pub fn load_input(path: &Path) -> Result<ReportInput, HarnessError> {
    let stem = stem_of(path);
    let mpath = meta_path(&stem);
    let text = read_text(&mpath)?;
    let raw: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Manifest {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    let version = raw
        .get("schema_version")
        .and_then(toml::Value::as_integer)
        .unwrap_or(-1);
    if version != i64::from(REPORT_SCHEMA) {
        return Err(HarnessError::Schema {
            path: mpath,
            found: u32::try_from(version).unwrap_or(0),
            expected: REPORT_SCHEMA,
        });
    }
    let meta: ReportMeta = raw
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Manifest {
            path: mpath.clone(),
            msg: e.to_string(),
        })?;
    let mut reader = csv::Reader::from_path(csv_path(&stem))?;
    let rows = reader.deserialize().collect::<Result<Vec<CellRow>, _>>()?;
    Ok(ReportInput {
        path: stem,
        meta,
        rows,
    })
}

fn pct((m, s): (f64, f64)) -> String {
    format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s)
}

fn num((m, s): (f64, f64)) -> String {
    format!("{m:.1} ± {s:.1}")
}

/// Failure-rate summary over a set of cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellSummary {
    pub cells: usize,
    pub states: usize,
    /// Mean and std of per-cell rates (across agent pairs).
    pub rate: (f64, f64),
    /// Std of the failure indicator pooled over all states.
    pub state_std: f64,
    pub mean_return: (f64, f64),
}

pub fn summarize(rows: &[&CellRow]) -> CellSummary {
    let ok: Vec<&&CellRow> = rows.iter().filter(|r| r.failure_rate.is_some()).collect();
    let rates: Vec<f64> = ok.iter().filter_map(|r| r.failure_rate).collect();
    let rets: Vec<f64> = ok.iter().filter_map(|r| r.mean_return).collect();
    let states: usize = ok.iter().map(|r| r.n_states).sum();
    let pooled = if states == 0 {
        0.0
    } else {
        ok.iter()
            .map(|r| r.failure_rate.unwrap_or(0.0) * r.n_states as f64)
            .sum::<f64>()
            / states as f64
    };
    CellSummary {
        cells: ok.len(),
        states,
        rate: mean_std(&rates),
        state_std: (pooled * (1.0 - pooled)).sqrt(),
        mean_return: mean_std(&rets),
    }
}

/// Renders the algorithm-pair table and the per-fleet table.
pub fn render(inputs: &[ReportInput]) -> Result<String, HarnessError> {
    let Some(first) = inputs.first() else {
        return Err(HarnessError::Incomparable("no report inputs".into()));
    };
    for i in inputs {
        if i.meta.horizon != first.meta.horizon {
            return Err(HarnessError::Incomparable(format!(
                "{} uses L = {} but {} uses L = {}",
                first.path.display(),
                first.meta.horizon,
                i.path.display(),
                i.meta.horizon
            )));
        }
    }
    let rows: Vec<&CellRow> = inputs.iter().flat_map(|i| &i.rows).collect();
    let mut modes: Vec<&str> = inputs
        .iter()
        .map(|i| i.meta.failure_mode.as_str())
        .collect();
    modes.dedup();
    let mut s = format!(
        "relay evaluation, L = {}, failure: {}\n",
        first.meta.horizon,
        modes.join(", ")
    );
    s.push_str("failure rate (%): mean ± std across agent pairs [std across states]\n\n");
    s.push_str(&pair_table(&rows));
    s.push('\n');
    s.push_str(&fleet_table(inputs, &rows));
    let failed: usize = inputs.iter().map(|i| i.meta.failed_cells).sum();
    if failed > 0 {
        s.push_str(&format!("\n{failed} cell(s) failed and are excluded\n"));
    }
    Ok(s)
}

fn pair_table(rows: &[&CellRow]) -> String {
    let mut off: BTreeMap<(Algorithm, Algorithm), Vec<&CellRow>> = BTreeMap::new();
    let mut diag: BTreeMap<Algorithm, Vec<&CellRow>> = BTreeMap::new();
    for r in rows {
        let (Some(t), Some(st)) = (r.test_algo, r.stranger_algo) else {
            continue;
        };
        if r.is_diagonal() {
            diag.entry(st).or_default().push(r);
        } else {
            off.entry((t, st)).or_default().push(r);
        }
    }
    let mut algos: Vec<Algorithm> = off
        .keys()
        .flat_map(|(a, b)| [*a, *b])
        .chain(diag.keys().copied())
        .collect();
    algos.sort();
    algos.dedup();
    let strangers: Vec<Algorithm> = algos
        .iter()
        .copied()
        .filter(|a| off.keys().any(|k| k.1 == *a))
        .collect();
    let mut s = format!("{:<8}", "test");
    for a in &strangers {
        s.push_str(&format!("{:>26}", format!("{a} strangers")));
    }
    s.push_str(&format!("{:>26}\n", "reference"));
    for t in &algos {
        s.push_str(&format!("{:<8}", t.name()));
        for st in &strangers {
            let cell = off.get(&(*t, *st)).map_or("-".into(), |v| {
                let c = summarize(v);
                format!("{} [{:.1}]", pct(c.rate), 100.0 * c.state_std)
            });
            s.push_str(&format!("{cell:>26}"));
        }
        let reference = diag.get(t).map_or("-".into(), |v| pct(summarize(v).rate));
        s.push_str(&format!("{reference:>26}\n"));
    }
    s
}

fn fleet_table(inputs: &[ReportInput], rows: &[&CellRow]) -> String {
    let mut fleets: Vec<&FleetMeta> = Vec::new();
    for i in inputs {
        for f in i.meta.fleets.iter().filter(|f| f.role == "test") {
            if !fleets.iter().any(|g| g.name == f.name) {
                fleets.push(f);
            }
        }
    }
    let mut s = format!(
        "{:<24}{:<16}{:>18}{:>22}{:>22}\n",
        "fleet", "variant", "relay failure", "relay return", "ordinary return"
    );
    for f in fleets {
        let mine: Vec<&CellRow> = rows
            .iter()
            .copied()
            .filter(|r| !r.is_diagonal() && f.ids.contains(&r.test_id))
            .collect();
        let c = summarize(&mine);
        let (relay_fail, relay_ret) = if c.cells == 0 {
            ("-".into(), "-".into())
        } else {
            (pct(c.rate), num(c.mean_return))
        };
        let ordinary = if f.ordinary_returns.is_empty() {
            "-".into()
        } else {
            num(mean_std(&f.ordinary_returns))
        };
        s.push_str(&format!(
            "{:<24}{:<16}{relay_fail:>18}{relay_ret:>22}{ordinary:>22}\n",
            f.name,
            f.variant.name()
        ));
    }
    s
}
