//! Ablation sweeps: one fleet per value of a single STA or naive setting,
//! each relay-evaluated against the same strangers.

use std::path::PathBuf;

use log::warn;

use relaygen::relay::mean_std;

use crate::config::{ExperimentConfig, Variant};
use crate::manifest::{self, LoadedManifest};
use crate::relay_cmd::{cmd_relay, inputs, RelayOptions};
use crate::report::{summarize, CellRow, CellSummary};
use crate::{fleet, write_file, HarnessError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    NPretrained,
    LR,
    GammaRatio,
    NCandidates,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NPretrained => "n_pretrained",
            SweepAxis::LR => "l_r",
            SweepAxis::GammaRatio => "gamma_ratio",
            SweepAxis::NCandidates => "n_candidates",
        }
    }

    pub fn valid_for(self, v: Variant) -> bool {
        match self {
            SweepAxis::NPretrained => v == Variant::Naive,
            SweepAxis::LR => matches!(v, Variant::Sta | Variant::Naive),
            SweepAxis::GammaRatio | SweepAxis::NCandidates => v == Variant::Sta,
        }
    }
}

/// `cfg` with the swept setting replaced by `value`.
pub fn apply(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig, HarnessError> {
    if !axis.valid_for(cfg.variant) {
        return Err(HarnessError::Config(format!(
            "axis {} does not apply to variant {}",
            axis.name(),
            cfg.variant.name()
        )));
    }
    let count = || {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as u64)
        } else {
            Err(HarnessError::Config(format!(
                "{} needs a non-negative integer, got {value}",
                axis.name()
            )))
        }
    };
    let mut c = cfg.clone();
    match axis {
        SweepAxis::NPretrained => c.naive.n_pretrained = count()? as usize,
        SweepAxis::LR if c.variant == Variant::Naive => c.naive.l_r = count()?,
        SweepAxis::LR => c.sta.l_r = count()?,
        SweepAxis::GammaRatio => c.sta.gamma_ratio = value,
        SweepAxis::NCandidates => c.sta.n_candidates = count()? as usize,
    }
    c.name = format!("{}-{}-{value}", cfg.name, axis.name());
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub result: Result<(CellSummary, Option<(f64, f64)>), String>,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub table: String,
    pub failures: usize,
}

fn ordinary_strangers(
    cfg: &ExperimentConfig,
    out: &std::path::Path,
    jobs: usize,
) -> Result<LoadedManifest, HarnessError> {
    let c = ExperimentConfig {
        name: format!("{}-strangers", cfg.name),
        variant: Variant::Ordinary,
        ..cfg.clone()
    };
    let dir = out.join(&c.name);
    fleet::train_fleet(&c, &dir, jobs)?;
    manifest::load(&dir)
}

/// Trains and relay-evaluates one fleet per value. Without `strangers`, an
/// ordinary fleet with the same seeds is trained to play that role.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    strangers: Vec<LoadedManifest>,
    opts: &SweepOptions,
) -> Result<SweepResult, HarnessError> {
    let configs: Vec<ExperimentConfig> = opts
        .values
        .iter()
        .map(|v| apply(cfg, opts.axis, *v))
        .collect::<Result<_, _>>()?;
    let strangers = if strangers.is_empty() {
        vec![ordinary_strangers(cfg, &opts.out, opts.jobs)?]
    } else {
        strangers
    };
    let mut failures = 0;
    let mut rows = Vec::new();
    for (value, c) in opts.values.iter().zip(&configs) {
        let result = (|| -> Result<(CellSummary, Option<(f64, f64)>, usize), HarnessError> {
            let dir = opts.out.join(&c.name);
            let m = fleet::train_fleet(c, &dir, opts.jobs)?;
            let loaded = manifest::load(&dir)?;
            let relay = RelayOptions {
                configs: vec![c.relay.base.clone()],
                seed: c.master_seed,
                jobs: opts.jobs,
                out: opts.out.join("reports"),
                cache: opts.cache.clone(),
                prefix: format!("{}-", c.name),
            };
            let res = cmd_relay(std::slice::from_ref(&loaded), &strangers, &relay)?;
            let input = inputs(&res)?.remove(0);
            let off: Vec<&CellRow> = input.rows.iter().filter(|r| !r.is_diagonal()).collect();
            let ordinary: Vec<f64> = m.runs.iter().filter_map(|r| r.ordinary_return).collect();
            let ord = (!ordinary.is_empty()).then(|| mean_std(&ordinary));
            Ok((summarize(&off), ord, m.failed_runs() + res.failures()))
        })();
        rows.push(SweepRow {
            value: *value,
            result: match result {
                Ok((s, o, f)) => {
                    failures += f;
                    Ok((s, o))
                }
                Err(e) => {
                    warn!("{} = {value}: {e}", opts.axis.name());
                    failures += 1;
                    Err(e.to_string())
                }
            },
        });
    }
    let table = render(opts.axis, &rows);
    write_file(
        &opts.out.join(format!("sweep-{}.txt", opts.axis.name())),
        &table,
    )?;
    write_file(
        &opts.out.join(format!("sweep-{}.csv", opts.axis.name())),
        to_csv(opts.axis, &rows),
    )?;
    Ok(SweepResult {
        rows,
        table,
        failures,
    })
}

pub fn render(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:<14}{:>20}{:>14}{:>22}\n",
        axis.name(),
        "relay failure (%)",
        "state std",
        "ordinary return"
    );
    for r in rows {
        match &r.result {
            Ok((c, ord)) => s.push_str(&format!(
                "{:<14}{:>20}{:>14.1}{:>22}\n",
                r.value,
                format!("{:.1} ± {:.1}", 100.0 * c.rate.0, 100.0 * c.rate.1),
                100.0 * c.state_std,
                ord.map_or("-".into(), |(m, sd)| format!("{m:.1} ± {sd:.1}"))
            )),
            Err(e) => s.push_str(&format!("{:<14}failed: {e}\n", r.value)),
        }
    }
    s
}

fn to_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{},cells,failure_rate,failure_std_pairs,failure_std_states,ordinary_return,ordinary_std\n",
        axis.name()
    );
    for r in rows {
        match &r.result {
            Ok((c, ord)) => s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.value,
                c.cells,
                c.rate.0,
                c.rate.1,
                c.state_std,
                ord.map_or(String::new(), |o| o.0.to_string()),
                ord.map_or(String::new(), |o| o.1.to_string())
            )),
            Err(_) => s.push_str(&format!("{},0,,,,,\n", r.value)),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_apply_to_their_variants() {
        let sta = ExperimentConfig::from_toml("variant = \"sta\"", None).unwrap();
        let naive = ExperimentConfig::from_toml("variant = \"naive\"", None).unwrap();
        assert_eq!(
            apply(&sta, SweepAxis::NCandidates, 2.0)
                .unwrap()
                .sta
                .n_candidates,
            2
        );
        assert_eq!(
            apply(&sta, SweepAxis::GammaRatio, 1.1)
                .unwrap()
                .sta
                .gamma_ratio,
            1.1
        );
        assert_eq!(apply(&sta, SweepAxis::LR, 40.0).unwrap().sta.l_r, 40);
        assert_eq!(apply(&naive, SweepAxis::LR, 40.0).unwrap().naive.l_r, 40);
        assert_eq!(
            apply(&naive, SweepAxis::NPretrained, 16.0)
                .unwrap()
                .naive
                .n_pretrained,
            16
        );
        assert!(apply(&sta, SweepAxis::NPretrained, 2.0).is_err());
        assert!(apply(&naive, SweepAxis::NCandidates, 2.0).is_err());
        assert!(apply(&sta, SweepAxis::NCandidates, 1.5).is_err());
        assert_eq!(
            apply(&sta, SweepAxis::NCandidates, 5.0).unwrap().name,
            "experiment-n_candidates-5"
        );
    }
}
