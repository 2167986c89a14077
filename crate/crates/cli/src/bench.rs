//! `bench`: repeated-trial comparison table.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use comdp_core::BasisKind;
use serde::Deserialize;

use crate::run::{self, default_basis, Method, RunConfig, Summary};

pub const SCHEMA: u32 = 1;

pub const COLUMNS: [&str; 11] = [
    "schema=1",
    "model",
    "method",
    "basis",
    "d",
    "iterations",
    "iterations_per_stage",
    "wall_ms",
    "speedup_vs_baseline",
    "dim_reduction_factor",
    "exact_cost",
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    verify: bool,
    rows: Vec<Row>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    /// Model path, relative to the config file.
    model: PathBuf,
    method: Method,
    #[serde(default)]
    basis: Option<String>,
    /// Shuffled agent order with this seed.
    #[serde(default)]
    seed: Option<u64>,
    /// Name printed in the model column; the path when absent.
    #[serde(default)]
    label: Option<String>,
}

struct Measured {
    label: String,
    model_key: PathBuf,
    summary: Summary,
    basis: Option<BasisKind>,
    baseline: Method,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn bench(config: PathBuf, trials: Option<usize>, verify: bool, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: Config = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let trials = trials.or(cfg.trials).unwrap_or(5).max(1);
    let verify = verify || cfg.verify;
    let base_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut measured = Vec::with_capacity(cfg.rows.len());
    for row in &cfg.rows {
        let path = if row.model.is_absolute() { row.model.clone() } else { base_dir.join(&row.model) };
        let mdp = crate::load_model(&path)?;
        let basis = match &row.basis {
            Some(s) => Some(s.parse::<BasisKind>()?),
            None if row.method == Method::DpiAlp => Some(default_basis(&mdp)),
            None => None,
        };
        let mut rc = RunConfig::new(row.method, basis.unwrap_or(BasisKind::Identity));
        rc.verify = verify;
        if let Some(seed) = row.seed {
            rc.order = comdp_core::AgentOrder::Shuffled { seed };
        }
        let mut times = Vec::with_capacity(trials);
        let mut last = None;
        for _ in 0..trials {
            let r = run::run(&mdp, &rc).with_context(|| format!("{} on {}", row.method, path.display()))?;
            times.push(r.summary.wall_ms);
            last = Some(r.summary);
        }
        let mut summary = last.expect("at least one trial");
        summary.wall_ms = median(times);
        measured.push(Measured {
            label: row.label.clone().unwrap_or_else(|| row.model.display().to_string()),
            model_key: path,
            summary,
            basis,
            baseline: Method::baseline_for(mdp.horizon()),
        });
    }

    let sink: Box<dyn io::Write> = match &out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(COLUMNS)?;
    for m in &measured {
        let s = &m.summary;
        let baseline = measured.iter().find(|o| o.model_key == m.model_key && o.summary.method == m.baseline);
        let speedup = baseline.map(|b| b.summary.wall_ms / s.wall_ms);
        let per_stage = s
            .iterations_per_stage
            .as_ref()
            .map(|v| v.iter().copied().max().unwrap_or(0).to_string())
            .unwrap_or_default();
        w.write_record([
            SCHEMA.to_string(),
            m.label.clone(),
            s.method.to_string(),
            m.basis.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
            s.d.to_string(),
            s.iterations.to_string(),
            per_stage,
            format!("{:.3}", s.wall_ms),
            speedup.map(|v| format!("{v:.3}")).unwrap_or_default(),
            format!("{}", s.dim_reduction_factor),
            s.exact_cost_at_start_states.map(|c| format!("{:.10}", c.mean)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
