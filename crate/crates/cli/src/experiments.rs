//! Experiment plans: named grids of training runs, each repeated over
//! consecutive seeds, summarized as mean±std validation AUC per cell.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toolnet::{Family, HeadKind};

use crate::commands::{self, PretrainCache};
use crate::config::{Config, PretrainSection};
use crate::error::{CliError, Result};

/// One cell of a plan: a fully resolved config trained `repeats` times
/// with seeds `config.seed + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    /// Grid row label.
    pub row: String,
    /// Grid column label.
    pub column: String,
    pub repeats: usize,
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub runs: Vec<RunSpec>,
}

/// Desk-scale conv-layer counts standing in for the frozen depths of the
/// full-size network; they coincide with the FFE cut points.
pub const FT_DEPTHS: [usize; 4] = [0, 7, 11, 13];
pub const FFE_DEPTHS: [usize; 4] = [7, 11, 13, 17];
pub const FFE_ITERATIONS: usize = 800;

const HEADS: [(HeadKind, &str); 2] = [(HeadKind::AvgFc, "avg-fc"), (HeadKind::ConvMax, "conv-max")];

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(CliError::config("runs", "plan has no runs"));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.runs.iter().enumerate() {
            if !seen.insert(r.name.as_str()) {
                return Err(CliError::config(format!("runs[{i}].name"), format!("duplicate run name {:?}", r.name)));
            }
            if r.repeats == 0 {
                return Err(CliError::config(format!("runs[{i}].repeats"), "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut plan: ExperimentPlan = crate::config::parse_with_path(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for r in &mut plan.runs {
            r.config.resolve_paths(base);
        }
        plan.validate()?;
        Ok(plan)
    }

    /// `cfg.experiment.plan` is a built-in name or a plan file.
    pub fn resolve(cfg: &Config) -> Result<Self> {
        let name = cfg.experiment.plan.as_str();
        match name {
            "table1" | "table2" | "table3" | "table4" => Self::builtin(name, cfg),
            path => Self::load(Path::new(path)),
        }
    }

    /// Built-in plans derived from `base`, which supplies the dataset,
    /// schedule, seed and repeat count.
    pub fn builtin(name: &str, base: &Config) -> Result<Self> {
        let repeats = base.experiment.repeats.max(1);
        let pretrained = with_pretraining(base);
        let mut runs = Vec::new();
        let mut push = |name: String, row: &str, column: &str, config: Config| {
            runs.push(RunSpec {
                name,
                row: row.to_string(),
                column: column.to_string(),
                repeats,
                config,
            })
        };
        match name {
            "table1" => {
                for k in FT_DEPTHS {
                    for (head, col) in HEADS {
                        let mut c = pretrained.clone();
                        c.model.family = Family::FineTune;
                        c.model.k = k;
                        c.model.head = head;
                        push(format!("FT{k}-{col}"), &format!("FT{k}"), col, c);
                    }
                }
            }
            "table2" => {
                for k in FFE_DEPTHS {
                    for (head, col) in HEADS {
                        let c = ffe_config(&pretrained, k, head, true)?;
                        push(format!("FFE{k}-{col}"), &format!("FFE{k}"), col, c);
                    }
                }
                let c = ffe_config(&pretrained, 17, HeadKind::AvgFc, false)?;
                push("FFE17NC-avg-fc".into(), "FFE17NC", "avg-fc", c);
            }
            "table3" => {
                let n = base.train.iterations;
                let mut yes = pretrained.clone();
                yes.model.k = 0;
                yes.model.head = HeadKind::AvgFc;
                let mut no = yes.clone();
                no.model.pretrained = None;
                no.model.pretrain = None;
                let mut longer = no.clone();
                longer.train.iterations = n * 5 / 3;
                push("pretrained".into(), &format!("yes {n}"), "avg-fc", yes);
                push("random".into(), &format!("no {n}"), "avg-fc", no);
                push("random-long".into(), &format!("no {}", longer.train.iterations), "avg-fc", longer);
            }
            "table4" => {
                let n = base.train.iterations;
                for k in [FT_DEPTHS[1], FT_DEPTHS[2]] {
                    let mut plain = pretrained.clone();
                    plain.model.k = k;
                    plain.model.head = HeadKind::AvgFc;
                    let mut weighted = plain.clone();
                    weighted.train.weighted = true;
                    weighted.train.iterations = n * 25 / 60;
                    push(format!("FT{k}"), &format!("FT{k} no {n}"), "avg-fc", plain);
                    push(
                        format!("FT{k}*"),
                        &format!("FT{k}* yes {}", weighted.train.iterations),
                        "avg-fc",
                        weighted,
                    );
                }
            }
            other => {
                return Err(CliError::config(
                    "experiment.plan",
                    format!("unknown plan {other:?}; expected table1..table4 or a plan file"),
                ))
            }
        }
        let plan = ExperimentPlan {
            name: name.to_string(),
            runs,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// `base` with source-task pretraining unless it already sets an init.
fn with_pretraining(base: &Config) -> Config {
    let mut c = base.clone();
    if c.model.pretrained.is_none() && c.model.pretrain.is_none() {
        c.model.pretrain = Some(PretrainSection::default());
    }
    c
}

/// FFE config with the fixed-extractor schedule and as many custom-part
/// repeats (up to the configured number) as the feature map allows.
fn ffe_config(base: &Config, k: usize, head: HeadKind, custom: bool) -> Result<Config> {
    let mut c = base.clone();
    c.model.family = Family::FixedExtractor;
    c.model.k = k;
    c.model.head = head;
    c.model.include_custom_part = custom;
    c.train.decay = 0.001;
    c.train.batch_size = 32;
    c.train.iterations = FFE_ITERATIONS;
    if custom {
        let input = (c.dataset.pipeline.augmentation.crop_height, c.dataset.pipeline.augmentation.crop_width);
        let max = base.model.custom_repeats.max(1);
        let fits = (1..=max).rev().find(|&r| {
            c.model.custom_repeats = r;
            c.model.spec(1, input).validate().is_ok()
        });
        c.model.custom_repeats = fits.ok_or_else(|| {
            CliError::config("model.custom_repeats", format!("no custom-part depth fits after {k} layers"))
        })?;
    }
    Ok(c)
}

/// One training run of a plan; embeds everything needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub plan: String,
    pub run: String,
    pub row: String,
    pub column: String,
    pub repeat: usize,
    pub seed: u64,
    pub val_auc: f64,
    pub per_class: Vec<(String, Option<f64>)>,
    pub iterations_run: usize,
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub row: String,
    pub column: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cells in the order they first appear in `rows`.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.row.clone(), r.column.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(row, column)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.row == row && r.column == column)
                .map(|r| r.val_auc)
                .collect();
            let (mean, std) = mean_std(&vals);
            CellSummary {
                row,
                column,
                mean,
                std,
                n: vals.len(),
            }
        })
        .collect()
}

/// Grid with one line per row label and one column per column label.
pub fn format_grid(cells: &[CellSummary]) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for c in cells {
        if !rows.contains(&c.row.as_str()) {
            rows.push(&c.row);
        }
        if !cols.contains(&c.column.as_str()) {
            cols.push(&c.column);
        }
    }
    let w0 = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<w0$}", "config");
    for c in &cols {
        let _ = write!(out, "  {c:>17}");
    }
    out.push('\n');
    for r in &rows {
        let _ = write!(out, "{r:<w0$}");
        for col in &cols {
            match cells.iter().find(|c| c.row == *r && c.column == *col) {
                Some(c) => {
                    let _ = write!(out, "  {:>17}", format!("{:.4} ± {:.4}", c.mean, c.std));
                }
                None => {
                    let _ = write!(out, "  {:>17}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Runs every repeat of every run. With `out`, appends each finished row
/// to `results.jsonl` and writes the grid to `summary.txt`.
pub fn run_plan(plan: &ExperimentPlan, out: Option<&Path>) -> Result<Vec<ResultRow>> {
    plan.validate()?;
    let mut jsonl = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let p = dir.join("results.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))?, p))
        }
        None => None,
    };
    let mut cache = PretrainCache::default();
    let mut rows = Vec::new();
    for run in &plan.runs {
        for r in 0..run.repeats {
            let mut cfg = run.config.clone();
            cfg.seed = run.config.seed + r as u64;
            log::info!("{} / {} repeat {} (seed {})", plan.name, run.name, r, cfg.seed);
            let trained = commands::train_in_memory(&cfg, &mut cache)?;
            let report = trained.outcome.final_report.as_ref().ok_or_else(|| {
                CliError::config(format!("{}.config.split", run.name), "experiments need a validation split")
            })?;
            let row = ResultRow {
                plan: plan.name.clone(),
                run: run.name.clone(),
                row: run.row.clone(),
                column: run.column.clone(),
                repeat: r,
                seed: cfg.seed,
                val_auc: report.macro_auc,
                per_class: report.classes.iter().map(|c| (c.name.clone(), c.auc.ok())).collect(),
                iterations_run: trained.outcome.iterations_run,
                config: cfg,
            };
            if let Some((f, p)) = &mut jsonl {
                let line = serde_json::to_string(&row).expect("result row serializes");
                writeln!(f, "{line}").map_err(|e| CliError::io(&*p, e))?;
            }
            rows.push(row);
        }
    }
    if let Some(dir) = out {
        let p = dir.join("summary.txt");
        std::fs::write(&p, format_grid(&summarize(&rows))).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(rows)
}
