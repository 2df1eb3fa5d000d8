use std::path::{Path, PathBuf};

use scpm::data::parse_key_values;
use scpm::learners::{sweep_summary_csv, train_model, TrainPlan, TrainedRun};
use scpm::objectives::Constraint;

use crate::manifest::RunManifest;
use crate::workspace::{self, create_dir, write_text};
use crate::{CliError, CliResult, ModelKind};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub struct TrainArgs {
    pub model: ModelKind,
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub percentage: Option<f64>,
    pub budget: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub out: PathBuf,
}

fn write_run(dir: &Path, r: &TrainedRun) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    r.model.save(&ckpt)?;
    write_text(&dir.join(LOG_FILE), &r.log)?;
    write_text(&dir.join(SUMMARY_FILE), &r.summary_csv())?;
    Ok(vec![ckpt, dir.join(LOG_FILE), dir.join(SUMMARY_FILE)])
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let (ds, split) = workspace::load(&args.data)?;
    let kind = args.model.core();
    let mut plan = TrainPlan::defaults(kind);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_key_values(&text)? {
            plan.apply(&k, &v)?;
        }
    }
    if let Some(p) = args.percentage {
        plan.constraint = Constraint::Percentage(p);
    }
    if let Some(b) = args.budget {
        plan.constraint = Constraint::Budget(b);
    }
    if let Some(g) = args.lambda_grid {
        plan.lambda_grid = g;
    }
    plan.validate(kind)?;

    let sweep = args.seeds.len() > 1;
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for &seed in &args.seeds {
        let r = train_model(kind, &plan, &ds, &split, seed)?;
        let dir = if sweep { args.out.join(format!("seed-{seed}")) } else { args.out.clone() };
        outputs.extend(write_run(&dir, &r)?);
        let shown: Vec<String> = r.summary.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("{} seed {seed}: {}", kind.as_str(), shown.join(" "));
        summaries.push(r.summary);
    }
    if sweep {
        let path = args.out.join(SUMMARY_FILE);
        let text = sweep_summary_csv(&summaries);
        write_text(&path, &text)?;
        print!("{text}");
        outputs.push(path);
    }
    let mut m = RunManifest::new(&format!("train --model {}", kind.as_str()));
    m.config = args.config.clone();
    m.seeds = args.seeds.clone();
    m.inputs.push(args.data.clone());
    m.outputs = outputs;
    m.write(&args.out)
}
