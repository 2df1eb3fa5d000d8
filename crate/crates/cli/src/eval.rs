use std::path::PathBuf;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scpm::learners::TrainedModel;
use scpm::metrics::{
    aucc, auqc, auuc, cost_curve, krcc, lift_at_h, RankedEvalSet, DEFAULT_KRCC_BUCKETS, DEFAULT_LIFT_PERCENT,
};

use crate::manifest::RunManifest;
use crate::workspace::{self, create_dir, write_text};
use crate::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "cost_curve.csv";
const CURVE_STEPS: usize = 100;
pub const METRIC_NAMES: [&str; 5] = ["auuc", "auqc", "krcc", "lift", "aucc"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub metrics: String,
    pub random: bool,
    pub split: SplitName,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn parse_metrics(s: &str) -> CliResult<Vec<&'static str>> {
    if s.trim() == "all" {
        return Ok(METRIC_NAMES.to_vec());
    }
    let mut out = Vec::new();
    for m in s.split(',').map(str::trim) {
        let name = METRIC_NAMES
            .iter()
            .find(|&&n| n == m)
            .ok_or_else(|| CliError::Usage(format!("unknown metric `{m}`; expected all or {}", METRIC_NAMES.join(","))))?;
        if !out.contains(name) {
            out.push(*name);
        }
    }
    Ok(out)
}

fn metric(name: &str, eval: &RankedEvalSet) -> CliResult<f64> {
    Ok(match name {
        "auuc" => auuc(eval).value,
        "auqc" => auqc(eval).value,
        "krcc" => krcc(eval, DEFAULT_KRCC_BUCKETS)?,
        "lift" => lift_at_h(eval, DEFAULT_LIFT_PERCENT)?,
        _ => aucc(&cost_curve(eval, CURVE_STEPS)?)?.value,
    })
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let names = parse_metrics(&args.metrics)?;
    if !args.checkpoint.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", args.checkpoint.display())));
    }
    let model = TrainedModel::load(&args.checkpoint)?;
    let (ds, split) = workspace::load(&args.data)?;
    if model.input_dim() != ds.dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} covariates but the dataset has {}",
            model.input_dim(),
            ds.dim
        )));
    }
    let rows: Vec<usize> = match args.split {
        SplitName::Train => split.train.clone(),
        SplitName::Validation => split.validation.clone(),
        SplitName::Test => split.test.clone(),
        SplitName::All => (0..ds.len()).collect(),
    };
    let column = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&i| f(i)).collect::<Vec<f64>>();
    let treated: Vec<bool> = rows.iter().map(|&i| ds.treated[i]).collect();
    let gain = column(&|i| ds.gain[i]);
    let cost = column(&|i| ds.cost[i]);
    let eval = RankedEvalSet::new(model.score_rows(&ds, &rows)?, treated.clone(), gain.clone(), cost.clone())?;
    let baseline = if args.random {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let scores = (0..rows.len()).map(|_| rng.random::<f64>()).collect();
        Some(RankedEvalSet::new(scores, treated, gain, cost)?)
    } else {
        None
    };

    let mut table = String::from(if baseline.is_some() { "metric,model,random\n" } else { "metric,model\n" });
    for name in &names {
        table += &format!("{name},{}", metric(name, &eval)?);
        if let Some(b) = &baseline {
            table += &format!(",{}", metric(name, b)?);
        }
        table += "\n";
    }
    print!("{table}");

    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(&out.join(METRICS_FILE), &table)?;
        cost_curve(&eval, CURVE_STEPS)?.write_csv(&out.join(CURVE_FILE))?;
        let mut m = RunManifest::new("eval");
        m.seeds.push(args.seed);
        m.inputs = vec![args.checkpoint.clone(), args.data.clone()];
        m.outputs = vec![out.join(METRICS_FILE), out.join(CURVE_FILE)];
        m.write(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_lists_parse() {
        assert_eq!(parse_metrics("all").unwrap(), METRIC_NAMES.to_vec());
        assert_eq!(parse_metrics("aucc, auuc,aucc").unwrap(), vec!["aucc", "auuc"]);
        assert!(matches!(parse_metrics("auc"), Err(CliError::Usage(_))));
    }
}
