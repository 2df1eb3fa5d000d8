use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scpm::data::CohortDataset;
use scpm::learners::{
    default_factors, duality_gradcheck, fit_propensity, gradcheck, BarrierTarget, GradcheckReport, ObjectiveSpec,
    PropensityConfig, Scorer, DEFAULT_RIDGE_PENALTY,
};
use scpm::objectives::{BarrierConfig, Direction};
use scpm::policy_model::{Head, MlpModel};

use crate::{workspace, CliError, CliResult, ModelKind};

const MAX_ROWS: usize = 100;
const STEP: f64 = 1e-5;
const HIDDEN: usize = 8;
/// Multiplier of the combined outcome checked for the duality model.
const DUALITY_LAMBDA: f64 = 0.01;
const CONSTRAINED_SHARE: f64 = 0.4;

pub struct GradcheckArgs {
    pub model: ModelKind,
    pub data: PathBuf,
    pub rows: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub weighted: bool,
}

/// `rows` subjects from `pool`, half treated, drawn with `seed`.
pub fn pick_rows(ds: &CohortDataset, pool: &[usize], rows: usize, seed: u64) -> CliResult<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<usize> = pool.iter().copied().filter(|&i| ds.treated[i]).collect();
    let mut c: Vec<usize> = pool.iter().copied().filter(|&i| !ds.treated[i]).collect();
    let nt = rows.div_ceil(2);
    let nc = rows - nt;
    if t.len() < nt || c.len() < nc {
        return Err(CliError::Usage(format!(
            "need {nt} treated and {nc} control rows, data has {} and {}",
            t.len(),
            c.len()
        )));
    }
    t.shuffle(&mut rng);
    c.shuffle(&mut rng);
    let mut out: Vec<usize> = t[..nt].iter().chain(&c[..nc]).copied().collect();
    out.sort_unstable();
    Ok(out)
}

fn check(args: &GradcheckArgs, ds: &CohortDataset, pool: &[usize], rows: &[usize]) -> CliResult<GradcheckReport> {
    if args.model == ModelKind::Duality {
        return Ok(duality_gradcheck(ds, rows, DUALITY_LAMBDA, DEFAULT_RIDGE_PENALTY, args.seed, STEP)?);
    }
    let weights = if args.weighted {
        let x: Vec<f64> = pool.iter().flat_map(|&i| ds.row(i).iter().copied()).collect();
        let t: Vec<bool> = pool.iter().map(|&i| ds.treated[i]).collect();
        Some(fit_propensity(&x, ds.dim, &t, &PropensityConfig::default())?.weights_for(ds)?)
    } else {
        None
    };
    let barrier = (args.model == ModelKind::Constrained).then(|| {
        let b = BarrierConfig::percentage(CONSTRAINED_SHARE).expect("valid barrier");
        (BarrierTarget::Percentage(CONSTRAINED_SHARE), b.temperature)
    });
    let spec = ObjectiveSpec {
        dataset: ds,
        rows,
        weights: weights.as_ref(),
        regularization: 0.0,
        direction: Direction::ValueOverCost,
        barrier,
    };
    if args.model == ModelKind::Scpm {
        let rho: Vec<f64> = rows.iter().filter(|&&i| ds.treated[i]).map(|&i| ds.intensity[i]).collect();
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        let var = rho.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rho.len() as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        let factors = default_factors(ds, HIDDEN, args.seed)?;
        let scorer = Scorer::Scpm {
            factors: &factors,
            intensity: (mean, sd),
        };
        return Ok(gradcheck(scorer, &spec, STEP)?);
    }
    let mlp = MlpModel::init(vec![ds.dim, 1], Head::Tanh, args.seed)?;
    Ok(gradcheck(Scorer::Drm(&mlp), &spec, STEP)?)
}

pub fn run(args: GradcheckArgs) -> CliResult<()> {
    if !(2..=MAX_ROWS).contains(&args.rows) {
        return Err(CliError::Usage(format!("--rows must be between 2 and {MAX_ROWS}, got {}", args.rows)));
    }
    if !(args.tolerance > 0.0) {
        return Err(CliError::Usage("--tolerance must be positive".into()));
    }
    let (ds, split) = workspace::load(&args.data)?;
    let pool: Vec<usize> = if split.train.is_empty() { (0..ds.len()).collect() } else { split.train.clone() };
    let rows = pick_rows(&ds, &pool, args.rows, args.seed)?;
    let r = check(&args, &ds, &pool, &rows)?;
    let pass = r.passes(args.tolerance);
    println!(
        "{} rows={} parameters={} objective={:e} max_relative_error={:e} max_absolute_error={:e} tolerance={:e} {}",
        args.model.as_str(),
        rows.len(),
        r.parameters,
        r.objective,
        r.max_relative_error,
        r.max_absolute_error,
        args.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "gradient check failed: relative error {:e} >= {:e}",
            r.max_relative_error, args.tolerance
        )))
    }
}
