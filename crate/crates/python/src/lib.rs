//! Python bindings: datasets, training, scoring, metrics and gradient checks.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scpm::data::{load_csv, recipe, split_3_1_1, synth_generate, CohortDataset, SchemaConfig, Split, SynthSpec, SynthTruth};
use scpm::learners::{
    default_factors, duality_gradcheck, gradcheck, train_model, BarrierTarget, ModelKind, ObjectiveSpec, Scorer,
    TrainPlan, TrainedModel, DEFAULT_PERCENTAGE, DEFAULT_RIDGE_PENALTY,
};
use scpm::metrics::{self, RankedEvalSet, DEFAULT_KRCC_BUCKETS, DEFAULT_LIFT_PERCENT};
use scpm::objectives::{BarrierConfig, Constraint, Direction};
use scpm::policy_model::{Head, MlpModel};

fn py_err(e: scpm::Error) -> PyErr {
    match e {
        scpm::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        scpm::Error::NumericDomain { .. } | scpm::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn model_kind(name: &str) -> PyResult<ModelKind> {
    ModelKind::parse(name).ok_or_else(|| {
        PyValueError::new_err(format!("unknown model `{name}`; expected scpm, drm, constrained or duality"))
    })
}

/// A cohort dataset with its train/validation/test split.
#[pyclass(name = "Dataset", module = "scpm_py", frozen)]
struct PyDataset {
    ds: CohortDataset,
    split: Split,
    truth: Option<SynthTruth>,
}

impl PyDataset {
    fn rows(&self, split: &str) -> PyResult<Vec<usize>> {
        match split {
            "train" => Ok(self.split.train.clone()),
            "validation" => Ok(self.split.validation.clone()),
            "test" => Ok(self.split.test.clone()),
            "all" => Ok((0..self.ds.len()).collect()),
            _ => Err(PyValueError::new_err(format!(
                "unknown split `{split}`; expected train, validation, test or all"
            ))),
        }
    }
}

#[pymethods]
impl PyDataset {
    /// Generates a synthetic preset with known effects.
    #[staticmethod]
    #[pyo3(signature = (preset, seed = 0, rows = None))]
    fn synth(preset: &str, seed: u64, rows: Option<usize>) -> PyResult<Self> {
        let mut spec =
            SynthSpec::preset(preset, seed).ok_or_else(|| PyValueError::new_err(format!("unknown preset `{preset}`")))?;
        if let Some(n) = rows {
            spec.n = n;
        }
        let (ds, truth) = synth_generate(&spec).map_err(py_err)?;
        let split = split_3_1_1(&ds.treated, seed).map_err(py_err)?;
        Ok(PyDataset {
            ds,
            split,
            truth: Some(truth),
        })
    }

    /// Loads a raw CSV through a schema file or a builtin recipe name.
    #[staticmethod]
    #[pyo3(signature = (path, schema, seed = 0))]
    fn ingest(path: PathBuf, schema: &str, seed: u64) -> PyResult<Self> {
        let schema = match recipe(schema) {
            Some(s) => s,
            None => SchemaConfig::load(std::path::Path::new(schema)).map_err(py_err)?,
        };
        let ing = load_csv(&path, &schema, seed).map_err(py_err)?;
        Ok(PyDataset {
            ds: ing.dataset,
            split: ing.split,
            truth: None,
        })
    }

    /// Reads a processed data directory written by the command-line tool.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let ds = CohortDataset::read_cache(&dir.join("dataset.cache")).map_err(py_err)?;
        let split = Split::read_index_files(&dir).map_err(py_err)?;
        let truth_path = dir.join("truth.csv");
        let truth = if truth_path.exists() {
            Some(SynthTruth::read(&truth_path).map_err(py_err)?)
        } else {
            None
        };
        Ok(PyDataset { ds, split, truth })
    }

    /// Writes the cache, split indices and any ground truth to `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.ds.write_cache(&dir.join("dataset.cache")).map_err(py_err)?;
        self.split.write_index_files(&dir).map_err(py_err)?;
        if let Some(t) = &self.truth {
            t.write(&dir.join("truth.csv")).map_err(py_err)?;
        }
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.ds.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.ds.dim
    }

    #[getter]
    fn n_treated(&self) -> usize {
        self.ds.treated_count()
    }

    /// Row indices of `train`, `validation`, `test` or `all`.
    #[pyo3(signature = (name = "test"))]
    fn split(&self, name: &str) -> PyResult<Vec<usize>> {
        self.rows(name)
    }

    /// `(covariates, treated, gain, cost)` for the rows of a split.
    #[pyo3(signature = (name = "test"))]
    fn columns(&self, name: &str) -> PyResult<(Vec<Vec<f64>>, Vec<bool>, Vec<f64>, Vec<f64>)> {
        let rows = self.rows(name)?;
        Ok((
            rows.iter().map(|&i| self.ds.row(i).to_vec()).collect(),
            rows.iter().map(|&i| self.ds.treated[i]).collect(),
            rows.iter().map(|&i| self.ds.gain[i]).collect(),
            rows.iter().map(|&i| self.ds.cost[i]).collect(),
        ))
    }

    /// `(tau_gain, tau_cost)` for the rows of a split, for synthetic data.
    #[pyo3(signature = (name = "test"))]
    fn true_effects(&self, name: &str) -> PyResult<Option<(Vec<f64>, Vec<f64>)>> {
        let rows = self.rows(name)?;
        Ok(self.truth.as_ref().map(|t| {
            (
                rows.iter().map(|&i| t.tau_gain[i]).collect(),
                rows.iter().map(|&i| t.tau_cost[i]).collect(),
            )
        }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(rows={}, dim={}, treated={}, split={}/{}/{})",
            self.ds.len(),
            self.ds.dim,
            self.ds.treated_count(),
            self.split.train.len(),
            self.split.validation.len(),
            self.split.test.len()
        )
    }
}

/// A trained ranker.
#[pyclass(name = "Model", module = "scpm_py", frozen)]
struct PyModel {
    model: TrainedModel,
    log: String,
    summary: Vec<(String, f64)>,
}

fn value_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(list) = v.extract::<Vec<f64>>() {
        return Ok(list.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    }
    Ok(v.str()?.to_string())
}

#[pymethods]
impl PyModel {
    /// Trains `kind` on the dataset's training split.
    ///
    /// `config` maps training keys (`lr`, `iterations`, `batch_size`,
    /// `epochs`, `hidden`, `propensity`, `lambda_grid`, ...) to values.
    #[staticmethod]
    #[pyo3(signature = (kind, data, config = None, seed = 0, percentage = None, budget = None))]
    fn train(
        py: Python<'_>,
        kind: &str,
        data: &PyDataset,
        config: Option<&Bound<'_, PyDict>>,
        seed: u64,
        percentage: Option<f64>,
        budget: Option<f64>,
    ) -> PyResult<Self> {
        let kind = model_kind(kind)?;
        let mut plan = TrainPlan::defaults(kind);
        if let Some(cfg) = config {
            for (k, v) in cfg.iter() {
                let key: String = k.extract()?;
                plan.apply(&key, &value_text(&v)?).map_err(py_err)?;
            }
        }
        if let Some(p) = percentage {
            plan.constraint = Constraint::Percentage(p);
        }
        if let Some(b) = budget {
            plan.constraint = Constraint::Budget(b);
        }
        let run = py
            .detach(|| train_model(kind, &plan, &data.ds, &data.split, seed))
            .map_err(py_err)?;
        Ok(PyModel {
            model: run.model,
            log: run.log,
            summary: run.summary,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            model: TrainedModel::load(&path).map_err(py_err)?,
            log: String::new(),
            summary: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.model.kind()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// Training log as CSV text (empty for a loaded checkpoint).
    #[getter]
    fn log(&self) -> &str {
        &self.log
    }

    #[getter]
    fn summary(&self) -> HashMap<String, f64> {
        self.summary.iter().cloned().collect()
    }

    /// Ranking scores of covariate rows.
    fn score(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rows.iter().map(|x| self.model.score(x).map_err(py_err)).collect()
    }

    /// Ranking scores of a dataset split.
    #[pyo3(signature = (data, split = "test"))]
    fn score_split(&self, data: &PyDataset, split: &str) -> PyResult<Vec<f64>> {
        let rows = data.rows(split)?;
        self.model.score_rows(&data.ds, &rows).map_err(py_err)
    }

    /// All ranking metrics of this model on a dataset split.
    #[pyo3(signature = (data, split = "test"))]
    fn evaluate(&self, data: &PyDataset, split: &str) -> PyResult<HashMap<String, f64>> {
        let rows = data.rows(split)?;
        let scores = self.model.score_rows(&data.ds, &rows).map_err(py_err)?;
        let eval = RankedEvalSet::new(
            scores,
            rows.iter().map(|&i| data.ds.treated[i]).collect(),
            rows.iter().map(|&i| data.ds.gain[i]).collect(),
            rows.iter().map(|&i| data.ds.cost[i]).collect(),
        )
        .map_err(py_err)?;
        all_metrics(&eval)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={}, input_dim={})", self.model.kind(), self.model.input_dim())
    }
}

fn all_metrics(eval: &RankedEvalSet) -> PyResult<HashMap<String, f64>> {
    let mut out = HashMap::new();
    out.insert("auuc".into(), metrics::auuc(eval).value);
    out.insert("auqc".into(), metrics::auqc(eval).value);
    out.insert("krcc".into(), metrics::krcc(eval, DEFAULT_KRCC_BUCKETS).map_err(py_err)?);
    out.insert("lift".into(), metrics::lift_at_h(eval, DEFAULT_LIFT_PERCENT).map_err(py_err)?);
    out.insert("aucc".into(), metrics::aucc_of(eval).map_err(py_err)?.value);
    Ok(out)
}

/// AUUC, AUQC, KRCC, LIFT@30 and AUCC of `scores` against observed outcomes.
#[pyfunction]
fn evaluate(scores: Vec<f64>, treated: Vec<bool>, gain: Vec<f64>, cost: Vec<f64>) -> PyResult<HashMap<String, f64>> {
    let eval = RankedEvalSet::new(scores, treated, gain, cost).map_err(py_err)?;
    all_metrics(&eval)
}

/// `(fractions, costs, values)` of the cumulative cost curve.
#[pyfunction]
#[pyo3(signature = (scores, treated, gain, cost, steps = 100))]
fn cost_curve(
    scores: Vec<f64>,
    treated: Vec<bool>,
    gain: Vec<f64>,
    cost: Vec<f64>,
    steps: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let eval = RankedEvalSet::new(scores, treated, gain, cost).map_err(py_err)?;
    let c = metrics::cost_curve(&eval, steps).map_err(py_err)?;
    Ok((c.fractions, c.costs, c.values))
}

/// Analytic versus finite-difference gradient of a freshly initialized
/// model's objective on `rows` balanced training subjects.
#[pyfunction]
#[pyo3(signature = (kind, data, rows = 20, seed = 0, h = 1e-5))]
fn gradient_check(kind: &str, data: &PyDataset, rows: usize, seed: u64, h: f64) -> PyResult<HashMap<String, f64>> {
    let kind = model_kind(kind)?;
    let pool = if data.split.train.is_empty() { data.rows("all")? } else { data.split.train.clone() };
    let nt = rows.div_ceil(2);
    let t: Vec<usize> = pool.iter().copied().filter(|&i| data.ds.treated[i]).take(nt).collect();
    let c: Vec<usize> = pool.iter().copied().filter(|&i| !data.ds.treated[i]).take(rows - nt).collect();
    if t.len() + c.len() != rows || t.is_empty() || c.is_empty() {
        return Err(PyValueError::new_err(format!("cannot draw {rows} balanced rows")));
    }
    let picked: Vec<usize> = t.into_iter().chain(c).collect();
    let ds = &data.ds;
    let report = match kind {
        ModelKind::Duality => duality_gradcheck(ds, &picked, 0.01, DEFAULT_RIDGE_PENALTY, seed, h),
        _ => {
            let barrier = (kind == ModelKind::Constrained).then(|| {
                let b = BarrierConfig::percentage(DEFAULT_PERCENTAGE).expect("valid barrier");
                (BarrierTarget::Percentage(DEFAULT_PERCENTAGE), b.temperature)
            });
            let spec = ObjectiveSpec {
                dataset: ds,
                rows: &picked,
                weights: None,
                regularization: 0.0,
                direction: Direction::ValueOverCost,
                barrier,
            };
            if kind == ModelKind::Scpm {
                let rho: Vec<f64> = picked.iter().filter(|&&i| ds.treated[i]).map(|&i| ds.intensity[i]).collect();
                let mean = rho.iter().sum::<f64>() / rho.len() as f64;
                let var = rho.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rho.len() as f64;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                default_factors(ds, 8, seed).and_then(|f| {
                    gradcheck(
                        Scorer::Scpm {
                            factors: &f,
                            intensity: (mean, sd),
                        },
                        &spec,
                        h,
                    )
                })
            } else {
                MlpModel::init(vec![ds.dim, 1], Head::Tanh, seed).and_then(|m| gradcheck(Scorer::Drm(&m), &spec, h))
            }
        }
    }
    .map_err(py_err)?;
    let mut out = HashMap::new();
    out.insert("parameters".into(), report.parameters as f64);
    out.insert("objective".into(), report.objective);
    out.insert("max_relative_error".into(), report.max_relative_error);
    out.insert("max_absolute_error".into(), report.max_absolute_error);
    Ok(out)
}

#[pymodule]
pub fn scpm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cost_curve, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
