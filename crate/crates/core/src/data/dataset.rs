use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::policy_model::CohortView;
use crate::{Error, Result};

/// Covariates, treatment policy and outcomes for `n` subjects.
///
/// Covariates are stored row-major. Item covariates, when present, are the
/// features of the item assigned to each subject (e.g. a coupon) and feed
/// the assignment factor together with the subject covariates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortDataset {
    pub feature_names: Vec<String>,
    pub covariates: Vec<f64>,
    pub dim: usize,
    pub treated: Vec<bool>,
    pub intensity: Vec<f64>,
    pub assignment: Option<Vec<usize>>,
    pub assignment_classes: usize,
    pub item_covariates: Option<Vec<f64>>,
    pub item_dim: usize,
    pub gain: Vec<f64>,
    pub cost: Vec<f64>,
}

const CACHE_MAGIC: &str = "# scpm-dataset 1";

impl CohortDataset {
    pub fn len(&self) -> usize {
        self.treated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treated.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn item_row(&self, i: usize) -> Option<&[f64]> {
        self.item_covariates
            .as_ref()
            .map(|items| &items[i * self.item_dim..(i + 1) * self.item_dim])
    }

    pub fn treated_count(&self) -> usize {
        self.treated.iter().filter(|&&t| t).count()
    }

    /// Checks every structural invariant: consistent lengths, finite
    /// values, zero intensity on control rows, and two non-empty cohorts.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let fail = |m: String| Err(Error::contract(m));
        if self.covariates.len() != n * self.dim {
            return fail(format!("covariates hold {} values for {n} x {}", self.covariates.len(), self.dim));
        }
        if self.feature_names.len() != self.dim {
            return fail("feature name count differs from covariate width".into());
        }
        for (name, len) in [
            ("intensity", self.intensity.len()),
            ("gain", self.gain.len()),
            ("cost", self.cost.len()),
        ] {
            if len != n {
                return fail(format!("{name} has {len} entries for {n} subjects"));
            }
        }
        if let Some(a) = &self.assignment {
            if a.len() != n {
                return fail("assignment length mismatch".into());
            }
            if let Some(bad) = a.iter().find(|&&c| c >= self.assignment_classes) {
                return fail(format!("assignment class {bad} >= {}", self.assignment_classes));
            }
        }
        if let Some(items) = &self.item_covariates {
            if items.len() != n * self.item_dim {
                return fail("item covariate size mismatch".into());
            }
        }
        let all = self
            .covariates
            .iter()
            .chain(&self.intensity)
            .chain(&self.gain)
            .chain(&self.cost)
            .chain(self.item_covariates.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return fail("dataset contains non-finite values".into());
        }
        if let Some(i) = (0..n).find(|&i| !self.treated[i] && self.intensity[i] != 0.0) {
            return fail(format!("control subject {i} has non-zero intensity"));
        }
        if self.treated_count() == 0 || self.treated_count() == n {
            return fail("both treated and control cohorts must be non-empty".into());
        }
        Ok(())
    }

    /// Rows `indices` as a new dataset, in the given order.
    pub fn subset(&self, indices: &[usize]) -> CohortDataset {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        CohortDataset {
            feature_names: self.feature_names.clone(),
            covariates: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            dim: self.dim,
            treated: indices.iter().map(|&i| self.treated[i]).collect(),
            intensity: pick(&self.intensity),
            assignment: self
                .assignment
                .as_ref()
                .map(|a| indices.iter().map(|&i| a[i]).collect()),
            assignment_classes: self.assignment_classes,
            item_covariates: self.item_covariates.as_ref().map(|_| {
                indices
                    .iter()
                    .flat_map(|&i| self.item_row(i).unwrap().iter().copied())
                    .collect()
            }),
            item_dim: self.item_dim,
            gain: pick(&self.gain),
            cost: pick(&self.cost),
        }
    }

    /// Builds the factor inputs for `indices`, mapping each raw intensity
    /// through `intensity_map` (typically a standardization).
    pub fn cohort_view(&self, indices: &[usize], intensity_map: impl Fn(f64) -> f64) -> CohortView {
        CohortView {
            indices: indices.to_vec(),
            covariates: indices.iter().map(|&i| self.row(i).to_vec()).collect(),
            assignment_covariates: match &self.item_covariates {
                Some(_) => indices
                    .iter()
                    .map(|&i| {
                        let mut r = self.row(i).to_vec();
                        r.extend_from_slice(self.item_row(i).unwrap());
                        r
                    })
                    .collect(),
                None => Vec::new(),
            },
            intensity: indices.iter().map(|&i| intensity_map(self.intensity[i])).collect(),
            assignment: self
                .assignment
                .as_ref()
                .map(|a| indices.iter().map(|&i| a[i]).collect()),
        }
    }

    /// Input width of the assignment network.
    pub fn assignment_input_dim(&self) -> usize {
        self.dim + if self.item_covariates.is_some() { self.item_dim } else { 0 }
    }

    /// Writes the processed-dataset cache: two comment lines carrying the
    /// format version and layout, a header row, then one row per subject.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_cache_to(&mut out).map_err(|e| Error::io(path, e))
    }

    pub fn write_cache_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{CACHE_MAGIC}")?;
        writeln!(
            out,
            "# dim={} item_dim={} classes={} assignment={}",
            self.dim,
            if self.item_covariates.is_some() { self.item_dim } else { 0 },
            self.assignment_classes,
            self.assignment.is_some()
        )?;
        let mut header: Vec<String> = self.feature_names.clone();
        if self.item_covariates.is_some() {
            header.extend((0..self.item_dim).map(|k| format!("item_{k}")));
        }
        header.extend(["treatment", "intensity"].map(String::from));
        if self.assignment.is_some() {
            header.push("assignment".into());
        }
        header.extend(["gain", "cost"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            let mut push = |s: String| {
                if !line.is_empty() {
                    line.push(',');
                }
                line.push_str(&s);
            };
            for v in self.row(i) {
                push(format!("{v:e}"));
            }
            if let Some(items) = self.item_row(i) {
                for v in items {
                    push(format!("{v:e}"));
                }
            }
            push(if self.treated[i] { "1".into() } else { "0".into() });
            push(format!("{:e}", self.intensity[i]));
            if let Some(a) = &self.assignment {
                push(a[i].to_string());
            }
            push(format!("{:e}", self.gain[i]));
            push(format!("{:e}", self.cost[i]));
            writeln!(out, "{line}")?;
        }
        out.flush()
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = BufReader::new(file).lines();
        let mut next_line = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::io(path, e)),
                None => Err(bad(format!("missing {what}"))),
            }
        };
        if next_line("header")?.trim() != CACHE_MAGIC {
            return Err(bad("not a processed dataset cache".into()));
        }
        let layout = next_line("layout line")?;
        let field = |key: &str| -> Result<String> {
            layout
                .trim_start_matches('#')
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(String::from))
                .ok_or_else(|| bad(format!("layout line lacks `{key}`")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            field(key)?.parse().map_err(|_| bad(format!("bad `{key}`")))
        };
        let dim = parse_usize("dim")?;
        let item_dim = parse_usize("item_dim")?;
        let classes = parse_usize("classes")?;
        let has_assignment = field("assignment")? == "true";
        let header = next_line("column header")?;
        let names: Vec<String> = header.split(',').map(String::from).collect();
        let width = dim + item_dim + 2 + usize::from(has_assignment) + 2;
        if names.len() != width {
            return Err(bad(format!("header has {} columns, layout implies {width}", names.len())));
        }
        let mut ds = CohortDataset {
            feature_names: names[..dim].to_vec(),
            dim,
            item_dim,
            assignment_classes: classes,
            item_covariates: (item_dim > 0).then(Vec::new),
            assignment: has_assignment.then(Vec::new),
            ..Default::default()
        };
        let mut row_no = 0;
        loop {
            let line = match next_line("row") {
                Ok(l) => l,
                Err(Error::Format { .. }) => break,
                Err(e) => return Err(e),
            };
            row_no += 1;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(bad(format!("row {row_no} has {} cells, expected {width}", cells.len())));
            }
            let num = |k: usize| -> Result<f64> {
                cells[k]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {row_no}, column {}: `{}`", names[k], cells[k])))
            };
            for k in 0..dim {
                ds.covariates.push(num(k)?);
            }
            if let Some(items) = ds.item_covariates.as_mut() {
                for k in dim..dim + item_dim {
                    items.push(num(k)?);
                }
            }
            let mut k = dim + item_dim;
            ds.treated.push(match cells[k] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("row {row_no}: treatment `{other}`"))),
            });
            k += 1;
            ds.intensity.push(num(k)?);
            k += 1;
            if let Some(a) = ds.assignment.as_mut() {
                a.push(
                    cells[k]
                        .parse()
                        .map_err(|_| bad(format!("row {row_no}: assignment `{}`", cells[k])))?,
                );
                k += 1;
            }
            ds.gain.push(num(k)?);
            ds.cost.push(num(k + 1)?);
        }
        ds.validate().map_err(|e| bad(e.to_string()))?;
        Ok(ds)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny() -> CohortDataset {
        CohortDataset {
            feature_names: vec!["a".into(), "b".into()],
            covariates: vec![0.1, 0.2, -1.0, 3.5, 2.0, 0.0, 0.25, -0.75],
            dim: 2,
            treated: vec![true, false, true, false],
            intensity: vec![1.5, 0.0, 0.5, 0.0],
            assignment: Some(vec![1, 0, 2, 0]),
            assignment_classes: 3,
            item_covariates: Some(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            item_dim: 2,
            gain: vec![1.0, 0.5, 2.0, 0.25],
            cost: vec![0.3, 0.1, 0.6, 0.2],
        }
    }

    #[test]
    fn cache_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = tiny();
        ds.write_cache(&path).unwrap();
        let back = CohortDataset::read_cache(&path).unwrap();
        assert_eq!(back, ds);
        let path2 = dir.path().join("ds2.csv");
        back.write_cache(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn control_intensity_must_be_zero() {
        let mut ds = tiny();
        ds.intensity[1] = 0.3;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn cohort_view_concatenates_item_covariates() {
        let ds = tiny();
        let view = ds.cohort_view(&[2, 0], |r| r * 2.0);
        assert_eq!(view.covariates[0], vec![2.0, 0.0]);
        assert_eq!(view.assignment_covariates[0], vec![2.0, 0.0, 0.0, 1.0]);
        assert_eq!(view.intensity, vec![1.0, 3.0]);
        assert_eq!(view.assignment, Some(vec![2, 1]));
        assert_eq!(ds.assignment_input_dim(), 4);
    }
}
