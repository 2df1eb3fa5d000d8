//! CSV ingestion: filtering, role derivation, one-hot expansion and
//! train-split z-scoring.

use std::collections::BTreeSet;
use std::path::Path;

use super::dataset::CohortDataset;
use super::schema::{ColumnRule, CovariateSelection, SchemaConfig};
use super::split::{split_3_1_1, Split};
use crate::{Error, Result};

/// What ingestion did besides producing the dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub rows_read: usize,
    /// `(filter, rows dropped by it)` in schema order; a row is charged to
    /// the first filter it fails.
    pub dropped_by_filter: Vec<(String, usize)>,
    pub rows_kept: usize,
    /// Dense columns with zero training variance (scaled by 1).
    pub constant_columns: Vec<String>,
    /// `(column, levels)` for each one-hot expanded column.
    pub one_hot: Vec<(String, Vec<String>)>,
}

impl IngestReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("rows_read,{}\n", self.rows_read);
        for (f, n) in &self.dropped_by_filter {
            s += &format!("dropped[{f}],{n}\n");
        }
        s += &format!("rows_kept,{}\n", self.rows_kept);
        for c in &self.constant_columns {
            s += &format!("constant_column,{c}\n");
        }
        for (c, levels) in &self.one_hot {
            s += &format!("one_hot[{c}],{}\n", levels.len());
        }
        s
    }
}

/// Output of [`load_csv`]: the normalized dataset and the split used for
/// normalization statistics.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: CohortDataset,
    pub split: Split,
    pub report: IngestReport,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    /// 1-based line number of each kept row in the source file.
    lines: Vec<usize>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 0,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    }

    fn number(&self, r: usize, c: usize) -> Result<f64> {
        let cell = self.rows[r][c].trim();
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Ingest {
                row: self.lines[r],
                column: self.header[c].clone(),
                message: format!("cannot parse `{cell}` as a finite number"),
            })
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        (0..self.rows.len()).map(|r| self.number(r, c)).collect()
    }

    fn derive(&self, rule: &ColumnRule) -> Result<Vec<f64>> {
        let v = self.numbers(rule.source())?;
        Ok(match rule {
            ColumnRule::Column(_) => v,
            ColumnRule::Scaled(_, k) => v.into_iter().map(|x| x * k).collect(),
            ColumnRule::BelowMedian(_) | ColumnRule::AboveMedian(_) => {
                if v.is_empty() {
                    return Ok(v);
                }
                let m = median(&mut v.clone());
                let below = matches!(rule, ColumnRule::BelowMedian(_));
                v.into_iter()
                    .map(|x| f64::from(u8::from(if below { x < m } else { x > m })))
                    .collect()
            }
            ColumnRule::Equals(_, c) => v.into_iter().map(|x| f64::from(u8::from(x == *c))).collect(),
        })
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest {
            row: k + 2,
            column: String::new(),
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(String::from).collect());
        lines.push(rec.position().map_or(k + 2, |p| p.line() as usize));
    }
    Ok(Table { header, rows, lines })
}

/// Reads `path` under `schema`, splits 60/20/20 with `split_seed`, and
/// z-scores dense covariates with training-split statistics.
pub fn load_csv(path: &Path, schema: &SchemaConfig, split_seed: u64) -> Result<Ingested> {
    let mut table = read_table(path)?;
    let mut report = IngestReport {
        rows_read: table.rows.len(),
        ..Default::default()
    };

    let filter_cols = schema
        .filters
        .iter()
        .map(|f| table.col(&f.column))
        .collect::<Result<Vec<_>>>()?;
    let mut dropped = vec![0usize; schema.filters.len()];
    let mut keep = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let mut kept = true;
        for (k, (f, &c)) in schema.filters.iter().zip(&filter_cols).enumerate() {
            if !f.keeps(table.number(r, c)?) {
                dropped[k] += 1;
                kept = false;
                break;
            }
        }
        keep.push(kept);
    }
    let mut it = keep.iter();
    table.rows.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    table.lines.retain(|_| *it.next().unwrap());
    report.dropped_by_filter = schema.filters.iter().map(|f| f.to_string()).zip(dropped).collect();
    report.rows_kept = table.rows.len();
    let n = table.rows.len();

    let treated: Vec<bool> = table.derive(&schema.treatment)?.into_iter().map(|t| t != 0.0).collect();
    let gain = table.derive(&schema.gain)?;
    let cost = table.derive(&schema.cost)?;
    let mut intensity = match &schema.intensity {
        Some(rule) => table.derive(rule)?,
        None => treated.iter().map(|&t| f64::from(u8::from(t))).collect(),
    };
    for (i, t) in treated.iter().enumerate() {
        if !t {
            if intensity[i] != 0.0 && schema.intensity.is_some() {
                return Err(Error::Ingest {
                    row: table.lines[i],
                    column: schema.intensity.as_ref().unwrap().source().to_string(),
                    message: "control subject with non-zero intensity".into(),
                });
            }
            intensity[i] = 0.0;
        }
    }
    let (assignment, assignment_classes) = match &schema.assignment {
        Some(col) => {
            let c = table.col(col)?;
            let levels: BTreeSet<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
            let levels: Vec<&str> = levels.into_iter().collect();
            let a = table
                .rows
                .iter()
                .map(|r| levels.iter().position(|l| *l == r[c]).unwrap())
                .collect();
            (Some(a), levels.len().max(2))
        }
        None => (None, 0),
    };

    let roles: BTreeSet<&str> = schema.role_columns().into_iter().collect();
    let covariate_cols: Vec<String> = match &schema.covariates {
        CovariateSelection::Remaining => table
            .header
            .iter()
            .filter(|h| !roles.contains(h.as_str()) && !schema.drop.contains(h))
            .cloned()
            .collect(),
        CovariateSelection::Listed(cols) => cols.clone(),
    };
    for c in &schema.categorical {
        if !covariate_cols.contains(c) {
            table.col(c)?;
        }
    }

    if n < 5 {
        return Err(Error::Ingest {
            row: 0,
            column: String::new(),
            message: format!("only {n} rows survive the filters"),
        });
    }
    let split = split_3_1_1(&treated, split_seed)?;

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for name in &covariate_cols {
        let c = table.col(name)?;
        if schema.categorical.contains(name) {
            let levels: BTreeSet<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
            let levels: Vec<String> = levels.into_iter().map(String::from).collect();
            for level in &levels {
                names.push(format!("{name}={level}"));
                columns.push(table.rows.iter().map(|r| f64::from(u8::from(&r[c] == level))).collect());
            }
            report.one_hot.push((name.clone(), levels));
        } else {
            let mut v: Vec<f64> = (0..n).map(|r| table.number(r, c)).collect::<Result<_>>()?;
            let m = split.train.len() as f64;
            let mean = split.train.iter().map(|&i| v[i]).sum::<f64>() / m;
            let var = split.train.iter().map(|&i| (v[i] - mean).powi(2)).sum::<f64>() / m;
            let sd = if var > 0.0 {
                var.sqrt()
            } else {
                report.constant_columns.push(name.clone());
                1.0
            };
            v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
            names.push(name.clone());
            columns.push(v);
        }
    }
    let dim = names.len();
    let mut covariates = Vec::with_capacity(n * dim);
    for r in 0..n {
        covariates.extend(columns.iter().map(|col| col[r]));
    }

    let dataset = CohortDataset {
        feature_names: names,
        covariates,
        dim,
        treated,
        intensity,
        assignment,
        assignment_classes,
        item_covariates: None,
        item_dim: 0,
        gain,
        cost,
    };
    dataset.validate().map_err(|e| Error::Ingest {
        row: 0,
        column: String::new(),
        message: e.to_string(),
    })?;
    Ok(Ingested {
        dataset,
        split,
        report,
    })
}

/// Per-column `(mean, sd)` over `rows`, with the unit-scale convention for
/// constant columns.
pub fn column_stats(ds: &CohortDataset, rows: &[usize]) -> Vec<(f64, f64)> {
    let m = rows.len() as f64;
    (0..ds.dim)
        .map(|j| {
            let mean = rows.iter().map(|&i| ds.row(i)[j]).sum::<f64>() / m;
            let var = rows.iter().map(|&i| (ds.row(i)[j] - mean).powi(2)).sum::<f64>() / m;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    const TOY: &str = "\
id,age,color,t,y,c
1,30,red,1,5.0,1
2,40,green,0,3.0,0
3,50,blue,1,4.0,1
4,60,red,0,2.0,0
5,70,green,1,6.0,1
6,80,blue,0,1.0,0
";

    fn toy_schema() -> SchemaConfig {
        SchemaConfig::parse("treatment = t\ngain = y\ncost = c\ncategorical = color\ndrop = id\n").unwrap()
    }

    #[test]
    fn one_hot_grows_width_by_level_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "toy.csv", TOY);
        let out = load_csv(&path, &toy_schema(), 1).unwrap();
        // age + 3 color levels
        assert_eq!(out.dataset.dim, 4);
        assert_eq!(out.dataset.feature_names[1..], ["color=blue", "color=green", "color=red"]);
        assert_eq!(out.dataset.row(0)[1..], [0.0, 0.0, 1.0]);
        assert_eq!(out.report.one_hot[0].1.len(), 3);
    }

    #[test]
    fn z_score_uses_training_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "toy.csv", TOY);
        let out = load_csv(&path, &toy_schema(), 3).unwrap();
        let stats = column_stats(&out.dataset, &out.split.train);
        assert!(stats[0].0.abs() < 1e-12);
        assert!((stats[0].1 - 1.0).abs() < 1e-12);
        let raw = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0];
        let m = out.split.train.len() as f64;
        let mean = out.split.train.iter().map(|&i| raw[i]).sum::<f64>() / m;
        let sd = (out.split.train.iter().map(|&i| (raw[i] - mean).powi(2)).sum::<f64>() / m).sqrt();
        for i in out.split.validation.iter().chain(&out.split.test) {
            assert!((out.dataset.row(*i)[0] - (raw[*i] - mean) / sd).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_is_flagged_and_centred() {
        let dir = tempfile::tempdir().unwrap();
        let text = TOY.replace(",30,", ",9,").replace(",40,", ",9,").replace(",50,", ",9,");
        let text = text.replace(",60,", ",9,").replace(",70,", ",9,").replace(",80,", ",9,");
        let path = write(dir.path(), "const.csv", &text);
        let out = load_csv(&path, &toy_schema(), 1).unwrap();
        assert_eq!(out.report.constant_columns, vec!["age".to_string()]);
        assert!((0..6).all(|i| out.dataset.row(i)[0] == 0.0));
    }

    #[test]
    fn filters_drop_rows_and_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "toy.csv", &(TOY.to_string() + "7,90,red,1,1.0,1\n8,20,red,0,1.0,0\n"));
        let mut schema = toy_schema();
        schema.filters.push(super::super::schema::Filter::parse("age <= 80").unwrap());
        schema.filters.push(super::super::schema::Filter::parse("age > 25").unwrap());
        let out = load_csv(&path, &schema, 1).unwrap();
        assert_eq!(out.report.rows_read, 8);
        assert_eq!(out.report.rows_kept, 6);
        assert_eq!(out.report.dropped_by_filter.iter().map(|d| d.1).collect::<Vec<_>>(), [1, 1]);
    }

    #[test]
    fn errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "bad.csv", &TOY.replace("4,60,", "4,sixty,"));
        match load_csv(&path, &toy_schema(), 1) {
            Err(Error::Ingest { row, column, .. }) => {
                assert_eq!(row, 5);
                assert_eq!(column, "age");
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
        let mut schema = toy_schema();
        schema.gain = ColumnRule::Column("revenue".into());
        assert!(matches!(load_csv(&path, &schema, 1), Err(Error::Ingest { .. })));
        assert!(matches!(
            load_csv(&dir.path().join("missing.csv"), &toy_schema(), 1),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn median_rules_use_strict_inequality() {
        let dir = tempfile::tempdir().unwrap();
        let text = "h,y,c\n1,0,0\n2,0,0\n3,0,0\n4,0,0\n5,0,0\n";
        let path = write(dir.path(), "m.csv", text);
        let schema = SchemaConfig::parse("treatment = below_median(h)\ngain = y\ncost = c\ncovariates = h").unwrap();
        let out = load_csv(&path, &schema, 1).unwrap();
        // median 3: the row at the median is control
        assert_eq!(out.dataset.treated, [true, true, false, false, false]);
        let above = SchemaConfig::parse("treatment = above_median(h)\ngain = y\ncost = c\ncovariates = h").unwrap();
        let out = load_csv(&path, &above, 1).unwrap();
        assert_eq!(out.dataset.treated, [false, false, false, true, true]);
    }

    #[test]
    fn census_recipe_drops_non_citizens() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("caseid,dAge,dHours,dIncome1,iCitizen,iFertil,iSex\n");
        for k in 0..8 {
            text += &format!("{k},{},{},{},0,{},{}\n", k % 4, k * 5, k % 3, 2 + k % 2, k % 2);
        }
        text += "100,1,20,1,1,3,0\n";
        let path = write(dir.path(), "census.csv", &text);
        let out = load_csv(&path, &super::super::schema::census_recipe(), 0).unwrap();
        assert_eq!(out.dataset.len(), 8);
        assert_eq!(out.dataset.treated_count(), 4);
        assert!(out.dataset.cost.iter().all(|&c| c <= -2.0));
    }

    #[test]
    fn covtype_spruce_fir_has_zero_cost() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from(
            "Elevation,Horizontal_Distance_To_Hydrology,Vertical_Distance_To_Hydrology,Horizontal_Distance_To_Fire_Points,Cover_Type\n",
        );
        for k in 0..10 {
            text += &format!("{},{},{},{},{}\n", 2000 + k, k * 10, k, 100 - k, 1 + k % 3);
        }
        let path = write(dir.path(), "cov.csv", &text);
        let out = load_csv(&path, &super::super::schema::covtype_recipe(), 0).unwrap();
        assert_eq!(out.report.rows_kept, 7);
        assert_eq!(out.dataset.feature_names, ["Elevation"]);
        let kept_types = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0];
        for (i, t) in kept_types.iter().enumerate() {
            assert_eq!(out.dataset.cost[i], if *t == 1.0 { 0.0 } else { 1.0 });
        }
    }
}
