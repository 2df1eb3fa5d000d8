use std::path::Path;

use scpm::data::{load_csv, recipe, SchemaConfig};

use crate::manifest::RunManifest;
use crate::workspace::{create_dir, dataset_path, write_text, REPORT_FILE};
use crate::{CliError, CliResult};

fn resolve_schema(name: &str) -> CliResult<SchemaConfig> {
    if let Some(s) = recipe(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "schema `{name}` is neither a builtin recipe nor an existing file"
        )));
    }
    Ok(SchemaConfig::load(path)?)
}

pub fn run(input: &Path, schema: &str, out: &Path, seed: u64) -> CliResult<()> {
    if !input.exists() {
        return Err(CliError::Usage(format!("input file {} does not exist", input.display())));
    }
    let schema = resolve_schema(schema)?;
    let ing = load_csv(input, &schema, seed)?;
    create_dir(out)?;
    let cache = dataset_path(out);
    ing.dataset.write_cache(&cache)?;
    ing.split.write_index_files(out)?;
    write_text(&out.join(REPORT_FILE), &ing.report.to_text())?;
    print!("{}", ing.report.to_text());
    println!(
        "dataset {} x {} ({} treated); split {}/{}/{}",
        ing.dataset.len(),
        ing.dataset.dim,
        ing.dataset.treated_count(),
        ing.split.train.len(),
        ing.split.validation.len(),
        ing.split.test.len()
    );
    let mut m = RunManifest::new("ingest");
    m.seeds.push(seed);
    m.inputs.push(input.to_path_buf());
    m.outputs = vec![
        cache,
        out.join(REPORT_FILE),
        out.join("train.idx"),
        out.join("validation.idx"),
        out.join("test.idx"),
    ];
    m.write(out)
}
