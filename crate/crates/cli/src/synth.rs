use std::path::Path;

use scpm::data::{split_3_1_1, synth_generate, SynthSpec, PRESETS};

use crate::manifest::RunManifest;
use crate::workspace::{create_dir, dataset_path, TRUTH_FILE};
use crate::{CliError, CliResult};

pub fn run(preset: &str, seed: u64, rows: Option<usize>, out: &Path) -> CliResult<()> {
    let mut spec = SynthSpec::preset(preset, seed).ok_or_else(|| {
        CliError::Usage(format!("unknown synthetic preset `{preset}`; expected one of {}", PRESETS.join(", ")))
    })?;
    if let Some(n) = rows {
        spec.n = n;
    }
    let (ds, truth) = synth_generate(&spec)?;
    let split = split_3_1_1(&ds.treated, seed)?;
    create_dir(out)?;
    let cache = dataset_path(out);
    ds.write_cache(&cache)?;
    truth.write(&out.join(TRUTH_FILE))?;
    split.write_index_files(out)?;
    println!(
        "{preset}: {} x {} ({} treated), seed {seed}",
        ds.len(),
        ds.dim,
        ds.treated_count()
    );
    let mut m = RunManifest::new("synth");
    m.seeds.push(seed);
    m.outputs = vec![
        cache,
        out.join(TRUTH_FILE),
        out.join("train.idx"),
        out.join("validation.idx"),
        out.join("test.idx"),
    ];
    m.write(out)
}
