//! Dataset container, CSV ingestion with cohort recipes, 3/1/1 splits and a
//! synthetic generator with ground truth.

mod dataset;
mod ingest;
mod schema;
mod split;
mod synth;

pub use dataset::CohortDataset;
pub use ingest::{column_stats, load_csv, IngestReport, Ingested};
pub use schema::{
    census_recipe, covtype_recipe, parse_key_values, recipe, CmpOp, ColumnRule, CovariateSelection, Filter,
    SchemaConfig,
};
pub use split::{split_3_1_1, Split};
pub use synth::{synth_generate, Propensity, SynthSpec, SynthTruth, PRESETS};
