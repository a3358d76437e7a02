//! Config-driven Sim2Sim tuning campaigns, validation and ablations.

mod config;
mod env;
mod output;
mod run;

pub use config::{default_target_plant, CampaignConfig, PathLibraryConfig, PathSet};
pub use env::VehicleEnvironment;
pub use output::{
    baseline_csv, cases_csv, iterations_csv, spread_csv, validation_csv, write_bytes, write_campaign,
};
pub use run::{
    aggregate_path_error, compare_cases, run_baseline_suite, run_campaign, run_mode_comparison, spread_row,
    validate_params, BaselineRow, CampaignRun, CampaignSummary, CaseComparison, IterationRow, SpreadRow,
    ValidationRow,
};
