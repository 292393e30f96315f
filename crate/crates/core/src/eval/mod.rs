//! Detection metrics and the leave-one-material-out protocol.

mod metric;
mod protocol;
mod report;

pub use metric::{tdr_at_fdr, TdrAtFdr};
pub use protocol::{
    build_splits, derive_seed, generator_seed, generator_style_set, known_material_eval, pretrain_seed, run_experiment,
    run_protocol, run_seed, select_few_shot, Arm, Experiment, ExperimentPlan, PatchCorpus,
    ProtocolOutcome, Splits,
};
pub use report::{
    aggregate, ArmReport, ExperimentReport, GeneratorSummary, RunRecord, SplitKind, EPOCH_HEADER,
    REPORT_SCHEMA, SUMMARY_HEADER,
};
