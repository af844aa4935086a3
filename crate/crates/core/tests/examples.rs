//! Every example runs to completion in its default (quick) mode.

#[allow(dead_code)]
#[path = "../examples/analysis_report.rs"]
mod analysis_report;

#[test]
fn analysis_report_runs() {
    analysis_report::run_example(&[]).expect("analysis_report example");
}

#[allow(dead_code)]
#[path = "../examples/contrastive_pretraining.rs"]
mod contrastive_pretraining;

#[test]
fn contrastive_pretraining_runs() {
    contrastive_pretraining::run_example(&[]).expect("contrastive_pretraining example");
}

#[allow(dead_code)]
#[path = "../examples/corpus_pipeline.rs"]
mod corpus_pipeline;

#[test]
fn corpus_pipeline_runs() {
    corpus_pipeline::run_example(&[]).expect("corpus_pipeline example");
}

#[allow(dead_code)]
#[path = "../examples/gradient_check.rs"]
mod gradient_check;

#[test]
fn gradient_check_runs() {
    gradient_check::run_example(&[]).expect("gradient_check example");
}

#[allow(dead_code)]
#[path = "../examples/hicl_finetune.rs"]
mod hicl_finetune;

#[test]
fn hicl_finetune_runs() {
    hicl_finetune::run_example(&[]).expect("hicl_finetune example");
}

#[allow(dead_code)]
#[path = "../examples/reproducible_runs.rs"]
mod reproducible_runs;

#[test]
fn reproducible_runs_runs() {
    reproducible_runs::run_example(&[]).expect("reproducible_runs example");
}

#[allow(dead_code)]
#[path = "../examples/topic_retrieval.rs"]
mod topic_retrieval;

#[test]
fn topic_retrieval_runs() {
    topic_retrieval::run_example(&[]).expect("topic_retrieval example");
}

#[allow(dead_code)]
#[path = "../examples/trigger_layout.rs"]
mod trigger_layout;

#[test]
fn trigger_layout_runs() {
    trigger_layout::run_example(&[]).expect("trigger_layout example");
}
