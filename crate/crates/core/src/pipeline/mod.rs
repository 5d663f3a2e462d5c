//! Orchestration of the full run: pretraining, episodic fine-tuning and
//! group-level cross-validated evaluation.

mod commands;
mod eval;

pub use commands::{
    cmd_eval, cmd_fewshot, cmd_gradcheck, cmd_pretrain, cmd_synth, gradcheck_table, load_encoder, report_csv,
    report_text, PretrainOutcome, CHECKPOINT, CONFIG_ECHO, EPISODE_LOG, FINETUNED, GRADCHECK_TXT, PRETRAIN_LOG,
    REPORT_CSV, REPORT_TXT, TIMING,
};
pub use eval::{
    evaluate, evaluate_with, fold_seed, labeled_budget, Aggregate, EpisodeClassifier, EvalConfig, EvalSummary, FoldResult,
    PrototypeClassifier,
};
