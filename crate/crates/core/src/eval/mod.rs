//! Metrics, greedy evaluation rollouts, fold aggregation and reporting.

pub mod metrics;
pub mod plot;
pub mod report;
pub mod rollout;

pub use metrics::{auc, demographic_disparity, pareto_front, quantile_sorted, quartiles, Quartiles};
pub use plot::render_tradeoff_svg;
pub use report::{
    aggregate_folds, parse_report_csv, sort_rows, write_aggregate_csv, write_report_csv, AggregateRow, TradeoffRow,
    AGGREGATE_HEADER, REPORT_HEADER,
};
pub use rollout::{
    baseline_full_features, evaluate_policy, rollout_with, EvalRun, EvalSummary, InstanceOutcome, DECISION_THRESHOLD,
};
