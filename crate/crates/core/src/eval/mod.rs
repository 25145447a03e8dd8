//! Image and task metrics, per-model evaluation over real bitstreams, and
//! Bjøntegaard comparison of rate-distortion curves.

mod bd;
mod evaluate;
mod metrics;
mod report;

pub use bd::{
    bd_quality, bd_quality_with_overlap, bd_rate, bd_rate_with_overlap, bd_report, BDReport, Metric, Pchip, RDCurve,
    RDPoint, TaskMetric,
};
pub use evaluate::{
    aggregate, evaluate_model, evaluate_model_lenient, evaluate_uncompressed, read_records, records_to_jsonl,
    write_records, EvalSample, ImageRecord, ModelEvaluation, TaskRecord, UNCOMPRESSED_BPP,
};
pub use metrics::{
    average_precision, iou_thresholds, miou, ms_ssim, ms_ssim_scales, mse, psnr, psnr_from_mse, wap, IouAccumulator,
    ScoredInstance,
};
pub use report::{bd_table, emit_report, rd_plot_svg, results_table};
