//! Image similarity and classification evaluation.

mod classification;
mod ssim;

pub use classification::{
    accuracy, confusion_matrix, per_class_accuracy, roc_binary, roc_curve, ClassAccuracy, ConfusionMatrix, EvalReport, RocCurve, RocPoint,
};
pub use ssim::{
    class_scores, planes, ssim_pair, ssim_report, ChannelPolicy, PairingPolicy, PreparedImage, ReportConfig, SsimConfig, SsimReport, SsimRow,
};
