//! Linear SVMs on extracted features, class weights and class-averaged
//! accuracy.

mod metrics;
mod svm;

pub use metrics::{accuracy, mean_class_accuracy, per_class_accuracy};
pub use svm::{
    class_counts, compute_class_weights, train_svm, ClassWeights, SvmConfig, SvmModel, DEFAULT_WEIGHT_EXPONENT,
};

/// Prediction CSV: `sample_id,label,prediction`.
pub fn predictions_csv(labels: &[usize], predictions: &[usize]) -> String {
    let mut out = String::from("sample_id,label,prediction\n");
    for (i, (l, p)) in labels.iter().zip(predictions).enumerate() {
        out.push_str(&format!("{i},{l},{p}\n"));
    }
    out
}
