use super::model::Network;
use super::{Dataset, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub macro_f1: f64,
    pub loss: f64,
}

/// Macro-averaged F1 over `num_classes` classes.
///
/// Every class counts in the average. A class with no true positives, false
/// positives or false negatives (absent from the data and never predicted)
/// scores 0.
pub fn macro_f1(truth: &[usize], predicted: &[usize], num_classes: usize) -> f64 {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    total / num_classes as f64
}

/// Macro-F1 and mean cross-entropy of `params` on `data`. Classes are taken
/// from the model's output width.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Evaluation {
    let net = Network::from_params(params);
    let rows: Vec<usize> = (0..data.len()).collect();
    let predicted: Vec<usize> = rows.iter().map(|&i| net.predict(data.row(i))).collect();
    Evaluation {
        macro_f1: macro_f1(data.labels(), &predicted, params.output_dim()),
        loss: net.loss(data, &rows),
    }
}
