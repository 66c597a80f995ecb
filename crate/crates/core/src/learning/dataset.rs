use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::LearningError;
use crate::rng;

/// Isotropic standard deviation of every class blob.
pub const BLOB_SIGMA: f64 = 0.7;

/// Dense row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, LearningError> {
        if num_features == 0 || features.len() != labels.len() * num_features {
            return Err(LearningError::InvalidArgs(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                num_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(LearningError::InvalidArgs(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::InvalidArgs(
                "non-finite feature value".into(),
            ));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    /// Dumps the dataset as CSV (`label,x0,x1,...`) for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.num_features {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.row(i) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Dataset::to_csv`].
    pub fn from_csv(text: &str, num_classes: usize) -> Result<Self, LearningError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| LearningError::InvalidArgs("empty dataset CSV".into()))?;
        let num_features = header.split(',').count().saturating_sub(1);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |what: &str| LearningError::InvalidArgs(format!("row {}: {what}", n + 1));
            let mut cells = line.split(',');
            let label = cells
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| bad("bad label"))?;
            let row: Vec<f64> = cells
                .map(|c| c.parse::<f64>().map_err(|_| bad("bad feature")))
                .collect::<Result<_, _>>()?;
            if row.len() != num_features {
                return Err(bad("wrong column count"));
            }
            labels.push(label);
            features.extend(row);
        }
        Dataset::new(features, labels, num_features, num_classes)
    }
}

/// Generates Gaussian class blobs.
///
/// Each class mean is drawn uniformly from `[-3, 3]^d`; samples are the mean
/// plus isotropic noise with σ = [`BLOB_SIGMA`]. Samples are split evenly
/// across classes with the remainder going to the lowest class indices, and
/// rows are emitted class by class.
pub fn generate_dataset(
    classes: usize,
    features: usize,
    total_samples: usize,
    seed: u64,
) -> Result<Dataset, LearningError> {
    if classes < 2 || features < 2 || total_samples < classes {
        return Err(LearningError::InvalidArgs(format!(
            "need classes >= 2, features >= 2 and total_samples >= classes \
             (got {classes}, {features}, {total_samples})"
        )));
    }
    let mut rng = rng::stream(seed, rng::Stream::Dataset, 0, 0);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..features)
                .map(|_| rng.random_range(-3.0..=3.0))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, BLOB_SIGMA).expect("sigma is positive");
    let base = total_samples / classes;
    let extra = total_samples % classes;
    let mut xs = Vec::with_capacity(total_samples * features);
    let mut ys = Vec::with_capacity(total_samples);
    for (c, mean) in means.iter().enumerate() {
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            xs.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            ys.push(c);
        }
    }
    Dataset::new(xs, ys, features, classes)
}
