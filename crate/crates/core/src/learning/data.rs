use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LearningError;

/// Labeled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, LearningError> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(LearningError::MalformedDataset(format!(
                "{} feature values for {} labels of width {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(LearningError::MalformedDataset(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given rows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Reads `f_1,...,f_d,label` rows. A first row that does not parse as
    /// numbers is treated as a header.
    pub fn from_csv(path: &Path, n_classes: usize) -> Result<Self, LearningError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| LearningError::MalformedDataset(format!("{}: {e}", path.display())))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| LearningError::MalformedDataset(format!("line {}: {e}", line + 1)))?;
            if record.len() < 2 {
                return Err(LearningError::MalformedDataset(format!(
                    "line {}: need at least one feature and a label",
                    line + 1
                )));
            }
            let parsed: Result<Vec<f64>, _> = record
                .iter()
                .take(record.len() - 1)
                .map(str::parse::<f64>)
                .collect();
            let label = record[record.len() - 1].parse::<usize>();
            let (row, label) = match (parsed, label) {
                (Ok(row), Ok(label)) => (row, label),
                _ if line == 0 => continue,
                _ => {
                    return Err(LearningError::MalformedDataset(format!(
                        "line {}: non-numeric field",
                        line + 1
                    )))
                }
            };
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(LearningError::MalformedDataset(format!(
                        "line {}: expected {w} features, found {}",
                        line + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            features.extend(row);
            labels.push(label);
        }
        let width =
            width.ok_or_else(|| LearningError::MalformedDataset(format!("{} is empty", path.display())))?;
        Dataset::new(features, labels, width, n_classes)
    }
}

/// Gaussian class clusters: each class has a center drawn from a standard
/// normal, and samples scatter around it with standard deviation
/// `cluster_spread`. Labels cycle through the classes, so both splits are
/// balanced.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub n_classes: usize,
    pub n_features: usize,
    pub cluster_spread: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub struct SyntheticData {
    pub centers: Vec<Vec<f64>>,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate_clusters<R: Rng + ?Sized>(spec: &ClusterSpec, rng: &mut R) -> SyntheticData {
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..spec.n_features).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let draw = |n: usize, rng: &mut R| {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
        labels.shuffle(rng);
        let mut features = Vec::with_capacity(n * spec.n_features);
        for &label in &labels {
            for &c in &centers[label] {
                let noise: f64 = StandardNormal.sample(rng);
                features.push(c + spec.cluster_spread * noise);
            }
        }
        Dataset {
            features,
            labels,
            n_features: spec.n_features,
            n_classes: spec.n_classes,
        }
    };
    let train = draw(spec.n_train, rng);
    let test = draw(spec.n_test, rng);
    SyntheticData { centers, train, test }
}
