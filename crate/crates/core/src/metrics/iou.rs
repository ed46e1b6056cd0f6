use crate::{Error, Result};

/// `counts[truth * n + predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn add(&mut self, truth: u16, predicted: u16) -> Result<()> {
        for l in [truth, predicted] {
            if l as usize >= self.num_classes {
                return Err(Error::LabelOutOfRange { label: l as usize, num_classes: self.num_classes });
            }
        }
        self.counts[truth as usize * self.num_classes + predicted as usize] += 1;
        Ok(())
    }

    pub fn add_all(&mut self, truth: &[u16], predicted: &[u16]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        truth.iter().zip(predicted).try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch("confusion matrices differ in class count".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        match self.total() {
            0 => 0.0,
            t => correct as f64 / t as f64,
        }
    }
}

/// Per-class IoU (`None` for classes absent from both truth and prediction) and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_c = TP / (TP + FP + FN)`; the mean skips absent classes and is 0 when
/// no class is present at all.
pub fn miou(cm: &ConfusionMatrix) -> MiouReport {
    let n = cm.num_classes;
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
            let fp: u64 = (0..n).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    MiouReport { per_class, mean }
}

/// Index of the largest value in each row; ties go to the lower class.
pub fn argmax_rows(logits: &[f32], num_classes: usize) -> Vec<u16> {
    logits
        .chunks(num_classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u16
        })
        .collect()
}
