//! Accuracy-matrix bookkeeping, average final accuracy, forgetting and
//! coreset purity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("final row lacks an accuracy for taught class {0}")]
    IncompleteRow(usize),
    #[error("forgetting needs at least two experiences, got {0}")]
    TooFewExperiences(usize),
    #[error("no taught class has a later experience")]
    NoForgettingPairs,
    #[error("coreset store is empty")]
    EmptyStore,
    #[error("accuracy {value} at ({row}, {class}) outside [0,1]")]
    OutOfRange { row: usize, class: usize, value: f64 },
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `R[i][c]`: test accuracy on class `c` after experience `i`, or absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
    /// Experience that taught each class.
    teaching: Vec<Option<usize>>,
}

impl AccuracyMatrix {
    /// All entries absent.
    pub fn new(experiences: usize, teaching: Vec<Option<usize>>) -> Result<Self> {
        if let Some(e) = teaching.iter().flatten().find(|&&e| e >= experiences) {
            return Err(MetricsError::Shape(format!("class taught at experience {e} of {experiences}")));
        }
        let classes = teaching.len();
        Ok(Self {
            rows: vec![vec![None; classes]; experiences],
            teaching,
        })
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>, teaching: Vec<Option<usize>>) -> Result<Self> {
        let mut m = Self::new(rows.len(), teaching)?;
        for (i, row) in rows.into_iter().enumerate() {
            m.set_row(i, row)?;
        }
        Ok(m)
    }

    pub fn set_row(&mut self, i: usize, row: Vec<Option<f64>>) -> Result<()> {
        if i >= self.rows.len() || row.len() != self.teaching.len() {
            return Err(MetricsError::Shape(format!(
                "row {i} of length {} for a {}x{} matrix",
                row.len(),
                self.rows.len(),
                self.teaching.len()
            )));
        }
        for (c, v) in row.iter().enumerate() {
            if let Some(v) = *v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(MetricsError::OutOfRange { row: i, class: c, value: v });
                }
            }
        }
        self.rows[i] = row;
        Ok(())
    }

    pub fn experiences(&self) -> usize {
        self.rows.len()
    }

    pub fn classes(&self) -> usize {
        self.teaching.len()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn get(&self, i: usize, c: usize) -> Option<f64> {
        self.rows[i][c]
    }

    pub fn teaching(&self) -> &[Option<usize>] {
        &self.teaching
    }
}

/// Mean of the final row over every taught class.
pub fn average_final_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    let last = m.rows.last().ok_or(MetricsError::TooFewExperiences(0))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (c, t) in m.teaching.iter().enumerate() {
        if t.is_some() {
            sum += last[c].ok_or(MetricsError::IncompleteRow(c))?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::IncompleteRow(0));
    }
    Ok(sum / count as f64)
}

/// Mean of `R[e_c][c] - R[i][c]` over every taught class `c` and every later
/// experience `i > e_c`, where `e_c` taught `c`. Negative values mean
/// backward transfer.
pub fn forgetting(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.experiences();
    if t < 2 {
        return Err(MetricsError::TooFewExperiences(t));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (c, taught) in m.teaching.iter().enumerate() {
        let Some(e) = *taught else { continue };
        let Some(reference) = m.rows[e][c] else { continue };
        for row in &m.rows[e + 1..] {
            if let Some(v) = row[c] {
                sum += reference - v;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(MetricsError::NoForgettingPairs);
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPurity {
    pub class: usize,
    pub clean: usize,
    pub total: usize,
}

impl ClassPurity {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.clean as f64 / self.total as f64)
    }
}

/// Clean counts of a coreset store at one point in time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PurityRecord {
    pub classes: Vec<ClassPurity>,
}

impl PurityRecord {
    /// A sample is clean when its label is unflipped and it was not perturbed.
    pub fn measure<'a>(entries: impl IntoIterator<Item = (usize, &'a [usize])>, dataset: &Dataset) -> Self {
        let classes = entries
            .into_iter()
            .map(|(class, ids)| ClassPurity {
                class,
                clean: ids.iter().filter(|&&id| dataset.sample(id).is_clean()).count(),
                total: ids.len(),
            })
            .collect();
        Self { classes }
    }
}

/// Unweighted mean over classes of each class's clean fraction.
pub fn purity(record: &PurityRecord) -> Result<f64> {
    let fractions: Vec<f64> = record.classes.iter().filter_map(ClassPurity::fraction).collect();
    if fractions.is_empty() {
        return Err(MetricsError::EmptyStore);
    }
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}
