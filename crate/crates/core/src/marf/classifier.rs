use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureVector, MarfError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectModel {
    pub mean: Vec<f64>,
    pub count: u64,
}

/// Per-subject running means of feature vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub subjects: BTreeMap<String, SubjectModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub subject: String,
    pub distance: f64,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.subjects.values().next().map(|m| m.mean.len())
    }

    fn check_dim(&self, found: usize) -> Result<(), MarfError> {
        match self.dimension() {
            Some(expected) if expected != found => {
                Err(MarfError::DimensionMismatch { expected, found })
            }
            _ => Ok(()),
        }
    }

    /// Fold `fv` into the running mean for `subject`.
    pub fn train(&mut self, fv: &FeatureVector, subject: &str) -> Result<(), MarfError> {
        self.check_dim(fv.values.len())?;
        let model = self
            .subjects
            .entry(subject.to_owned())
            .or_insert_with(|| SubjectModel {
                mean: vec![0.0; fv.values.len()],
                count: 0,
            });
        let next = (model.count + 1) as f64;
        for (m, x) in model.mean.iter_mut().zip(&fv.values) {
            *m += (x - *m) / next;
        }
        model.count += 1;
        Ok(())
    }

    /// Combine another set into this one with count-weighted means. Merging
    /// a single-sample set is exactly one `train` step.
    pub fn merge(&mut self, other: &TrainingSet) -> Result<(), MarfError> {
        if let Some(d) = other.dimension() {
            self.check_dim(d)?;
        }
        for (subject, theirs) in &other.subjects {
            let ours = self
                .subjects
                .entry(subject.clone())
                .or_insert_with(|| SubjectModel {
                    mean: vec![0.0; theirs.mean.len()],
                    count: 0,
                });
            let weight = theirs.count as f64;
            let total = (ours.count + theirs.count) as f64;
            for (m, x) in ours.mean.iter_mut().zip(&theirs.mean) {
                *m += (x - *m) * weight / total;
            }
            ours.count += theirs.count;
        }
        Ok(())
    }

    /// Nearest subject mean by Euclidean distance; ties go to the
    /// lexicographically smallest subject id.
    pub fn classify(&self, fv: &FeatureVector) -> Result<Classification, MarfError> {
        if self.is_empty() {
            return Err(MarfError::EmptyModel);
        }
        self.check_dim(fv.values.len())?;
        let mut best: Option<(&String, f64)> = None;
        for (subject, model) in &self.subjects {
            let d2: f64 = model
                .mean
                .iter()
                .zip(&fv.values)
                .map(|(m, x)| (m - x) * (m - x))
                .sum();
            // strict comparison keeps the earlier (smaller) id on ties
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((subject, d2));
            }
        }
        let (subject, d2) = best.expect("non-empty model");
        Ok(Classification {
            subject: subject.clone(),
            distance: d2.sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector { values: v.to_vec() }
    }

    #[test]
    fn own_vector_classifies_at_zero() {
        let mut ts = TrainingSet::new();
        ts.train(&fv(&[1.0, 2.0, 3.0]), "alice").unwrap();
        let c = ts.classify(&fv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!((c.subject.as_str(), c.distance), ("alice", 0.0));
    }

    #[test]
    fn empty_model() {
        assert_eq!(
            TrainingSet::new().classify(&fv(&[1.0])),
            Err(MarfError::EmptyModel)
        );
    }

    #[test]
    fn running_mean() {
        let mut ts = TrainingSet::new();
        for v in [1.0, 2.0, 6.0] {
            ts.train(&fv(&[v]), "s").unwrap();
        }
        let m = &ts.subjects["s"];
        assert_eq!((m.mean[0], m.count), (3.0, 3));
    }

    #[test]
    fn dimension_mismatch() {
        let mut ts = TrainingSet::new();
        ts.train(&fv(&[1.0, 2.0]), "a").unwrap();
        let e = MarfError::DimensionMismatch {
            expected: 2,
            found: 3,
        };
        assert_eq!(ts.train(&fv(&[1.0, 2.0, 3.0]), "b"), Err(e.clone()));
        assert_eq!(ts.classify(&fv(&[1.0, 2.0, 3.0])), Err(e));
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let mut ts = TrainingSet::new();
        ts.train(&fv(&[1.0]), "zed").unwrap();
        ts.train(&fv(&[-1.0]), "amy").unwrap();
        assert_eq!(ts.classify(&fv(&[0.0])).unwrap().subject, "amy");
    }

    #[test]
    fn merging_singletons_equals_training() {
        let vs = [[0.3, 1.7], [2.9, -0.4], [1.1, 0.05]];
        let mut direct = TrainingSet::new();
        let mut merged = TrainingSet::new();
        for v in &vs {
            direct.train(&fv(v), "s").unwrap();
            let mut one = TrainingSet::new();
            one.train(&fv(v), "s").unwrap();
            merged.merge(&one).unwrap();
        }
        assert_eq!(direct, merged);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut ts = TrainingSet::new();
        ts.train(&fv(&[0.1, 1.0 / 3.0, 2.0f64.sqrt()]), "x")
            .unwrap();
        let back: TrainingSet = serde_json::from_str(&serde_json::to_string(&ts).unwrap()).unwrap();
        assert_eq!(back, ts);
    }
}
