use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearningError;

/// Dense labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        Self {
            dim,
            num_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(
        dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, LearningError> {
        if features.len() != dim * labels.len() {
            return Err(LearningError::Shape(format!(
                "{} features for {} samples of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(LearningError::LabelOutOfRange {
                label: y,
                classes: num_classes,
            });
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    /// Panics on a width mismatch or an out-of-range label.
    pub fn push(&mut self, x: &[f64], y: usize) {
        assert_eq!(x.len(), self.dim, "feature width");
        assert!(y < self.num_classes, "label {y} out of range");
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.dim, self.num_classes);
        out.features.reserve(indices.len() * self.dim);
        for &i in indices {
            out.features.extend_from_slice(self.x(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Concatenation of shards with the same shape.
    pub fn concat<'a>(
        dim: usize,
        num_classes: usize,
        parts: impl IntoIterator<Item = &'a Dataset>,
    ) -> Self {
        let mut out = Self::new(dim, num_classes);
        for p in parts {
            assert_eq!((p.dim, p.num_classes), (dim, num_classes), "shard shape");
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }

    /// Random split; the first part gets `round(fraction · len)` samples.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let k = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        (self.subset(&idx[..k]), self.subset(&idx[k..]))
    }

    /// One row per sample: label then features.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LearningError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for i in 0..self.len() {
            let mut row = Vec::with_capacity(self.dim + 1);
            row.push(self.labels[i].to_string());
            row.extend(self.x(i).iter().map(|v| format!("{v:?}")));
            out.write_record(&row)
                .map_err(|e| LearningError::Io(e.to_string()))?;
        }
        out.flush().map_err(|e| LearningError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R, num_classes: usize) -> Result<Self, LearningError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut out: Option<Self> = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LearningError::Io(e.to_string()))?;
            let bad = |what: &str| LearningError::Shape(format!("line {}: {what}", line + 1));
            let y: usize = rec
                .get(0)
                .ok_or_else(|| bad("empty row"))?
                .parse()
                .map_err(|_| bad("label"))?;
            let x = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("feature"))?;
            let d = out.get_or_insert_with(|| Self::new(x.len(), num_classes));
            if x.len() != d.dim {
                return Err(bad("width"));
            }
            if y >= num_classes {
                return Err(LearningError::LabelOutOfRange {
                    label: y,
                    classes: num_classes,
                });
            }
            d.push(&x, y);
        }
        out.ok_or_else(|| LearningError::Shape("no rows".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn csv_round_trip_is_exact() {
        let d = Dataset::from_parts(2, 3, vec![0.1, -2.5e-7, 1.0 / 3.0, 4.0], vec![2, 0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::read_csv(&buf[..], 3).unwrap(), d);
        assert!(Dataset::read_csv(&b"5,1.0\n"[..], 3).is_err());
    }

    #[test]
    fn split_and_concat_preserve_samples() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut d = Dataset::new(1, 2);
        for i in 0..10 {
            d.push(&[i as f64], i % 2);
        }
        let (a, b) = d.split(0.3, &mut rng);
        assert_eq!((a.len(), b.len()), (3, 7));
        let back = Dataset::concat(1, 2, [&a, &b]);
        let mut xs: Vec<f64> = back.features().to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(d.class_histogram(), vec![5, 5]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::from_parts(2, 2, vec![0.0; 3], vec![0]).is_err());
        assert!(Dataset::from_parts(1, 2, vec![0.0], vec![2]).is_err());
    }
}
