use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    None,
    /// Each feature to `[0, 1]`.
    #[default]
    Minmax,
    /// Each feature to mean 0, population standard deviation 1.
    Zscore,
}

/// Per-feature affine map `x -> (x - offset) / divisor`, fitted on one set
/// of rows and applied to any other. Constant features map to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    mode: NormalizeMode,
    offset: Vec<f64>,
    // 0 marks a constant feature
    divisor: Vec<f64>,
}

impl Normalizer {
    /// Fits on `rows` of `x` (all rows when `None`).
    pub fn fit(x: &Array2<f64>, rows: Option<&[usize]>, mode: NormalizeMode) -> Self {
        let fitted;
        let view = match rows {
            Some(r) => {
                fitted = x.select(Axis(0), r);
                fitted.view()
            }
            None => x.view(),
        };
        let d = x.ncols();
        let (offset, divisor) = match mode {
            NormalizeMode::None => (vec![0.0; d], vec![1.0; d]),
            NormalizeMode::Minmax => view
                .axis_iter(Axis(1))
                .map(|col| {
                    let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
                    let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    (lo, if hi > lo { hi - lo } else { 0.0 })
                })
                .unzip(),
            NormalizeMode::Zscore => view
                .axis_iter(Axis(1))
                .map(|col| {
                    let n = col.len() as f64;
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    (mean, if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 })
                })
                .unzip(),
        };
        Self { mode, offset, divisor }
    }

    pub fn mode(&self) -> NormalizeMode {
        self.mode
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        if self.mode == NormalizeMode::None {
            return;
        }
        for mut row in x.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.divisor[j] == 0.0 {
                    0.0
                } else {
                    (*v - self.offset[j]) / self.divisor[j]
                };
            }
        }
    }
}

/// Normalizes every feature using statistics of the whole dataset.
pub fn normalize(ds: &Dataset, mode: NormalizeMode) -> Dataset {
    let norm = Normalizer::fit(&ds.features, None, mode);
    let mut out = ds.clone();
    norm.apply(&mut out.features);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds(x: Array2<f64>) -> Dataset {
        let n = x.nrows();
        Dataset::new(x, vec![0; n], "t").unwrap()
    }

    #[test]
    fn minmax_column() {
        let out = normalize(&ds(array![[0.0], [5.0], [10.0]]), NormalizeMode::Minmax);
        assert_eq!(out.features.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        for mode in [NormalizeMode::Minmax, NormalizeMode::Zscore] {
            let out = normalize(&ds(array![[3.0], [3.0], [3.0]]), mode);
            assert!(out.features.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zscore_statistics() {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 13 + j * 5) % 17) as f64 * (j + 1) as f64);
        let out = normalize(&ds(x), NormalizeMode::Zscore);
        for col in out.features.axis_iter(Axis(1)) {
            let mean = col.sum() / 50.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fitted_on_train_rows_only() {
        let mut x = array![[0.0], [10.0], [20.0]];
        let norm = Normalizer::fit(&x, Some(&[0, 1]), NormalizeMode::Minmax);
        norm.apply(&mut x);
        assert_eq!(x.column(0).to_vec(), vec![0.0, 1.0, 2.0]);
    }
}
