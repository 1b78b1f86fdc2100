//! Generation quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::scenario::RadioMap;

fn same_shape(gt: &RadioMap, gen: &RadioMap) -> Result<()> {
    if gt.grid_n != gen.grid_n || gt.values_dbm.len() != gen.values_dbm.len() {
        return dim_err(format!(
            "maps are {}x{} and {}x{}",
            gt.grid_n, gt.grid_n, gen.grid_n, gen.grid_n
        ));
    }
    Ok(())
}

/// Whether one cell is within tolerance: relative to |gt|, or absolute
/// (in dB) when |gt| < 1 dBm.
pub fn cell_within(gt: f64, gen: f64, etr: f64) -> bool {
    let diff = (gen - gt).abs();
    if gt.abs() < 1.0 {
        diff <= etr
    } else {
        diff / gt.abs() <= etr
    }
}

/// Fraction of cells whose relative error is at most `etr`.
pub fn etr_accuracy(gt: &RadioMap, gen: &RadioMap, etr: f64) -> Result<f64> {
    same_shape(gt, gen)?;
    if etr.is_nan() || etr <= 0.0 {
        return Err(Error::Configuration(format!(
            "etr must be positive, got {etr}"
        )));
    }
    let hits = gt
        .values_dbm
        .iter()
        .zip(&gen.values_dbm)
        .filter(|(&a, &b)| cell_within(a as f64, b as f64, etr))
        .count();
    Ok(hits as f64 / gt.values_dbm.len() as f64)
}

/// Cellwise mean of `maps`.
pub fn baseline_mean_map(maps: &[RadioMap]) -> Result<RadioMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Configuration("mean map of an empty set".into()))?;
    let mut acc = vec![0.0f64; first.values_dbm.len()];
    for m in maps {
        same_shape(first, m)?;
        acc.iter_mut()
            .zip(&m.values_dbm)
            .for_each(|(a, &v)| *a += v as f64);
    }
    let values = acc.iter().map(|a| (a / maps.len() as f64) as f32).collect();
    RadioMap::new(first.grid_n, values, 0, Vec::new())
}

/// Fixed-width bin counts; bin `i` covers `[min + i·w, min + (i+1)·w)`, the
/// last bin also takes the maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min_dbm: f64,
    pub bin_width_db: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of all cells in the fullest bin.
    pub fn modal_fraction(&self) -> f64 {
        let top = self.counts.iter().copied().max().unwrap_or(0);
        top as f64 / self.total().max(1) as f64
    }
}

/// Histogram over `[lo, hi]` with edges anchored at `lo`.
pub fn histogram_in(maps: &[RadioMap], lo: f64, hi: f64, bin_width_db: f64) -> Result<Histogram> {
    if !(bin_width_db > 0.0 && bin_width_db.is_finite()) || lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::Configuration(format!(
            "histogram needs a positive bin width and lo <= hi (got {bin_width_db}, [{lo}, {hi}])"
        )));
    }
    let bins = (((hi - lo) / bin_width_db).ceil() as usize).max(1);
    let mut counts = vec![0u64; bins];
    for v in maps.iter().flat_map(|m| &m.values_dbm) {
        let i = ((*v as f64 - lo) / bin_width_db).floor().max(0.0) as usize;
        counts[i.min(bins - 1)] += 1;
    }
    Ok(Histogram {
        min_dbm: lo,
        bin_width_db,
        counts,
    })
}

/// Histogram spanning the global range of `maps`.
pub fn rss_histogram(maps: &[RadioMap], bin_width_db: f64) -> Result<Histogram> {
    let (lo, hi) = maps
        .iter()
        .map(RadioMap::min_max)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| {
            (l.min(a as f64), h.max(b as f64))
        });
    if maps.is_empty() {
        return histogram_in(maps, 0.0, 0.0, bin_width_db);
    }
    histogram_in(maps, lo, hi, bin_width_db)
}

/// Per-cell `|gen − gt| / max(|gt|, 1)`.
pub fn error_map(gt: &RadioMap, gen: &RadioMap) -> Result<Vec<f64>> {
    same_shape(gt, gen)?;
    Ok(gt
        .values_dbm
        .iter()
        .zip(&gen.values_dbm)
        .map(|(&a, &b)| (b as f64 - a as f64).abs() / (a as f64).abs().max(1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub etr: f64,
    pub accuracy: f64,
    pub per_map_accuracies: Vec<f64>,
    pub histogram_gen: Histogram,
    pub histogram_gt: Histogram,
    pub mean_abs_error_dbm: f64,
}

impl EvalReport {
    /// Scores paired ground-truth and generated maps; both histograms share
    /// the bins of the joint range.
    pub fn from_pairs(
        gt: &[RadioMap],
        gen: &[RadioMap],
        etr: f64,
        bin_width_db: f64,
    ) -> Result<Self> {
        if gt.len() != gen.len() || gt.is_empty() {
            return dim_err(format!(
                "{} ground-truth maps but {} generated",
                gt.len(),
                gen.len()
            ));
        }
        let per_map_accuracies = gt
            .iter()
            .zip(gen)
            .map(|(a, b)| etr_accuracy(a, b, etr))
            .collect::<Result<Vec<_>>>()?;
        let accuracy = per_map_accuracies.iter().sum::<f64>() / gt.len() as f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in gt.iter().chain(gen) {
            let (a, b) = m.min_max();
            lo = lo.min(a as f64);
            hi = hi.max(b as f64);
        }
        let mut abs_sum = 0.0;
        let mut cells = 0usize;
        for (a, b) in gt.iter().zip(gen) {
            for (&x, &y) in a.values_dbm.iter().zip(&b.values_dbm) {
                abs_sum += (x as f64 - y as f64).abs();
                cells += 1;
            }
        }
        Ok(Self {
            etr,
            accuracy,
            per_map_accuracies,
            histogram_gen: histogram_in(gen, lo, hi, bin_width_db)?,
            histogram_gt: histogram_in(gt, lo, hi, bin_width_db)?,
            mean_abs_error_dbm: abs_sum / cells as f64,
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let join = |c: &[u64]| c.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        format!(
            "etr = {}\naccuracy = {:.6}\nmaps = {}\nmean_abs_error_dbm = {:.6}\nhistogram_min_dbm = {:.6}\nhistogram_bin_width_db = {}\nhistogram_gt = {}\nhistogram_gen = {}\n",
            self.etr,
            self.accuracy,
            self.per_map_accuracies.len(),
            self.mean_abs_error_dbm,
            self.histogram_gt.min_dbm,
            self.histogram_gt.bin_width_db,
            join(&self.histogram_gt.counts),
            join(&self.histogram_gen.counts),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f32]) -> RadioMap {
        let n = (values.len() as f64).sqrt() as usize;
        RadioMap::new(n, values.to_vec(), 0, Vec::new()).unwrap()
    }

    #[test]
    fn etr_examples() {
        let gt = map(&[-100.0; 4]);
        assert_eq!(etr_accuracy(&gt, &gt, 0.01).unwrap(), 1.0);
        let gen = map(&[-105.0, -109.0, -111.0, -100.0]);
        assert_eq!(etr_accuracy(&gt, &gen, 0.10).unwrap(), 0.75);
        assert_eq!(etr_accuracy(&gt, &gen, f64::INFINITY).unwrap(), 1.0);
        assert!(etr_accuracy(&gt, &map(&[0.0; 9]), 0.1).is_err());
        assert!(etr_accuracy(&gt, &gen, 0.0).is_err());
    }

    #[test]
    fn small_magnitudes_use_absolute_tolerance() {
        let gt = map(&[0.5, -0.2, 10.0, -10.0]);
        let gen = map(&[0.55, 0.0, 10.5, -12.0]);
        // diffs 0.05, 0.2, 0.5 (5%), 2.0 (20%)
        assert_eq!(etr_accuracy(&gt, &gen, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn mean_map() {
        let a = map(&[-10.0, -20.0, -30.0, -40.0]);
        let b = map(&[-20.0, -20.0, -50.0, 0.0]);
        assert_eq!(
            baseline_mean_map(std::slice::from_ref(&a))
                .unwrap()
                .values_dbm,
            a.values_dbm
        );
        assert_eq!(
            baseline_mean_map(&[a, b]).unwrap().values_dbm,
            vec![-15.0, -20.0, -40.0, -20.0]
        );
        assert!(baseline_mean_map(&[]).is_err());
    }

    #[test]
    fn histogram_conserves_cells() {
        let a = map(&[-10.0, -20.0, -30.0, -40.0]);
        let b = map(&[-15.0, -25.0, -35.0, -45.0]);
        let h = rss_histogram(std::slice::from_ref(&a), 100.0).unwrap();
        assert_eq!(h.counts, vec![4]);
        let h = rss_histogram(&[a, b], 10.0).unwrap();
        assert_eq!(h.counts, vec![2, 2, 2, 2]);
        assert_eq!(h.min_dbm, -45.0);
        assert!(rss_histogram(&[], 0.0).is_err());
    }

    #[test]
    fn error_map_cases() {
        let a = map(&[-10.0, -20.0, -0.5, -40.0]);
        assert!(error_map(&a, &a).unwrap().iter().all(|&e| e == 0.0));
        let mut b = a.clone();
        b.values_dbm[2] = 0.5;
        let e = error_map(&a, &b).unwrap();
        assert_eq!(e.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(e[2], 1.0);
    }

    #[test]
    fn report_text() {
        let gt = vec![map(&[-100.0; 4])];
        let gen = vec![map(&[-105.0, -109.0, -111.0, -100.0])];
        let r = EvalReport::from_pairs(&gt, &gen, 0.1, 10.0).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.histogram_gt.total(), 4);
        assert_eq!(r.histogram_gen.total(), 4);
        assert!(r.to_text().contains("accuracy = 0.750000\n"));
        assert_eq!(r.mean_abs_error_dbm, 25.0 / 4.0);
    }
}
