//! Novelty slopes and their preprocessing into HMM observations.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::cache::{NeuronKey, Row};
use crate::num::Float;
use crate::stats;

/// Additive guard in the robust standardization denominator.
pub const MAD_EPSILON: f64 = 1e-12;

/// Raw and processed per-row novelty series for one trace.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeSeries<F> {
    /// `s_r`: new neurons per token.
    pub raw: Vec<F>,
    /// `z_r`: log-transformed, detrended, robustly standardized.
    pub processed: Vec<F>,
    /// Trend intercept and slope on `log(1 + r)`.
    pub intercept: F,
    pub trend: F,
    /// Median of residuals.
    pub location: F,
    /// MAD of residuals.
    pub scale: F,
}

impl<F: Float> SlopeSeries<F> {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Row of the `.slopes.jsonl` debug dump.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeDumpRow {
    pub r: usize,
    pub s: f64,
    pub z: f64,
}

impl<F: Float> SlopeSeries<F> {
    pub fn dump_rows(&self) -> Vec<SlopeDumpRow> {
        self.raw
            .iter()
            .zip(&self.processed)
            .enumerate()
            .map(|(r, (&s, &z))| SlopeDumpRow {
                r,
                s: s.to_f64_lossless(),
                z: z.to_f64_lossless(),
            })
            .collect()
    }
}

/// `s_r = |N_r \ N_{<r}| / |T_r|`. Row 0 counts its whole set as new.
pub fn novelty_slopes<F: Float>(rows: &[Row<F>]) -> Vec<F> {
    let mut seen: BTreeSet<NeuronKey> = BTreeSet::new();
    rows.iter()
        .map(|row| {
            let fresh = row.neurons.iter().filter(|k| seen.insert(**k)).count();
            if row.token_count() == 0 {
                F::zero()
            } else {
                F::from_usize_lossy(fresh) / F::from_usize_lossy(row.token_count())
            }
        })
        .collect()
}

/// Least-squares fit of `values[r] ~ a + b log(1 + r)` with 0-based `r`.
pub fn fit_log_trend<F: Float>(values: &[F]) -> (F, F) {
    let xs: Vec<F> = (0..values.len())
        .map(|r| F::from_usize_lossy(r).ln_1p())
        .collect();
    stats::ols_line(&xs, values)
}

/// Residual spread treated as zero. Relative to the magnitude of the
/// log-slopes so that round-off from the trend fit on a flat series does not
/// get amplified into spurious observations.
fn flat_tolerance<F: Float>(log_slopes: &[F]) -> F {
    let peak = log_slopes
        .iter()
        .fold(F::one(), |acc, &v| if v.abs() > acc { v.abs() } else { acc });
    F::epsilon() * F::lit(1024.0) * peak
}

/// Log transform, log-trend removal, and median/MAD standardization.
///
/// Panics if `raw` is empty.
pub fn preprocess<F: Float>(raw: &[F]) -> SlopeSeries<F> {
    assert!(!raw.is_empty(), "preprocess needs at least one row");
    let logged: Vec<F> = raw.iter().map(|s| s.ln_1p()).collect();

    if logged.len() == 1 {
        return SlopeSeries {
            raw: raw.to_vec(),
            processed: vec![F::zero()],
            intercept: logged[0],
            trend: F::zero(),
            location: F::zero(),
            scale: F::zero(),
        };
    }

    let (intercept, trend) = fit_log_trend(&logged);
    let residuals: Vec<F> = logged
        .iter()
        .enumerate()
        .map(|(r, &y)| y - (intercept + trend * F::from_usize_lossy(r).ln_1p()))
        .collect();
    let location = stats::median(&residuals).expect("nonempty");
    let scale = stats::mad_about(&residuals, location).expect("nonempty");

    let processed = if scale <= flat_tolerance(&logged) {
        vec![F::zero(); residuals.len()]
    } else {
        let denom = scale + F::lit(MAD_EPSILON);
        residuals.iter().map(|&x| (x - location) / denom).collect()
    };

    SlopeSeries {
        raw: raw.to_vec(),
        processed,
        intercept,
        trend,
        location,
        scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn row(index: usize, tokens: usize, keys: &[u32]) -> Row<f64> {
        Row {
            index,
            start: index * 32,
            end: index * 32 + tokens,
            neurons: keys.iter().map(|&k| NeuronKey::from_packed(k)).collect(),
            masses: BTreeMap::new(),
        }
    }

    #[test]
    fn slopes_from_set_difference() {
        let rows = vec![row(0, 32, &[1, 2, 3]), row(1, 32, &[2, 3, 4])];
        assert_eq!(novelty_slopes(&rows), vec![3.0 / 32.0, 1.0 / 32.0]);
    }

    #[test]
    fn identical_sets_only_first_row_is_novel() {
        let rows: Vec<_> = (0..4).map(|i| row(i, 32, &[5, 6, 7, 8])).collect();
        assert_eq!(novelty_slopes(&rows), vec![4.0 / 32.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn partial_row_is_token_normalized() {
        let rows = vec![row(0, 32, &[1]), row(1, 32, &[2]), row(2, 8, &[3])];
        assert_eq!(novelty_slopes(&rows), vec![1.0 / 32.0, 1.0 / 32.0, 1.0 / 8.0]);
    }

    #[test]
    fn constant_series_is_flat() {
        let s = preprocess(&[0.25f64; 20]);
        assert!(s.processed.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn single_row() {
        let s = preprocess(&[0.5f64]);
        assert_eq!(s.processed, vec![0.0]);
        assert_eq!(s.intercept, 0.5f64.ln_1p());
        assert_eq!(s.trend, 0.0);
    }

    #[test]
    fn model_matched_input_has_zero_residuals() {
        let (a, b) = (0.5f64, -0.1f64);
        let raw: Vec<f64> = (0..40)
            .map(|r| (a + b * (r as f64).ln_1p()).exp() - 1.0)
            .collect();
        let s = preprocess(&raw);
        assert!((s.intercept - a).abs() < 1e-9);
        assert!((s.trend - b).abs() < 1e-9);
        assert!(s.location.abs() < 1e-9 && s.scale.abs() < 1e-9);
        assert!(s.processed.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn works_in_single_precision() {
        let raw: Vec<f32> = (0..30).map(|r| if r % 5 < 2 { 0.3 } else { 0.02 }).collect();
        let s = preprocess(&raw);
        assert_eq!(s.processed.len(), 30);
        assert!(s.processed.iter().all(|z| z.is_finite()));
    }
}
