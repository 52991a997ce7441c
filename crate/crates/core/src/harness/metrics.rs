use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Plug-in mutual information (nats) of the empirical joint given by `counts[x][y]`.
pub fn mutual_information(counts: &[Vec<f64>]) -> Result<f64> {
    let cols = counts.first().map_or(0, |r| r.len());
    if counts.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidCounts("rows have different lengths".into()));
    }
    if counts.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::InvalidCounts("counts must be finite and nonnegative".into()));
    }
    let total: f64 = counts.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotal);
    }
    let px: Vec<f64> = counts.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let py: Vec<f64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum::<f64>() / total).collect();
    let mut mi = 0.0;
    for (row, &p_x) in counts.iter().zip(&px) {
        for (&c, &p_y) in row.iter().zip(&py) {
            if c > 0.0 {
                let p = c / total;
                mi += p * (p / (p_x * p_y)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Count table of `(code, latent)` label pairs.
pub fn count_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, codes: usize, latents: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; latents]; codes];
    for (x, y) in pairs {
        c[x][y] += 1.0;
    }
    c
}

/// Per-seed evaluation metrics. Residuals are absent when the learned encoder does
/// not induce a valid observation-level estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub mi_s_hat_vs_s: f64,
    pub mi_z_hat_vs_s: f64,
    pub transition_residual: Option<f64>,
    pub reward_residual: Option<f64>,
    /// Belief-MDP optimum minus `mean_return`.
    pub value_gap: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// CSV shape shared by per-seed rows and the aggregate row.
#[derive(Serialize)]
struct CsvRow<'a> {
    seed: &'a str,
    mi_s_hat_vs_s: f64,
    mi_z_hat_vs_s: f64,
    transition_residual: Option<f64>,
    reward_residual: Option<f64>,
    value_gap: f64,
    mean_return: f64,
    std_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    /// Seeds that reported the metric.
    pub count: usize,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MetricStats {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// Mean and spread of each metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub mi_s_hat_vs_s: MetricStats,
    pub mi_z_hat_vs_s: MetricStats,
    pub transition_residual: Option<MetricStats>,
    pub reward_residual: Option<MetricStats>,
    pub value_gap: MetricStats,
    pub mean_return: MetricStats,
}

impl Aggregate {
    pub fn from_rows(rows: &[MetricsRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("nothing to aggregate".into()));
        }
        let col = |f: fn(&MetricsRow) -> f64| MetricStats::of(&rows.iter().map(f).collect::<Vec<_>>()).unwrap();
        let opt = |f: fn(&MetricsRow) -> Option<f64>| MetricStats::of(&rows.iter().filter_map(f).collect::<Vec<_>>());
        Ok(Aggregate {
            seeds: rows.iter().map(|r| r.seed).collect(),
            mi_s_hat_vs_s: col(|r| r.mi_s_hat_vs_s),
            mi_z_hat_vs_s: col(|r| r.mi_z_hat_vs_s),
            transition_residual: opt(|r| r.transition_residual),
            reward_residual: opt(|r| r.reward_residual),
            value_gap: col(|r| r.value_gap),
            mean_return: col(|r| r.mean_return),
        })
    }
}

/// Per-seed rows followed by one `aggregate` row holding across-seed means, with
/// `std_return` replaced by the across-seed spread of `mean_return`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], agg: &Aggregate) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        let seed = r.seed.to_string();
        w.serialize(CsvRow {
            seed: &seed,
            mi_s_hat_vs_s: r.mi_s_hat_vs_s,
            mi_z_hat_vs_s: r.mi_z_hat_vs_s,
            transition_residual: r.transition_residual,
            reward_residual: r.reward_residual,
            value_gap: r.value_gap,
            mean_return: r.mean_return,
            std_return: r.std_return,
        })?;
    }
    w.serialize(CsvRow {
        seed: "aggregate",
        mi_s_hat_vs_s: agg.mi_s_hat_vs_s.mean,
        mi_z_hat_vs_s: agg.mi_z_hat_vs_s.mean,
        transition_residual: agg.transition_residual.as_ref().map(|s| s.mean),
        reward_residual: agg.reward_residual.as_ref().map(|s| s.mean),
        value_gap: agg.value_gap.mean,
        mean_return: agg.mean_return.mean,
        std_return: agg.mean_return.std,
    })?;
    w.flush()?;
    Ok(())
}

/// Median with the two middle values averaged.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_counts_give_ln2() {
        let mi = mutual_information(&[vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn product_counts_give_zero() {
        let mi = mutual_information(&[vec![2.0, 6.0], vec![3.0, 9.0]]).unwrap();
        assert!(mi.abs() < 1e-15);
    }

    #[test]
    fn thirty_ten_table_matches_entropy_form() {
        // I = H(X) + H(Y) − H(X, Y) with H(X) = H(Y) = ln 2.
        let mi = mutual_information(&[vec![30.0, 10.0], vec![10.0, 30.0]]).unwrap();
        let h_xy = -(2.0 * 0.375 * 0.375f64.ln() + 2.0 * 0.125 * 0.125f64.ln());
        assert!((mi - (2.0 * 2f64.ln() - h_xy)).abs() < 1e-14, "{}", mi);
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(matches!(mutual_information(&[vec![0.0, 0.0]]), Err(Error::ZeroTotal)));
        assert!(matches!(mutual_information(&[]), Err(Error::ZeroTotal)));
        assert!(mutual_information(&[vec![1.0, -1.0]]).is_err());
        assert!(mutual_information(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn aggregate_std_is_recomputable() {
        let row = |seed, ret| MetricsRow {
            seed,
            mi_s_hat_vs_s: 1.0,
            mi_z_hat_vs_s: 0.0,
            transition_residual: None,
            reward_residual: Some(0.5),
            value_gap: 0.1,
            mean_return: ret,
            std_return: 0.0,
        };
        let rows = [row(0, 1.0), row(1, 3.0)];
        let agg = Aggregate::from_rows(&rows).unwrap();
        assert_eq!(agg.mean_return.mean, 2.0);
        assert_eq!(agg.mean_return.std, 1.0);
        assert!(agg.transition_residual.is_none());
        assert_eq!(agg.reward_residual.unwrap().count, 2);
    }

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn mi_is_bounded(cells in proptest::collection::vec(0u32..20, 12)) {
            prop_assume!(cells.iter().any(|&c| c > 0));
            let counts: Vec<Vec<f64>> = cells.chunks(4).map(|r| r.iter().map(|&c| c as f64).collect()).collect();
            let mi = mutual_information(&counts).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= 3f64.ln() + 1e-12);
        }
    }
}
