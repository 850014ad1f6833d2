use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percent relative bias and MSE of an estimator over `K` replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub rb: f64,
    pub mse: f64,
}

/// Cascade summation in fixed halves; deterministic for a given order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `RB = 100/K Σ (t̂_k − t_k)/t_k`, `MSE = 1/K Σ (t̂_k − t_k)²`, with each
/// replicate measured against its own population total.
pub fn metrics(estimates: &[f64], totals: &[f64]) -> Result<EstimatorMetrics> {
    if estimates.is_empty() {
        return Err(Error::Metric("no replicates".into()));
    }
    if estimates.len() != totals.len() {
        return Err(Error::Metric("one population total per estimate required".into()));
    }
    if let Some(k) = totals.iter().position(|&t| t == 0.0 || !t.is_finite()) {
        return Err(Error::Metric(format!("population total of replicate {k} is {}", totals[k])));
    }
    let k = estimates.len() as f64;
    let rel: Vec<f64> = estimates.iter().zip(totals).map(|(e, t)| (e - t) / t).collect();
    let sq: Vec<f64> = estimates.iter().zip(totals).map(|(e, t)| (e - t).powi(2)).collect();
    Ok(EstimatorMetrics {
        rb: 100.0 * pairwise_sum(&rel) / k,
        mse: pairwise_sum(&sq) / k,
    })
}

/// `RE = 100 · MSE(t̂*) / MSE(t̂)`.
pub fn relative_efficiency(candidate: &EstimatorMetrics, reference: &EstimatorMetrics) -> Result<f64> {
    if reference.mse == 0.0 {
        return Err(Error::Metric("reference MSE is zero".into()));
    }
    Ok(100.0 * candidate.mse / reference.mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn exact_estimates() {
        let t = [10.0, 20.0, 5.0];
        let m = metrics(&t, &t).unwrap();
        assert_eq!((m.rb, m.mse), (0.0, 0.0));
        let e: Vec<f64> = t.iter().map(|x| 1.01 * x).collect();
        let m = metrics(&e, &t).unwrap();
        assert!((m.rb - 1.0).abs() < 1e-12);
        let want = t.iter().map(|x| (0.01 * x).powi(2)).sum::<f64>() / 3.0;
        assert!((m.mse - want).abs() < 1e-12 * want);
    }

    #[test]
    fn single_replicate_is_defined() {
        let m = metrics(&[11.0], &[10.0]).unwrap();
        assert!((m.rb - 10.0).abs() < 1e-12 && (m.mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(metrics(&[1.0], &[0.0]), Err(Error::Metric(_))));
        assert!(matches!(metrics(&[], &[]), Err(Error::Metric(_))));
        let z = EstimatorMetrics { rb: 0.0, mse: 0.0 };
        assert!(relative_efficiency(&z, &z).is_err());
    }

    #[test]
    fn matches_streaming_mean() {
        let mut rng = seeded(12);
        let k = 100_000;
        let totals: Vec<f64> = (0..k).map(|_| rng.random_range(1e3..1e4)).collect();
        let est: Vec<f64> = totals.iter().map(|t| t * rng.random_range(0.5..1.5)).collect();
        // Welford-style running means.
        let (mut rb, mut mse) = (0.0, 0.0);
        for (i, (e, t)) in est.iter().zip(&totals).enumerate() {
            let n = (i + 1) as f64;
            rb += (100.0 * (e - t) / t - rb) / n;
            mse += ((e - t).powi(2) - mse) / n;
        }
        let m = metrics(&est, &totals).unwrap();
        assert!((m.rb - rb).abs() <= 1e-12 * rb.abs().max(1.0));
        assert!((m.mse - mse).abs() <= 1e-12 * mse);
    }
}
