//! Small statistics helpers for the harness and the acceptance checks.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean with a two-sided Student-t interval at `level`.
pub fn mean_ci(xs: &[f64], level: f64) -> MeanCi {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return MeanCi {
            mean: m,
            half_width: f64::INFINITY,
            n,
        };
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.5 + level / 2.0))
        .unwrap_or(f64::INFINITY);
    MeanCi {
        mean: m,
        half_width: t * (variance(xs) / n as f64).sqrt(),
        n,
    }
}

/// Interval on the mean of `a[k] − b[k]`.
pub fn paired_diff_ci(a: &[f64], b: &[f64], level: f64) -> MeanCi {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_ci(&d, level)
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// KS statistic and p-value of `xs` against U(lo, hi).
pub fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut u: Vec<f64> = xs
        .iter()
        .map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(k, x)| ((k as f64 + 1.0) / n - x).max(x - k as f64 / n))
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

/// Pearson chi-square p-value of `counts` against a uniform distribution.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let k = counts.len();
    let total: usize = counts.iter().sum();
    if k < 2 || total == 0 {
        return 1.0;
    }
    let e = total as f64 / k as f64;
    let stat: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
    ChiSquared::new((k - 1) as f64)
        .map(|d| 1.0 - d.cdf(stat))
        .unwrap_or(0.0)
}

/// Empirical quantile by linear interpolation, `q ∈ [0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(value, F(value))` points of the empirical CDF.
pub fn empirical_cdf(xs: &[f64]) -> Vec<(f64, f64)> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter()
        .enumerate()
        .map(|(k, x)| (x, (k + 1) as f64 / n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ci_known_values() {
        let c = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95);
        assert_eq!(c.mean, 3.0);
        // t_{0.975,4} = 2.776, s = 1.5811
        assert!((c.half_width - 2.776_445 * 1.581_139 / 5f64.sqrt()).abs() < 1e-4);
        let d = paired_diff_ci(&[2.0, 3.0], &[1.0, 2.0], 0.95);
        assert_eq!((d.mean, d.half_width), (1.0, 0.0));
    }

    #[test]
    fn ks_accepts_uniform_rejects_skew() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_uniform(&xs, 0.0, 1.0).1 > 0.01);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&sq, 0.0, 1.0).1 < 1e-6);
        assert!((kolmogorov_q(1.36) - 0.049).abs() < 0.002);
    }

    #[test]
    fn chi_square_values() {
        assert!((chi_square_uniform(&[100, 100, 100, 100]) - 1.0).abs() < 1e-12);
        assert!(chi_square_uniform(&[400, 0, 0, 0]) < 1e-10);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&s, 0.5), 1.5);
        assert_eq!(quantile(&s, 1.0), 3.0);
        let cdf = empirical_cdf(&[3.0, 1.0]);
        assert_eq!(cdf, vec![(1.0, 0.5), (3.0, 1.0)]);
    }
}
