//! Small statistical toolbox backing the verification experiments:
//! Kolmogorov-Smirnov tests, weighted least squares on log-log data, sample
//! moments, percentiles, and a deterministic normal sampler. P-values use the
//! asymptotic Kolmogorov distribution with the Stephens small-sample
//! correction; on discrete data ties make the test conservative, which is the
//! safe direction for the goodness-of-fit gates here.

use rand::Rng;

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100u32 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        if term < 1e-18 {
            break;
        }
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(statistic: f64, n_effective: f64) -> f64 {
    let root = n_effective.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * statistic)
}

/// One-sample KS test of `samples` against the distribution with CDF `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.len() < 2 {
        return Err(CoreError::InsufficientData(
            "KS test needs at least 2 samples".into(),
        ));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n),
        n_effective: n,
    })
}

/// Two-sample KS test; effective size m*n/(m+n).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CoreError::InsufficientData(
            "KS test needs at least 2 samples per side".into(),
        ));
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
        s
    };
    let (xa, xb) = (sort(a), sort(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() || j < xb.len() {
        let v = match (xa.get(i), xb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n_eff),
        n_effective: n_eff,
    })
}

/// Sample mean and standard error of the mean (ddof = 1).
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(CoreError::InsufficientData(
            "mean/SE needs at least 2 samples".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Weighted least squares line fit: returns (intercept, slope) minimizing
/// sum_i w_i (y_i - a - b x_i)^2.
pub fn fit_wls(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(CoreError::invalid("wls", "mismatched input lengths"));
    }
    if x.len() < 2 {
        return Err(CoreError::InsufficientData(
            "line fit needs at least 2 points".into(),
        ));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sw += wi;
        sx += wi * xi;
        sy += wi * yi;
        sxx += wi * xi * xi;
        sxy += wi * xi * yi;
    }
    let denom = sw * sxx - sx * sx;
    if !(denom.abs() > 1e-12 * sw * sxx.max(1.0)) {
        return Err(CoreError::InsufficientData(
            "degenerate abscissae in line fit".into(),
        ));
    }
    let slope = (sw * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / sw;
    Ok((intercept, slope))
}

/// Linear-interpolation percentile of a sorted slice, q in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Standard normal draw via Box-Muller; consumes exactly two uniforms.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn kolmogorov_survival_matches_classic_critical_values() {
        // Classic two-sided critical points of the asymptotic distribution.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 2e-3);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 1e-3);
        assert!(kolmogorov_survival(0.0) == 1.0);
        assert!(kolmogorov_survival(0.2) > 0.999);
        assert!(kolmogorov_survival(3.0) < 1e-7);
    }

    #[test]
    fn one_sample_ks_accepts_true_law_and_rejects_shifted_law() {
        let mut rng = stream(5, 9, 0);
        let xs: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ok = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ok.p_value > 0.01, "p = {}", ok.p_value);
        let off = ks_one_sample(&xs, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(off.p_value < 1e-8, "p = {}", off.p_value);
    }

    #[test]
    fn two_sample_ks_separates_distributions() {
        let mut rng = stream(7, 9, 1);
        let a: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2500).map(|_| rng.random::<f64>()).collect();
        let same = ks_two_sample(&a, &b).unwrap();
        assert!(same.p_value > 0.01, "p = {}", same.p_value);
        let c: Vec<f64> = (0..2500).map(|_| rng.random::<f64>().powi(2)).collect();
        let diff = ks_two_sample(&a, &c).unwrap();
        assert!(diff.p_value < 1e-8, "p = {}", diff.p_value);
    }

    #[test]
    fn two_sample_ks_handles_ties_symmetrically() {
        let a = vec![0.0, 0.0, 1.0, 1.0];
        let b = vec![0.0, 1.0, 1.0, 1.0];
        let r1 = ks_two_sample(&a, &b).unwrap();
        let r2 = ks_two_sample(&b, &a).unwrap();
        assert_eq!(r1.statistic, r2.statistic);
        assert!((r1.statistic - 0.25).abs() < 1e-12);
    }

    #[test]
    fn wls_recovers_exact_lines_for_any_weights() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (a, b) = fit_wls(&x, &y, &[1.0, 10.0, 0.1, 5.0]).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
        // A dominant weight pins the fit near its point.
        let noisy = [0.0, 1.0, 10.0];
        let (a, b) = fit_wls(&[0.0, 1.0, 2.0], &noisy, &[1.0, 1e12, 1.0]).unwrap();
        assert!((a + b * 1.0 - 1.0).abs() < 1e-3);
        assert!(fit_wls(&[1.0, 1.0, 1.0], &noisy, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 1.0), 4.0);
        assert!((percentile(&xs, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn normal_sampler_moments() {
        let mut rng = stream(11, 9, 2);
        let xs: Vec<f64> = (0..20000).map(|_| standard_normal(&mut rng)).collect();
        let (mean, se) = mean_and_se(&xs).unwrap();
        assert!(mean.abs() < 3.0 * se);
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0).abs() < 0.05);
    }
}
