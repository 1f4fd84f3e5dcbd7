//! Small statistical utilities shared across the crate.
//!
//! Nothing here is specific to diffusion models: summary statistics,
//! goodness-of-fit helpers, isotonic regression for tail curves, effective
//! sample size for MCMC output, and a symmetric matrix square root.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Sample mean. Returns an argument error on an empty slice.
pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::argument("mean of an empty sample"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Unbiased sample standard deviation; `None` when fewer than two points
/// are available (a single replication has no spread to report).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    // The unit normal always constructs successfully.
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    n.cdf(x)
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a reference
/// CDF: `sup_x |F_n(x) - F(x)|`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::argument("KS statistic of an empty sample"));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::argument("KS statistic of a non-finite sample"));
    }
    sample.sort_by(|a, b| a.partial_cmp(b).expect("finite values sort"));
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - f).abs();
        d = d.max(lo).max(hi);
    }
    Ok(d)
}

/// Asymptotic Kolmogorov distribution survival function,
/// `P(sqrt(n) D_n > x) -> 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
///
/// Accurate for moderate `x`; the series is alternating with rapidly
/// decaying terms, so truncation after the term falls below 1e-12 is safe.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200u32 {
        let term = (-2.0 * (k as f64).powi(2) * x * x).exp();
        let signed = if k % 2 == 1 { term } else { -term };
        sum += signed;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Critical value `d` such that the asymptotic KS test of size `alpha`
/// rejects when `D_n > d`, for a sample of size `n`.
pub fn ks_critical_value(n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::argument("KS critical value needs n >= 1"));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::argument("KS level must lie in (0, 1)"));
    }
    // Invert the Kolmogorov survival function by bisection.
    let (mut lo, mut hi) = (1e-8, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) / (n as f64).sqrt())
}

/// Pool-adjacent-violators projection onto non-increasing sequences,
/// optionally weighted. Used to smooth empirical tail curves, which are
/// non-increasing in the radius by construction of the underlying
/// probabilities.
pub fn isotonic_non_increasing(ys: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if ys.is_empty() {
        return Err(Error::argument("isotonic regression of an empty sequence"));
    }
    if let Some(w) = weights {
        if w.len() != ys.len() {
            return Err(Error::argument("isotonic weights length mismatch"));
        }
        if w.iter().any(|&wi| !(wi > 0.0)) {
            return Err(Error::argument("isotonic weights must be positive"));
        }
    }
    // PAVA on the negated sequence gives a non-decreasing fit, i.e. a
    // non-increasing fit of the original.
    struct Block {
        value: f64,
        weight: f64,
        len: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(ys.len());
    for (i, &y) in ys.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        blocks.push(Block {
            value: -y,
            weight: w,
            len: 1,
        });
        while blocks.len() >= 2 {
            let last = blocks.len() - 1;
            if blocks[last - 1].value <= blocks[last].value {
                break;
            }
            let b = blocks.pop().expect("non-empty");
            let a = blocks.last_mut().expect("non-empty");
            let w = a.weight + b.weight;
            a.value = (a.value * a.weight + b.value * b.weight) / w;
            a.weight = w;
            a.len += b.len;
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for b in &blocks {
        for _ in 0..b.len {
            out.push(-b.value);
        }
    }
    Ok(out)
}

/// Effective sample size of a (possibly autocorrelated) scalar chain via
/// Geyer's initial positive sequence estimator.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 4 {
        return Err(Error::argument("ESS needs a chain of length >= 4"));
    }
    let m = chain.iter().sum::<f64>() / n as f64;
    let var = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        // A constant chain carries a single piece of information.
        return Ok(1.0);
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (chain[i] - m) * (chain[i + lag] - m);
        }
        s / (n as f64 * var)
    };
    // Sum autocorrelations over pairs while the pair sums stay positive.
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// Symmetric positive semi-definite square root via the spectral
/// decomposition. Small negative eigenvalues from roundoff are clamped to
/// zero; a genuinely indefinite input is rejected.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::argument("matrix square root needs a square matrix"));
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-10 * max_eig.max(1.0);
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -tol {
            return Err(Error::argument(format!(
                "matrix square root of an indefinite matrix (eigenvalue {l:.3e})"
            )));
        }
        roots[i] = l.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_sd_match_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&xs).unwrap(), 2.5);
        // Var = (2.25 + 0.25 + 0.25 + 2.25) / 3 = 5/3.
        assert_relative_eq!(sample_sd(&xs).unwrap(), (5.0f64 / 3.0).sqrt());
        assert!(sample_sd(&[1.0]).is_none());
        assert!(mean(&[]).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_relative_eq!(standard_normal_cdf(0.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            standard_normal_cdf(1.959963984540054),
            0.975,
            epsilon = 1e-9
        );
    }

    #[test]
    fn ks_statistic_of_exact_quantiles_is_small() {
        // Points at (i - 0.5)/n quantiles give D_n = 1/(2n).
        let n = 100;
        let mut sample: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                // Invert the uniform CDF on [0, 1].
                p
            })
            .collect();
        let d = ks_statistic(&mut sample, |x| x.clamp(0.0, 1.0)).unwrap();
        assert_relative_eq!(d, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn kolmogorov_sf_reference_point() {
        // Classical table value: Q(1.36) is close to 0.049.
        let q = kolmogorov_sf(1.36);
        assert!((q - 0.049).abs() < 2e-3, "Q(1.36) = {q}");
        // And the 1% point is near 1.63.
        let q = kolmogorov_sf(1.63);
        assert!((q - 0.010).abs() < 1e-3, "Q(1.63) = {q}");
    }

    #[test]
    fn ks_critical_value_inverts_sf() {
        let d = ks_critical_value(1000, 0.01).unwrap();
        let x = d * (1000f64).sqrt();
        assert!((kolmogorov_sf(x) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn isotonic_projection_pools_violators() {
        let fit = isotonic_non_increasing(&[1.0, 0.5, 0.7, 0.2], None).unwrap();
        assert_relative_eq!(fit[0], 1.0);
        assert_relative_eq!(fit[1], 0.6);
        assert_relative_eq!(fit[2], 0.6);
        assert_relative_eq!(fit[3], 0.2);
        // Already monotone input is untouched.
        let same = isotonic_non_increasing(&[3.0, 2.0, 1.0], None).unwrap();
        assert_eq!(same, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn ess_of_iid_chain_is_near_n() {
        use rand::Rng;
        let mut rng = crate::seed::rng_from_seed(11);
        let chain: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>()).collect();
        let ess = effective_sample_size(&chain).unwrap();
        assert!(ess > 2500.0, "iid ESS too small: {ess}");
    }

    #[test]
    fn ess_of_sticky_chain_is_small() {
        // AR(1) with strong persistence.
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::seed::rng_from_seed(12);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.95 * x + e;
                x
            })
            .collect();
        let ess = effective_sample_size(&chain).unwrap();
        assert!(ess < 400.0, "AR(1) ESS too large: {ess}");
    }

    #[test]
    fn symmetric_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = symmetric_sqrt(&a).unwrap();
        let back = &r * &r;
        assert_relative_eq!(back[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(back[(0, 1)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(back[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_sqrt_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(symmetric_sqrt(&a).is_err());
    }
}
