//! Small statistics helpers shared by the estimators and the test suites.

/// Total-variation distance `½ Σ |p_i − q_i|`. Panics on length mismatch.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must have the same support");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Pearson chi-square statistic of observed counts against probabilities.
/// Cells with zero expectation are skipped.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    observed
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = total as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Least-squares polynomial fit of the given degree; coefficients in
/// increasing power order. Solves the normal equations by Gaussian elimination
/// with partial pivoting on centred, scaled abscissae.
#[allow(clippy::needless_range_loop)]
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() > degree, "need more points than the polynomial degree");
    let k = degree + 1;
    let shift = mean(xs);
    let scale = xs.iter().map(|x| (x - shift).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut a = vec![vec![0.0; k + 1]; k];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - shift) / scale;
        let pows: Vec<f64> = (0..k).map(|i| u.powi(i as i32)).collect();
        for i in 0..k {
            for j in 0..k {
                a[i][j] += pows[i] * pows[j];
            }
            a[i][k] += pows[i] * y;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..=k {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let scaled: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    // expand Σ b_i ((x − shift)/scale)^i back into powers of x
    let mut coeffs = vec![0.0; k];
    for (i, b) in scaled.iter().enumerate() {
        for j in 0..=i {
            let binom = binomial(i, j) as f64;
            coeffs[j] += b * binom * (-shift).powi((i - j) as i32) / scale.powi(i as i32);
        }
    }
    coeffs
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_of_disjoint_supports_is_one() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn polyfit_recovers_exact_quadratic() {
        let xs: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x + 0.25 * x * x).collect();
        let c = polyfit(&xs, &ys, 2);
        assert!((c[0] - 2.0).abs() < 1e-10 && (c[1] + 0.5).abs() < 1e-10 && (c[2] - 0.25).abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn chi_square_of_exact_counts_is_zero() {
        assert_eq!(chi_square(&[25, 75], &[0.25, 0.75]), 0.0);
    }
}
