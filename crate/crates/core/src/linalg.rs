//! Tridiagonal linear solves for the implicit sweeps.

/// Thomas algorithm for `A x = rhs` with `A` tridiagonal.
///
/// `lower` and `upper` have length `n - 1`; `diag` and `rhs` length `n`.
/// `work` provides scratch of length `2 n`. The inputs are not modified;
/// the solution is written into `out`.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    work: &mut [f64],
    out: &mut [f64],
) {
    let n = diag.len();
    debug_assert!(lower.len() == n - 1 && upper.len() == n - 1);
    debug_assert!(rhs.len() == n && out.len() == n && work.len() >= 2 * n);
    let (cp, dp) = work.split_at_mut(n);

    cp[0] = upper[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * cp[i - 1];
        cp[i] = if i < n - 1 { upper[i] / m } else { 0.0 };
        dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / m;
    }
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_small_system() {
        // A = [[10,2,0,0],[3,10,4,0],[0,1,7,5],[0,0,3,4]]
        let lower = [3.0, 1.0, 3.0];
        let diag = [10.0, 10.0, 7.0, 4.0];
        let upper = [2.0, 4.0, 5.0];
        let rhs = [3.0, 4.0, 5.0, 6.0];
        let mut work = vec![0.0; 8];
        let mut x = vec![0.0; 4];
        solve_tridiagonal(&lower, &diag, &upper, &rhs, &mut work, &mut x);
        // residual check
        let ax = [
            10.0 * x[0] + 2.0 * x[1],
            3.0 * x[0] + 10.0 * x[1] + 4.0 * x[2],
            x[1] + 7.0 * x[2] + 5.0 * x[3],
            3.0 * x[2] + 4.0 * x[3],
        ];
        for (a, b) in ax.iter().zip(&rhs) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reproduces_dense_reference_on_random_diagonally_dominant_systems() {
        let mut seed = 88172645463325252u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for n in [2usize, 5, 33] {
            let lower: Vec<f64> = (0..n - 1).map(|_| next()).collect();
            let upper: Vec<f64> = (0..n - 1).map(|_| next()).collect();
            let diag: Vec<f64> = (0..n).map(|_| 3.0 + next()).collect();
            let truth: Vec<f64> = (0..n).map(|_| next() * 10.0).collect();
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                rhs[i] = diag[i] * truth[i];
                if i > 0 {
                    rhs[i] += lower[i - 1] * truth[i - 1];
                }
                if i < n - 1 {
                    rhs[i] += upper[i] * truth[i + 1];
                }
            }
            let mut work = vec![0.0; 2 * n];
            let mut x = vec![0.0; n];
            solve_tridiagonal(&lower, &diag, &upper, &rhs, &mut work, &mut x);
            for (a, b) in x.iter().zip(&truth) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
        }
    }
}
