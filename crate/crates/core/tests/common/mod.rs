//! Independent oracles shared by integration tests.
#![allow(dead_code)]

/// First positive root of `cos(b) cosh(b) = 1` (clamped–clamped beam).
pub fn beam_root() -> f64 {
    let f = |b: f64| b.cos() * b.cosh() - 1.0;
    let (mut lo, mut hi) = (4.0_f64, 5.0_f64);
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest eigenvalues of the clamped second-order finite-difference
/// discretization of `y'''' + λ y'' = μ y`, returned as `σ = -μ` in
/// nonincreasing order. Uses Sturm counts from an LDLᵀ factorization of the
/// pentadiagonal matrix and bisection.
pub fn fd_clamped_sigmas(lambda: f64, length: f64, n: usize, count: usize) -> Vec<f64> {
    let h = length / (n + 1) as f64;
    let h2 = h * h;
    let h4 = h2 * h2;
    // Bands: diag, first off-diagonal, second off-diagonal.
    let mut d0 = vec![6.0 / h4 - 2.0 * lambda / h2; n];
    let d1 = vec![-4.0 / h4 + lambda / h2; n];
    let d2 = vec![1.0 / h4; n];
    // Ghost point y_{-1} = y_1 (and mirror at the right end).
    d0[0] += 1.0 / h4;
    d0[n - 1] += 1.0 / h4;

    let count_below = |s: f64| -> usize {
        // LDLᵀ of the banded matrix K - sI, bandwidth 2.
        let mut neg = 0;
        let mut dd = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            let mut di = d0[i] - s;
            if i >= 1 {
                di -= l1[i] * l1[i] * dd[i - 1];
            }
            if i >= 2 {
                di -= l2[i] * l2[i] * dd[i - 2];
            }
            if di == 0.0 {
                di = -1e-300;
            }
            dd[i] = di;
            if di < 0.0 {
                neg += 1;
            }
            // Fill multipliers for rows i+1 and i+2 using column i.
            if i + 1 < n {
                let mut a = d1[i];
                if i >= 1 {
                    a -= l1[i] * dd[i - 1] * l2[i + 1];
                }
                l1[i + 1] = a / di;
            }
            if i + 2 < n {
                l2[i + 2] = d2[i] / di;
            }
        }
        neg
    };

    let mut out = Vec::with_capacity(count);
    let upper = 16.0 / h4 + 4.0 * lambda.abs() / h2;
    let lower = -lambda * lambda;
    for k in 1..=count {
        let (mut lo, mut hi) = (lower - 1.0, upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
        }
        out.push(-0.5 * (lo + hi));
    }
    out
}
