//! Small shared numerics: smooth steps, Gauss-Legendre rules, polynomial
//! evaluation, stable helpers.

use num_complex::Complex64;

/// Smooth step on the real line with step(t) + step(-t) = 1 exactly.
/// Analytic, so partition functions built from it do not limit quadrature
/// accuracy the way compactly supported bumps do.
pub fn smooth_step(t: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(t))
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial. Deterministic and accurate to machine precision for
/// the orders used here (n <= a few hundred).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = -x;
        xs[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    (xs, ws)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| half * w).collect(),
    )
}

/// Horner evaluation of a polynomial with complex coefficients, c[0] + c[1] z + ...
pub fn polyval(c: &[Complex64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &ck in c.iter().rev() {
        acc = acc * z + ck;
    }
    acc
}

/// Derivative coefficients of a complex polynomial.
pub fn polyder(c: &[Complex64]) -> Vec<Complex64> {
    if c.len() <= 1 {
        return vec![Complex64::new(0.0, 0.0)];
    }
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, ck)| ck * k as f64)
        .collect()
}

/// log(1+z) for complex z, accurate for small |z|, principal branch.
pub fn ln_1p(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        // alternating series, enough terms for full precision at this size
        z - z * z * 0.5 + z * z * z / 3.0 - z * z * z * z * 0.25
    } else {
        (Complex64::new(1.0, 0.0) + z).ln()
    }
}

/// Lagrange differentiation weights on arbitrary nodes (Fornberg, order 0..=m),
/// returned as the weights of the m-th derivative at `x0` over `nodes`.
pub fn fd_weights(x0: f64, nodes: &[f64], m: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    (0..n).map(|i| c[i][m]).collect()
}

/// Barycentric Lagrange interpolation weights for the given nodes.
pub fn bary_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i] /= nodes[i] - nodes[j];
            }
        }
    }
    w
}

/// Evaluate the interpolation coefficients (row of the interpolation matrix)
/// at x for barycentric weights w over nodes.
pub fn bary_row(x: f64, nodes: &[f64], w: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    for i in 0..n {
        if (x - nodes[i]).abs() < 1e-14 {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            return row;
        }
    }
    let mut denom = 0.0;
    let mut row = vec![0.0; n];
    for i in 0..n {
        let t = w[i] / (x - nodes[i]);
        row[i] = t;
        denom += t;
    }
    for r in row.iter_mut() {
        *r /= denom;
    }
    row
}

/// Relative difference |a-b| / max(|a|, |b|, floor).
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
pub(crate) fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} (|diff| = {:.3e} > {tol:.3e})",
        (a - b).abs()
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // degree 2n-1 exactness on [0, 2]
        let (xs, ws) = gauss_legendre_on(6, 0.0, 2.0);
        for deg in 0..=11 {
            let num: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(x, w)| w * x.powi(deg))
                .sum();
            let exact = 2.0f64.powi(deg + 1) / (deg as f64 + 1.0);
            assert_close(num, exact, 1e-12 * exact.abs().max(1.0), "GL exactness");
        }
    }

    #[test]
    fn gauss_legendre_smooth_convergence() {
        // integral of exp(x) on [-1,1]
        let exact = 1.0f64.exp() - (-1.0f64).exp();
        let (xs, ws) = gauss_legendre(12);
        let num: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.exp()).sum();
        assert_close(num, exact, 5e-14, "GL smooth");
    }

    #[test]
    fn smooth_step_partition_identity() {
        for t in [-3.0, -0.7, 0.0, 0.2, 5.0] {
            assert_close(smooth_step(t) + smooth_step(-t), 1.0, 1e-15, "step sum");
        }
        assert!(smooth_step(6.0) > 1.0 - 1e-15);
        assert!(smooth_step(-6.0) < 1e-15);
    }

    #[test]
    fn fd_weights_differentiate_quartics() {
        // five arbitrary nodes, second derivative of x^4 at 0.3
        let nodes = [0.0, 0.11, 0.28, 0.45, 0.6];
        let w = fd_weights(0.3, &nodes, 2);
        let num: f64 = nodes.iter().zip(&w).map(|(x, c)| c * x.powi(4)).sum();
        assert_close(num, 12.0 * 0.3f64.powi(2), 1e-10, "fd d2 x^4");
    }

    #[test]
    fn bary_row_reproduces_polynomials() {
        let nodes = [-1.0, -0.4, 0.1, 0.55, 1.0];
        let w = bary_weights(&nodes);
        let row = bary_row(0.3, &nodes, &w);
        let num: f64 = nodes.iter().zip(&row).map(|(x, c)| c * (3.0 * x * x - x)).sum();
        assert_close(num, 3.0 * 0.09 - 0.3, 1e-13, "bary quad");
    }
}
