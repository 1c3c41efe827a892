//! In-band LU for banded real systems, a small preconditioned GMRES, and a
//! Jacobi eigensolver for Hermitian matrices.
//!
//! The Newton systems of the Monge-Ampere solver are block-banded (dense
//! angular coupling inside a chart, narrow radial stencils) plus a sparse set
//! of inter-chart interpolation rows. We factor the banded part exactly and
//! treat the interpolation coupling through GMRES on the preconditioned
//! operator, which keeps the whole solve deterministic.

use num_complex::Complex64;

/// Banded real matrix with lower bandwidth kl and upper bandwidth ku,
/// stored LAPACK-style with room for fill-in during partial pivoting.
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// rows of the band storage: (2*kl + ku + 1) x n, entry (i, j) of the
    /// matrix lives at band[kl + ku + i - j][j]
    band: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl Banded {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            band: vec![0.0; width * n],
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) * self.n + j
    }

    /// Add v to entry (i, j). Panics if outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            j <= i + self.ku && i <= j + self.kl,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let at = self.idx(i, j);
        self.band[at] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.band[at] = v;
    }

    /// LU factorization with partial pivoting, in place. Returns false when a
    /// pivot collapses (singular to machine precision).
    pub fn factor(&mut self) -> bool {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        // working upper bandwidth after pivoting
        let kv = kl + ku;
        for j in 0..n {
            // find pivot in column j among rows j..=min(j+kl, n-1)
            let imax = (j + kl).min(n - 1);
            let mut piv = j;
            let mut pmax = 0.0;
            for i in j..=imax {
                let v = self.band[(kl + ku + i - j) * n + j].abs();
                if v > pmax {
                    pmax = v;
                    piv = i;
                }
            }
            self.pivots[j] = piv;
            if pmax == 0.0 {
                return false;
            }
            // swap rows j and piv across the accessible columns
            if piv != j {
                let jmax = (j + kv).min(n - 1);
                for col in j..=jmax {
                    let a = (kl + ku + j).wrapping_sub(col) * n + col;
                    let b = (kl + ku + piv).wrapping_sub(col) * n + col;
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[(kl + ku) * n + j];
            let jmax = (j + kv).min(n - 1);
            for i in (j + 1)..=imax {
                let at = (kl + ku + i - j) * n + j;
                let m = self.band[at] / pivot;
                self.band[at] = m;
                if m != 0.0 {
                    for col in (j + 1)..=jmax {
                        let up = (kl + ku + j).wrapping_sub(col) * n + col;
                        let lo = (kl + ku + i).wrapping_sub(col) * n + col;
                        let u = self.band[up];
                        if u != 0.0 {
                            self.band[lo] -= m * u;
                        }
                    }
                }
            }
        }
        self.factored = true;
        true
    }

    /// Solve A x = b in place using the stored factorization.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "factor() before solve()");
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let kv = kl + ku;
        // forward: apply pivots and L
        for j in 0..n {
            let piv = self.pivots[j];
            if piv != j {
                b.swap(j, piv);
            }
            let imax = (j + kl).min(n - 1);
            let bj = b[j];
            if bj != 0.0 {
                for i in (j + 1)..=imax {
                    b[i] -= self.band[(kl + ku + i - j) * n + j] * bj;
                }
            }
        }
        // back substitution with U (bandwidth kv)
        for j in (0..n).rev() {
            let jmax = (j + kv).min(n - 1);
            let mut s = b[j];
            for col in (j + 1)..=jmax {
                s -= self.band[(kl + ku + j).wrapping_sub(col) * n + col] * b[col];
            }
            b[j] = s / self.band[(kl + ku) * n + j];
        }
    }
}

/// Sparse rows in triplet-ish form for the off-band coupling.
pub struct SparseRows {
    pub n: usize,
    /// per row: list of (col, value); empty rows contribute nothing
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(n: usize) -> Self {
        SparseRows {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &(j, v) in row {
                s += v * x[j];
            }
            out[i] += s;
        }
    }
}

/// GMRES with restarts on the right-preconditioned system
/// (B + C) inv(B) y = b, x = inv(B) y, where B is the factored banded part
/// and C the sparse correction. Returns (x, achieved residual, iterations)
/// or None if the iteration stalls above `tol`.
pub fn gmres_banded(
    b_fact: &Banded,
    c: &SparseRows,
    rhs: &[f64],
    tol: f64,
    restart: usize,
    max_outer: usize,
) -> Option<(Vec<f64>, f64, usize)> {
    let n = rhs.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        // out = (B + C) inv(B) x
        let mut t = x.to_vec();
        b_fact.solve(&mut t);
        out.copy_from_slice(x); // B inv(B) x = x
        c.matvec_add(&t, out);
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let bnorm = norm(rhs).max(1e-300);
    let mut y = vec![0.0; n];
    let mut total_it = 0usize;
    for _outer in 0..max_outer {
        // residual r = rhs - A_pre y
        let mut r = vec![0.0; n];
        apply(&y, &mut r);
        for i in 0..n {
            r[i] = rhs[i] - r[i];
        }
        let beta = norm(&r);
        if beta / bnorm <= tol {
            b_fact.solve(&mut y);
            return Some((y, beta / bnorm, total_it));
        }
        let m = restart;
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|x| x / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            total_it += 1;
            let mut w = vec![0.0; n];
            apply(&v[k], &mut w);
            for (i, vi) in v.iter().enumerate().take(k + 1) {
                let hik: f64 = w.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
                h[i][k] = hik;
                for j in 0..n {
                    w[j] -= hik * vi[j];
                }
            }
            let hkk = norm(&w);
            h[k + 1][k] = hkk;
            // Givens rotations
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + hkk * hkk).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = hkk / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if hkk > 0.0 {
                v.push(w.iter().map(|x| x / hkk).collect());
            }
            if g[k + 1].abs() / bnorm <= tol || hkk == 0.0 {
                break;
            }
        }
        // solve the small triangular system
        let k = k_used;
        let mut yk = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in (i + 1)..k {
                s -= h[i][j] * yk[j];
            }
            yk[i] = s / h[i][i];
        }
        for (j, &c_j) in yk.iter().enumerate() {
            for i in 0..n {
                y[i] += c_j * v[j][i];
            }
        }
        let mut r2 = vec![0.0; n];
        apply(&y, &mut r2);
        for i in 0..n {
            r2[i] = rhs[i] - r2[i];
        }
        let res = norm(&r2) / bnorm;
        if res <= tol {
            b_fact.solve(&mut y);
            return Some((y, res, total_it));
        }
    }
    None
}

/// Eigenvalues (ascending) of a Hermitian matrix by cyclic Jacobi rotations.
/// Small dense matrices only; deterministic sweep order.
pub fn hermitian_eigenvalues(a0: &[Vec<Complex64>]) -> Vec<f64> {
    let n = a0.len();
    let mut a: Vec<Vec<Complex64>> = a0.to_vec();
    let off = |a: &Vec<Vec<Complex64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j].norm_sqr();
                }
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| a[i][i].re.abs()).fold(0.0, f64::max).max(1.0);
    for _sweep in 0..60 {
        if off(&a) < 1e-30 * scale * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.norm() < 1e-300 {
                    continue;
                }
                // unitary 2x2 diagonalization of the Hermitian block
                let app = a[p][p].re;
                let aqq = a[q][q].re;
                let phase = apq / apq.norm();
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // columns/rows update with G = [[c, s*phase],[-s*conj(phase), c]]
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = akp * c - akq * s * phase.conj();
                    a[k][q] = akp * s * phase + akq * c;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = apk * c - aqk * s * phase;
                    a[q][k] = apk * s * phase.conj() + aqk * c;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i].re).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_lu_solves_tridiagonal() {
        let n = 40;
        let mut b = Banded::new(n, 1, 1);
        for i in 0..n {
            b.set(i, i, 2.4);
            if i > 0 {
                b.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.set(i, i + 1, -1.1);
            }
        }
        // manufactured solution
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = 2.4 * xs[i];
            if i > 0 {
                rhs[i] += -1.0 * xs[i - 1];
            }
            if i + 1 < n {
                rhs[i] += -1.1 * xs[i + 1];
            }
        }
        assert!(b.factor());
        let mut sol = rhs.clone();
        b.solve(&mut sol);
        for i in 0..n {
            assert!((sol[i] - xs[i]).abs() < 1e-12, "i={i}");
        }
    }

    #[test]
    fn banded_lu_with_wider_band_and_pivoting() {
        let n = 60;
        let kl = 4;
        let ku = 3;
        let mut b = Banded::new(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        let mut state = 123456789u64;
        let mut rng = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for i in 0..n {
            for j in 0..n {
                if j + kl >= i && i + ku >= j {
                    // deliberately small diagonals sometimes, to exercise pivoting
                    let v = rng() + if i == j { 0.1 } else { 0.0 };
                    dense[i][j] = v;
                    b.set(i, j, v);
                }
            }
        }
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.17).cos()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                rhs[i] += dense[i][j] * xs[j];
            }
        }
        assert!(b.factor());
        let mut sol = rhs;
        b.solve(&mut sol);
        for i in 0..n {
            assert!((sol[i] - xs[i]).abs() < 1e-9, "i={i}: {} vs {}", sol[i], xs[i]);
        }
    }

    #[test]
    fn gmres_handles_sparse_correction() {
        let n = 50;
        let mut b = Banded::new(n, 1, 1);
        for i in 0..n {
            b.set(i, i, 3.0);
            if i > 0 {
                b.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.set(i, i + 1, -1.0);
            }
        }
        let mut c = SparseRows::new(n);
        c.rows[5] = vec![(40, 0.5), (44, -0.25)];
        c.rows[33] = vec![(2, 0.7)];
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.21).sin() + 0.3).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = 3.0 * xs[i];
            if i > 0 {
                rhs[i] -= xs[i - 1];
            }
            if i + 1 < n {
                rhs[i] -= xs[i + 1];
            }
        }
        rhs[5] += 0.5 * xs[40] - 0.25 * xs[44];
        rhs[33] += 0.7 * xs[2];
        assert!(b.factor());
        let (sol, res, _it) = gmres_banded(&b, &c, &rhs, 1e-13, 30, 20).expect("gmres");
        assert!(res < 1e-12);
        for i in 0..n {
            assert!((sol[i] - xs[i]).abs() < 1e-10, "i={i}");
        }
    }

    #[test]
    fn hermitian_jacobi_matches_known_spectrum() {
        let i = Complex64::new(0.0, 1.0);
        let z = |re: f64| Complex64::new(re, 0.0);
        // [[2, i],[-i, 2]] has eigenvalues 1 and 3
        let a = vec![vec![z(2.0), i], vec![-i, z(2.0)]];
        let ev = hermitian_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
        // a 3x3 with a degenerate pair
        let b = vec![
            vec![z(1.0), Complex64::new(0.0, 0.5), z(0.0)],
            vec![Complex64::new(0.0, -0.5), z(1.0), z(0.0)],
            vec![z(0.0), z(0.0), z(4.0)],
        ];
        let evb = hermitian_eigenvalues(&b);
        assert!((evb[0] - 0.5).abs() < 1e-12);
        assert!((evb[1] - 1.5).abs() < 1e-12);
        assert!((evb[2] - 4.0).abs() < 1e-12);
    }
}
