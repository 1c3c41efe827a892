//! Inner products, orthonormal frames, and Bergman kernels of section
//! spaces.
//!
//! Sections of m K + k L pair under a weight of the bundle
//! (m - 1) K + k L:
//!
//!   <s, t>_w = integral of s conj(t) e^{-w},
//!
//! one canonical factor of s conj(t) acting as the area form while the
//! remaining factors are contracted by e^{-w}. The Bergman kernel of a
//! basis under such a weight is
//!
//!   K(y) = sum_k |t_k(y)|^2
//!
//! over any orthonormal frame t_k, equivalently the extremal value
//! sup { |s(y)|^2 : <s, s>_w = 1 }. Its logarithm is again a weight of
//! m K + k L, which is what the kernel iteration feeds back in.
//!
//! Assembly never forms the Gram of the raw monomial basis: power bases
//! go numerically rank deficient well below the dimensions in play here.
//! Basis values are instead half-weighted by the reference metric of the
//! pairing bundle (making every column order one across the atlas),
//! orthonormalized in the quadrature inner product of the reference
//! weight by a thin QR, and only then paired under the target weight.
//! The conditioned Gram that results is a perturbation of the identity
//! whose spread is set by the oscillation of w - w_ref alone, not by the
//! basis or the level.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ChartAtlas, GeomError, SectionBasis};
use crate::linalg::hermitian_eigenvalues;
use crate::metrics::{reference_weight, WeightField};

/// Relative eigenvalue threshold below which a direction of the reference
/// Gram counts as numerically dependent.
const RANK_TOL: f64 = 1e-10;

/// Relative floor for the smallest eigenvalue of the conditioned target
/// Gram; below it the weight does not define a positive inner product on
/// the numerical range of the basis.
const PD_TOL: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error(
        "inner product matrix is not positive definite: \
         lambda_min {lambda_min:.3e}, lambda_max {lambda_max:.3e}"
    )]
    NotPositive { lambda_min: f64, lambda_max: f64 },
    #[error("extremal bound violated at node {node}: |s|^2 / K = {ratio:.9}")]
    ExtremalViolation { node: usize, ratio: f64 },
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// An orthonormal frame of a section space under a quadrature inner
/// product, together with its kernel.
pub struct KernelFrame {
    /// The input basis recombined so its sections are orthonormal under
    /// (weight, quadrature).
    pub basis: SectionBasis,
    /// Target Gram of the reference-orthonormal intermediate frame.
    /// Hermitian positive definite; its conditioning is the conditioning
    /// of the whole construction.
    pub gram: DMatrix<Complex64>,
    /// Extreme eigenvalues of `gram`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Numerical rank of the basis under the carrier inner product.
    /// Equal to dim once the construction succeeds.
    pub rank: usize,
    /// Spread max/min of the QR diagonal: conditioning of the raw basis
    /// in the carrier inner product.
    pub r_ratio: f64,
    /// log K as a weight of the sections' own bundle. Nodes where every
    /// section vanishes are masked (log K = -inf there).
    pub log_kernel: WeightField,
}

/// Outcome of a randomized check of the extremal characterization.
#[derive(Debug, Clone, Copy)]
pub struct ExtremalReport {
    pub n_samples: usize,
    /// Largest |s|^2 / K over the unit-norm samples; must not exceed
    /// 1 + 1e-8 and should approach 1 from below with enough samples.
    pub max_ratio: f64,
    /// Worst relative gap between the stored kernel and the one
    /// re-evaluated from the orthonormal sections at the probed nodes.
    pub peak_gap: f64,
}

/// Values of every basis section at every node, rows indexed by global
/// node, columns by section, each chart in its own frame.
fn value_matrix(atlas: &ChartAtlas, basis: &SectionBasis) -> DMatrix<Complex64> {
    let dim = basis.dim();
    let mut v = DMatrix::zeros(atlas.n_nodes, dim);
    for c in 0..atlas.charts.len() {
        let vals = basis.eval_all(atlas, c);
        let off = atlas.offsets[c];
        for j in 0..dim {
            for (i, &x) in vals[j].iter().enumerate() {
                v[(off + i, j)] = x;
            }
        }
    }
    v
}

/// Direct Gram matrix of the basis, entry (i, j) = <s_i, s_j>_w, linear
/// in the first slot, so K(y) = v(y)^H G^-1 v(y) for the value vector v.
/// Exactly Hermitian positive semidefinite by construction. Meant for
/// oracle checks and small spaces; frame construction goes through the
/// conditioned path. Masked weight nodes contribute nothing.
pub fn gram_matrix(
    atlas: &ChartAtlas,
    basis: &SectionBasis,
    weight: &WeightField,
) -> Result<DMatrix<Complex64>, KernelError> {
    assert_eq!(
        (weight.m_k, weight.k_l),
        (basis.m_k - 1, basis.k_l),
        "pairing weight must live on the volume bundle of the sections"
    );
    let mut s = value_matrix(atlas, basis);
    for c in 0..atlas.charts.len() {
        let chart = &atlas.charts[c];
        for i in 0..chart.n_nodes() {
            let g = atlas.offsets[c] + i;
            let f = if weight.valid(g) {
                (chart.qw[i] * chart.partition[i]).sqrt() * (-0.5 * weight.w[g]).exp()
            } else {
                0.0
            };
            if !f.is_finite() {
                return Err(KernelError::Geometry(GeomError::NanDensity { node: g }));
            }
            for j in 0..s.ncols() {
                s[(g, j)] *= f;
            }
        }
    }
    let sc = s.conjugate();
    Ok(sc.adjoint() * &sc)
}

/// Orthonormalize `basis` under the quadrature inner product of `weight`
/// and record the kernel of the resulting frame.
///
/// The weight must live on the volume bundle (m_k - 1) K + k_l L of the
/// sections. Fails with NotPositive when the basis is numerically
/// dependent under the reference weight, or when the target weight is
/// too degenerate on its span.
pub fn orthonormal_frame(
    atlas: &ChartAtlas,
    basis: &SectionBasis,
    weight: &WeightField,
) -> Result<KernelFrame, KernelError> {
    orthonormal_frame_with(atlas, basis, weight, None)
}

/// Same construction with an explicit half-weighting carrier: a smooth,
/// everywhere finite weight on the volume bundle in whose inner product
/// the first-stage QR orthonormalizes. The kernel does not depend on the
/// carrier; the conditioning of the second stage does, with spread
/// e^{osc(w - carrier)}. Iterations pass their own pairing weight, which
/// makes the second stage the identity. None means the reference weight.
pub fn orthonormal_frame_with(
    atlas: &ChartAtlas,
    basis: &SectionBasis,
    weight: &WeightField,
    carrier: Option<&WeightField>,
) -> Result<KernelFrame, KernelError> {
    assert_eq!(
        (weight.m_k, weight.k_l),
        (basis.m_k - 1, basis.k_l),
        "pairing weight must live on the volume bundle of the sections"
    );
    let dim = basis.dim();
    assert!(dim > 0, "cannot orthonormalize an empty basis");
    let n = atlas.n_nodes;

    let w_vref = match carrier {
        None => reference_weight(atlas, basis.m_k - 1, basis.k_l),
        Some(c) => {
            assert_eq!((c.m_k, c.k_l), (weight.m_k, weight.k_l));
            assert!(c.mask.is_none(), "carrier must be finite everywhere");
            assert!(c.w.iter().all(|v| v.is_finite()));
            c.clone()
        }
    };
    let mut a = value_matrix(atlas, basis);
    for g in 0..n {
        let f = (-0.5 * w_vref.w[g]).exp();
        for j in 0..dim {
            a[(g, j)] *= f;
        }
    }
    let mut b = a.clone();
    for c in 0..atlas.charts.len() {
        let chart = &atlas.charts[c];
        for i in 0..chart.n_nodes() {
            let g = atlas.offsets[c] + i;
            let f = (chart.qw[i] * chart.partition[i]).sqrt();
            for j in 0..dim {
                b[(g, j)] *= f;
            }
        }
    }

    let (q, r) = b.qr().unpack();
    let mut r_lo = f64::INFINITY;
    let mut r_hi: f64 = 0.0;
    for j in 0..dim {
        let d = r[(j, j)].norm();
        r_lo = r_lo.min(d);
        r_hi = r_hi.max(d);
    }
    let r_ratio = r_hi / r_lo.max(f64::MIN_POSITIVE);

    // Rank of the carrier Gram R^H R. Dependence here is a property of
    // the basis, not of the target weight.
    let rr = r.adjoint() * &r;
    let eig_ref = hermitian_eigenvalues(&to_rows(&rr));
    let lam_ref_max = *eig_ref.last().unwrap();
    let rank = eig_ref.iter().filter(|&&l| l > RANK_TOL * lam_ref_max).count();
    if rank < dim {
        return Err(KernelError::NotPositive {
            lambda_min: eig_ref[0],
            lambda_max: lam_ref_max,
        });
    }

    // Target Gram of the carrier-orthonormal frame, assembled around
    // the mean of u = w - carrier so the exponentials stay scaled.
    let u: Vec<f64> = (0..n).map(|g| weight.w[g] - w_vref.w[g]).collect();
    let (mut c_shift, mut n_valid) = (0.0, 0usize);
    for g in 0..n {
        if weight.valid(g) {
            c_shift += u[g];
            n_valid += 1;
        }
    }
    if n_valid == 0 {
        return Err(KernelError::NotPositive {
            lambda_min: 0.0,
            lambda_max: 0.0,
        });
    }
    c_shift /= n_valid as f64;
    let mut w_mat = q;
    for g in 0..n {
        let f = if weight.valid(g) {
            (-0.5 * (u[g] - c_shift)).exp()
        } else {
            0.0
        };
        for j in 0..dim {
            w_mat[(g, j)] *= f;
        }
    }
    let mut gt = w_mat.adjoint() * &w_mat;
    let gth = gt.adjoint();
    gt = (gt + gth) * Complex64::new(0.5, 0.0);

    let eig = hermitian_eigenvalues(&to_rows(&gt));
    let scale = (-c_shift).exp();
    let (lambda_min, lambda_max) = (eig[0] * scale, *eig.last().unwrap() * scale);
    if eig[0] <= PD_TOL * *eig.last().unwrap() {
        return Err(KernelError::NotPositive {
            lambda_min,
            lambda_max,
        });
    }
    let chol = Cholesky::new(gt.clone()).ok_or(KernelError::NotPositive {
        lambda_min,
        lambda_max,
    })?;

    // Total recombination M = R^-1 L^-H e^{c/2}: columns are the target
    // orthonormal sections in basis coordinates.
    let eye = DMatrix::<Complex64>::identity(dim, dim);
    let r_inv = r
        .solve_upper_triangular(&eye)
        .expect("R is invertible past the rank gate");
    let lh_inv = chol
        .l()
        .adjoint()
        .solve_upper_triangular(&eye)
        .expect("Cholesky factor is invertible");
    let m_tot = r_inv * lh_inv * Complex64::new((0.5 * c_shift).exp(), 0.0);

    // Kernel log at every node from the half-weighted orthonormal values.
    let on_vals = a * &m_tot;
    let mut w_log = vec![0.0; n];
    let mut mask = vec![true; n];
    let mut any_masked = false;
    for g in 0..n {
        let s: f64 = (0..dim).map(|k| on_vals[(g, k)].norm_sqr()).sum();
        if s > 0.0 {
            w_log[g] = w_vref.w[g] + s.ln();
        } else {
            w_log[g] = f64::NEG_INFINITY;
            mask[g] = false;
            any_masked = true;
        }
    }
    let mut log_kernel = WeightField::new(basis.m_k, basis.k_l, w_log);
    if any_masked {
        log_kernel.mask = Some(mask);
    }

    // Fold M into the stored combo so the returned basis evaluates the
    // orthonormal sections directly.
    let n_exprs = basis.exprs.len();
    let c_old = match &basis.combo {
        None => DMatrix::<Complex64>::identity(dim, n_exprs),
        Some(rows) => {
            DMatrix::from_fn(dim, n_exprs, |s, e| rows[s][e])
        }
    };
    let c_new = m_tot.transpose() * c_old;
    let combo: Vec<Vec<Complex64>> = (0..dim)
        .map(|s| (0..n_exprs).map(|e| c_new[(s, e)]).collect())
        .collect();
    let labels = (0..dim).map(|k| format!("on{k}")).collect();
    let on_basis = SectionBasis {
        m_k: basis.m_k,
        k_l: basis.k_l,
        exprs: basis.exprs.clone(),
        combo: Some(combo),
        labels,
    };

    Ok(KernelFrame {
        basis: on_basis,
        gram: gt * Complex64::new(scale, 0.0),
        lambda_min,
        lambda_max,
        rank,
        r_ratio,
        log_kernel,
    })
}

impl KernelFrame {
    pub fn condition(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// Integral of the kernel density e^{log K - w} against the atlas
    /// quadrature. The density has exactly one canonical factor, so it
    /// is an area density; in exact arithmetic the value is dim for the
    /// weight the frame was built with.
    pub fn kernel_mass(&self, atlas: &ChartAtlas, weight: &WeightField) -> f64 {
        assert_eq!(
            (weight.m_k, weight.k_l),
            (self.basis.m_k - 1, self.basis.k_l)
        );
        let n = atlas.n_nodes;
        let mut dens = vec![0.0; n];
        let mut mask = vec![true; n];
        for g in 0..n {
            if self.log_kernel.valid(g) && weight.valid(g) {
                dens[g] = (self.log_kernel.w[g] - weight.w[g]).exp();
            } else {
                mask[g] = false;
            }
        }
        atlas.integrate_masked(&dens, &mask)
    }

    /// Randomized verification of the extremal characterization of K:
    /// every section of unit norm satisfies |s(y)|^2 <= K(y). Samples
    /// are drawn at quadrature nodes with seeded Gaussian coefficients,
    /// so a given seed is reproducible bit for bit.
    pub fn extremal_check(
        &self,
        atlas: &ChartAtlas,
        n_samples: usize,
        seed: u64,
    ) -> Result<ExtremalReport, KernelError> {
        let vals = value_matrix(atlas, &self.basis);
        let dim = self.basis.dim();
        let n = atlas.n_nodes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_ratio: f64 = 0.0;
        let mut peak_gap: f64 = 0.0;
        for _ in 0..n_samples {
            let g = rng.gen_range(0..n);
            if !self.log_kernel.valid(g) {
                continue;
            }
            let k_here: f64 = (0..dim).map(|j| vals[(g, j)].norm_sqr()).sum();
            peak_gap = peak_gap.max((k_here.ln() - self.log_kernel.w[g]).abs());
            let mut c: Vec<Complex64> = (0..dim)
                .map(|_| Complex64::new(gaussian(&mut rng), gaussian(&mut rng)))
                .collect();
            let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for z in c.iter_mut() {
                *z /= norm;
            }
            let s: Complex64 = (0..dim).map(|j| c[j] * vals[(g, j)]).sum();
            let ratio = s.norm_sqr() / k_here;
            if ratio > 1.0 + 1e-8 {
                return Err(KernelError::ExtremalViolation { node: g, ratio });
            }
            max_ratio = max_ratio.max(ratio);
        }
        Ok(ExtremalReport {
            n_samples,
            max_ratio,
            peak_gap,
        })
    }
}

/// Quadratic form value v^H G^-1 v for a Hermitian positive definite G.
pub fn inverse_gram_form(g: &DMatrix<Complex64>, v: &DVector<Complex64>) -> f64 {
    let chol = Cholesky::new(g.clone()).expect("Gram must be positive definite");
    let x = chol.solve(v);
    (v.adjoint() * x)[(0, 0)].re
}

fn to_rows(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
