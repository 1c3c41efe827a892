//! Log-weight fields on an atlas, their curvature, and chart interpolation.
//!
//! A Hermitian metric on m*K + k*L is stored through its local weight w in
//! each chart's declared frame, with h = e^{-w}, so |s|^2 = |f|^2 e^{-w} for
//! a section with coefficient f. Frame changes follow the membership shifts:
//! w_other = w_self + m*dlog_k + k*dlog_l. The curvature density (against
//! sqrt(-1) dz ^ dzbar) is ddbar w = Lap(w)/4 in any chart, and integrates
//! to 2 pi deg over a compact model.
//!
//! Differentiation uses sliding Lagrange stencils along each grid axis
//! (spectral rows in the periodic angle), so the operator rows stay narrow
//! enough for banded factorization while keeping the accuracy of the
//! underlying Gauss-Legendre grids.

use num_complex::Complex64;

use crate::geometry::{
    canonical_section_basis, chart_xp, l_frame_shift, Chart, ChartAtlas, ChartMap, Grid, Model,
};
use crate::util::{bary_row, bary_weights, fd_weights};

/// Width of the sliding Lagrange stencils and interpolation windows.
const WIN: usize = 9;

/// A weight field for the bundle m_k * K + k_l * L: one value per global
/// node, in the owning chart's frame, with h = e^{-w}.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub m_k: i64,
    pub k_l: i64,
    pub w: Vec<f64>,
    /// Nodes where the weight is meaningful; None means all of them.
    pub mask: Option<Vec<bool>>,
}

impl WeightField {
    pub fn new(m_k: i64, k_l: i64, w: Vec<f64>) -> Self {
        WeightField {
            m_k,
            k_l,
            w,
            mask: None,
        }
    }

    pub fn valid(&self, g: usize) -> bool {
        match &self.mask {
            None => true,
            Some(m) => m[g],
        }
    }

    /// The weight of this field at node `g`, re-expressed in the frame of
    /// the other chart of membership `mem`.
    pub fn value_in(&self, atlas: &ChartAtlas, g: usize, mem_idx: usize) -> f64 {
        let mem = &atlas.memberships[g][mem_idx];
        self.w[g] + self.m_k as f64 * mem.dlog_k + self.k_l as f64 * mem.dlog_l
    }

    /// Supremum over unmasked nodes of |self - other| for two fields of the
    /// same bundle; the difference of two weights of one bundle is a scalar
    /// function, so no frame factors enter.
    pub fn sup_difference(&self, other: &WeightField) -> f64 {
        assert_eq!((self.m_k, self.k_l), (other.m_k, other.k_l));
        assert_eq!(self.w.len(), other.w.len());
        let mut sup: f64 = 0.0;
        for g in 0..self.w.len() {
            if self.valid(g) && other.valid(g) {
                sup = sup.max((self.w[g] - other.w[g]).abs());
            }
        }
        sup
    }

    /// The field minus the same-bundle reference weight: a frame-free
    /// scalar, smooth wherever the metric is comparable to the reference.
    /// All differentiation and interpolation of weights goes through this,
    /// because raw weights inherit near-singular frame factors close to
    /// chart boundaries (the band frames blow up like -2m ln|y| toward the
    /// branch cuts) that polynomial stencils cannot represent.
    pub fn relative_scalar(&self, atlas: &ChartAtlas) -> Vec<f64> {
        let w_ref = reference_weight(atlas, self.m_k, self.k_l);
        (0..self.w.len()).map(|g| self.w[g] - w_ref.w[g]).collect()
    }

    /// Largest cross-chart inconsistency of the field relative to the
    /// reference: the scalar at a node minus its interpolation in each
    /// covering chart. A coherent field keeps this at interpolation
    /// accuracy.
    pub fn consistency_residual(&self, atlas: &ChartAtlas) -> f64 {
        let u = self.relative_scalar(atlas);
        let mut worst: f64 = 0.0;
        for g in 0..atlas.n_nodes {
            if !self.valid(g) {
                continue;
            }
            for mem in atlas.memberships[g].iter() {
                let row = interp_row(&atlas.charts[mem.chart], mem.zeta);
                let off = atlas.offsets[mem.chart];
                let mut v = 0.0;
                let mut ok = true;
                for &(i, a) in row.iter() {
                    if !self.valid(off + i) {
                        ok = false;
                        break;
                    }
                    v += a * u[off + i];
                }
                if ok {
                    worst = worst.max((u[g] - v).abs());
                }
            }
        }
        worst
    }
}

/// The reference weight of m_k * K + k_l * L for each model: Fubini-Study
/// factors on the projective line, the trivial weight on the disk, and the
/// two-section canonical weight on a genus-2 curve. Reference weights have
/// curvature in closed form (see `reference_curvature`), so any field's
/// curvature reduces to the smooth scalar field - reference.
pub fn reference_weight(atlas: &ChartAtlas, m_k: i64, k_l: i64) -> WeightField {
    match &atlas.model {
        Model::P1 { l_degree } => {
            let coef = (k_l * l_degree - 2 * m_k) as f64;
            let mut w = vec![0.0; atlas.n_nodes];
            for (c, chart) in atlas.charts.iter().enumerate() {
                for i in 0..chart.n_nodes() {
                    w[atlas.global_index(c, i)] =
                        coef * (1.0 + chart.nodes[i].norm_sqr()).ln();
                }
            }
            WeightField {
                m_k,
                k_l,
                w,
                mask: None,
            }
        }
        Model::Disk => WeightField {
            m_k,
            k_l,
            w: vec![0.0; atlas.n_nodes],
            mask: None,
        },
        Model::Hyperelliptic(_) => {
            assert_eq!(k_l, 0, "curve models carry powers of K only");
            let base = genus2_reference_weight(atlas);
            WeightField {
                m_k,
                k_l,
                w: base.w.iter().map(|v| m_k as f64 * v).collect(),
                mask: None,
            }
        }
    }
}

/// Curvature density of the reference weight, exactly:
///
/// * projective line: (k_l deg L - 2 m_k) / (1 + |zeta|^2)^2 in each chart;
/// * disk: zero;
/// * genus-2 curve: m_k |xp|^2 / (1 + |x|^2)^2, the pullback of the
///   Fubini-Study form under the degree-2 function x (the gq factor of the
///   reference is log|holomorphic|, which ddbar kills).
pub fn reference_curvature(atlas: &ChartAtlas, m_k: i64, k_l: i64) -> Vec<f64> {
    let mut theta = vec![0.0; atlas.n_nodes];
    match &atlas.model {
        Model::P1 { l_degree } => {
            let coef = (k_l * l_degree - 2 * m_k) as f64;
            for (c, chart) in atlas.charts.iter().enumerate() {
                for i in 0..chart.n_nodes() {
                    theta[atlas.global_index(c, i)] =
                        coef / (1.0 + chart.nodes[i].norm_sqr()).powi(2);
                }
            }
        }
        Model::Disk => {}
        Model::Hyperelliptic(_) => {
            assert_eq!(k_l, 0, "curve models carry powers of K only");
            for (c, chart) in atlas.charts.iter().enumerate() {
                for i in 0..chart.n_nodes() {
                    theta[atlas.global_index(c, i)] = m_k as f64 * chart.xp[i].norm_sqr()
                        / (1.0 + chart.x[i].norm_sqr()).powi(2);
                }
            }
        }
    }
    theta
}

/// Fubini-Study weight of k_l copies of L on the projective-line atlas;
/// both charts see w = k_l * l_degree * ln(1 + |zeta|^2).
pub fn p1_fs_l_weight(atlas: &ChartAtlas, k_l: i64) -> WeightField {
    let d = match &atlas.model {
        Model::P1 { l_degree } => *l_degree,
        _ => panic!("Fubini-Study L-weight needs the projective-line model"),
    };
    let mut w = vec![0.0; atlas.n_nodes];
    for (c, chart) in atlas.charts.iter().enumerate() {
        for i in 0..chart.n_nodes() {
            w[atlas.global_index(c, i)] =
                (k_l * d) as f64 * (1.0 + chart.nodes[i].norm_sqr()).ln();
        }
    }
    WeightField::new(0, k_l, w)
}

/// Canonical-bundle weight of the Fubini-Study volume on the projective
/// line: w = ln V with V = 1/(1+|zeta|^2)^2 in both charts. Its curvature
/// integrates to -4 pi.
pub fn p1_fs_canonical_weight(atlas: &ChartAtlas) -> WeightField {
    assert!(matches!(atlas.model, Model::P1 { .. }));
    let mut w = vec![0.0; atlas.n_nodes];
    for (c, chart) in atlas.charts.iter().enumerate() {
        for i in 0..chart.n_nodes() {
            w[atlas.global_index(c, i)] = -2.0 * (1.0 + chart.nodes[i].norm_sqr()).ln();
        }
    }
    WeightField::new(1, 0, w)
}

/// Weight of the curvature -1 metric on the unit disk: w = ln V with
/// V = 2/(1-|z|^2)^2, which satisfies ddbar w = V.
pub fn disk_poincare_weight(atlas: &ChartAtlas) -> WeightField {
    assert!(matches!(atlas.model, Model::Disk));
    let chart = &atlas.charts[0];
    let w = chart
        .nodes
        .iter()
        .map(|z| 2.0f64.ln() - 2.0 * (1.0 - z.norm_sqr()).ln())
        .collect();
    WeightField::new(1, 0, w)
}

/// Smooth positive reference weight on the canonical bundle of a genus-2
/// curve: w = ln sum_i |f_i|^2 over the two canonical sections. The sections
/// have no common zero, so w is finite, and its curvature integrates to
/// 4 pi by degree.
pub fn genus2_reference_weight(atlas: &ChartAtlas) -> WeightField {
    assert!(matches!(atlas.model, Model::Hyperelliptic(_)));
    let basis = canonical_section_basis(atlas, 1, 0).expect("canonical sections");
    let mut w = vec![0.0; atlas.n_nodes];
    for c in 0..atlas.charts.len() {
        let vals = basis.eval_all(atlas, c);
        for i in 0..atlas.charts[c].n_nodes() {
            let s: f64 = vals.iter().map(|row| row[i].norm_sqr()).sum();
            w[atlas.global_index(c, i)] = s.ln();
        }
    }
    WeightField::new(1, 0, w)
}

/// Sparse second-order operator rows, one per node, indices chart-local.
type Rows = Vec<Vec<(usize, f64)>>;

/// The flat-chart ddbar operator of every chart of an atlas: per node, a
/// sparse row computing (Lap f)/4 in the chart's own coordinate.
pub struct AtlasOps {
    pub ddbar: Vec<Rows>,
}

/// Entry l of the periodic spectral second-derivative row for an even
/// number n of uniform angles (derivative in the angle itself).
fn theta_d2_entry(l: usize, n: usize) -> f64 {
    if l == 0 {
        -(n as f64 * n as f64) / 12.0 - 1.0 / 6.0
    } else {
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let s = (l as f64 * h / 2.0).sin();
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        -sign / (2.0 * s * s)
    }
}

/// Pick a window [lo, lo+w) of the ascending axis nearest to x0.
fn axis_window(nodes: &[f64], x0: f64, w: usize) -> (usize, usize) {
    let n = nodes.len();
    let w = w.min(n);
    let idx = nodes.partition_point(|&v| v < x0);
    let lo = idx.saturating_sub(w / 2).min(n - w);
    (lo, lo + w)
}

/// Radial axis of a polar grid through the center, extended by antipodal
/// identification: node -r at angle theta is the grid's own node
/// (r, theta + pi).
struct RadialAxis {
    /// Signed radii, ascending.
    coords: Vec<f64>,
    /// Ring index and whether the angle flips by pi.
    rings: Vec<(usize, bool)>,
}

fn radial_axis(radii: &[f64]) -> RadialAxis {
    let mut coords = Vec::new();
    let mut rings = Vec::new();
    for (k, &r) in radii.iter().enumerate().rev() {
        coords.push(-r);
        rings.push((k, true));
    }
    for (k, &r) in radii.iter().enumerate() {
        coords.push(r);
        rings.push((k, false));
    }
    RadialAxis { coords, rings }
}

/// ddbar rows of one polar chart (full circle, uniform angles).
///
/// Center charts differentiate in r with stencils crossing the origin by
/// the antipodal identification. Annulus charts differentiate in s = ln r,
/// where deck-symmetric pullbacks stay entire and the operator collapses
/// to ddbar f = (f_ss + f_thth) / (4 r^2).
fn polar_rows(
    radii: &[f64],
    thetas: &[f64],
    through_center: bool,
) -> Rows {
    let n_t = thetas.len();
    assert!(n_t % 2 == 0, "spectral angle rows need an even angle count");
    let mut rows = Rows::with_capacity(radii.len() * n_t);
    if through_center {
        let ax = radial_axis(radii);
        for (ir, &r) in radii.iter().enumerate() {
            let (lo, hi) = axis_window(&ax.coords, r, WIN);
            let win = &ax.coords[lo..hi];
            let d1 = fd_weights(r, win, 1);
            let d2 = fd_weights(r, win, 2);
            for it in 0..n_t {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(WIN + n_t);
                for (k, _) in win.iter().enumerate() {
                    let (ring, flip) = ax.rings[lo + k];
                    let jt = if flip { (it + n_t / 2) % n_t } else { it };
                    let coef = 0.25 * (d2[k] + d1[k] / r);
                    if coef != 0.0 {
                        row.push((ring * n_t + jt, coef));
                    }
                }
                for jt in 0..n_t {
                    let l = (jt + n_t - it) % n_t;
                    let coef = 0.25 * theta_d2_entry(l.min(n_t - l), n_t) / (r * r);
                    row.push((ir * n_t + jt, coef));
                }
                rows.push(row);
            }
        }
    } else {
        let s_axis: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        for (ir, &r) in radii.iter().enumerate() {
            let s = s_axis[ir];
            let (lo, hi) = axis_window(&s_axis, s, WIN);
            let d2 = fd_weights(s, &s_axis[lo..hi], 2);
            for it in 0..n_t {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(WIN + n_t);
                for (k, &c) in d2.iter().enumerate() {
                    if c != 0.0 {
                        row.push(((lo + k) * n_t + it, 0.25 * c / (r * r)));
                    }
                }
                for jt in 0..n_t {
                    let l = (jt + n_t - it) % n_t;
                    let coef = 0.25 * theta_d2_entry(l.min(n_t - l), n_t) / (r * r);
                    row.push((ir * n_t + jt, coef));
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// ddbar rows of a sector chart (Gauss-Legendre in both r and theta).
fn arc_rows(radii: &[f64], thetas: &[f64]) -> Rows {
    let n_t = thetas.len();
    let mut rows = Rows::with_capacity(radii.len() * n_t);
    for (ir, &r) in radii.iter().enumerate() {
        let (rlo, rhi) = axis_window(radii, r, WIN);
        let rwin = &radii[rlo..rhi];
        let d1 = fd_weights(r, rwin, 1);
        let d2 = fd_weights(r, rwin, 2);
        for (it, &th) in thetas.iter().enumerate() {
            let (tlo, thi) = axis_window(thetas, th, WIN);
            let twin = &thetas[tlo..thi];
            let t2 = fd_weights(th, twin, 2);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * WIN);
            for k in 0..rwin.len() {
                let coef = 0.25 * (d2[k] + d1[k] / r);
                if coef != 0.0 {
                    row.push(((rlo + k) * n_t + it, coef));
                }
            }
            for k in 0..twin.len() {
                let coef = 0.25 * t2[k] / (r * r);
                if coef != 0.0 {
                    row.push((ir * n_t + (tlo + k), coef));
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// ddbar rows of a tensor rectangle chart.
fn cart_rows(xs: &[f64], ys: &[f64]) -> Rows {
    let n_y = ys.len();
    let mut rows = Rows::with_capacity(xs.len() * n_y);
    for (ix, &x) in xs.iter().enumerate() {
        let (xlo, xhi) = axis_window(xs, x, WIN);
        let dx2 = fd_weights(x, &xs[xlo..xhi], 2);
        for (iy, &y) in ys.iter().enumerate() {
            let (ylo, yhi) = axis_window(ys, y, WIN);
            let dy2 = fd_weights(y, &ys[ylo..yhi], 2);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * WIN);
            for (k, &c) in dx2.iter().enumerate() {
                if c != 0.0 {
                    row.push(((xlo + k) * n_y + iy, 0.25 * c));
                }
            }
            for (k, &c) in dy2.iter().enumerate() {
                if c != 0.0 {
                    row.push((ix * n_y + (ylo + k), 0.25 * c));
                }
            }
            rows.push(row);
        }
    }
    rows
}

impl AtlasOps {
    pub fn build(atlas: &ChartAtlas) -> Self {
        let ddbar = atlas
            .charts
            .iter()
            .map(|chart| match &chart.grid {
                Grid::Polar {
                    radii,
                    thetas,
                    panel_edges,
                    ..
                } => polar_rows(radii, thetas, panel_edges[0] == 0.0),
                Grid::PolarArc { radii, thetas, .. } => arc_rows(radii, thetas),
                Grid::Cart { xs, ys, .. } => cart_rows(xs, ys),
            })
            .collect();
        AtlasOps { ddbar }
    }

    /// Apply the per-chart ddbar rows to a global nodal field.
    pub fn apply_ddbar(&self, atlas: &ChartAtlas, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), atlas.n_nodes);
        let mut out = vec![0.0; atlas.n_nodes];
        for (c, rows) in self.ddbar.iter().enumerate() {
            let off = atlas.offsets[c];
            for (i, row) in rows.iter().enumerate() {
                let mut s = 0.0;
                for &(j, a) in row.iter() {
                    s += a * values[off + j];
                }
                out[off + i] = s;
            }
        }
        out
    }
}

/// Curvature density of a weight field: theta = ddbar w per node, computed
/// as reference curvature plus ddbar of the relative scalar. Differentiating
/// the smooth scalar instead of the raw weight keeps the result accurate up
/// to the chart boundaries.
pub struct CurvatureField {
    pub theta: Vec<f64>,
}

impl CurvatureField {
    pub fn of(atlas: &ChartAtlas, ops: &AtlasOps, field: &WeightField) -> Self {
        let u = field.relative_scalar(atlas);
        let mut theta = ops.apply_ddbar(atlas, &u);
        let base = reference_curvature(atlas, field.m_k, field.k_l);
        for (t, b) in theta.iter_mut().zip(base.iter()) {
            *t += b;
        }
        CurvatureField { theta }
    }

    /// Total curvature; 2 pi times the bundle degree on a compact model.
    pub fn total(&self, atlas: &ChartAtlas) -> f64 {
        atlas.integrate(&self.theta).expect("finite curvature")
    }
}

/// Interpolation row of a chart at an interior point zeta: sparse
/// chart-local coefficients reproducing smooth nodal fields.
pub fn interp_row(chart: &Chart, zeta: Complex64) -> Vec<(usize, f64)> {
    match &chart.grid {
        Grid::Polar {
            radii,
            thetas,
            panel_edges,
            center,
            ..
        } => {
            let rel = zeta - center;
            let n_t = thetas.len();
            let r = rel.norm();
            let th = rel.arg().rem_euclid(2.0 * std::f64::consts::PI);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(WIN * n_t);
            if panel_edges[0] == 0.0 {
                let ax = radial_axis(radii);
                let (lo, hi) = axis_window(&ax.coords, r, WIN);
                let win = &ax.coords[lo..hi];
                let rrow = bary_row(r, win, &bary_weights(win));
                for (k, &a) in rrow.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let (ring, flip) = ax.rings[lo + k];
                    let th_eff = if flip {
                        th + std::f64::consts::PI
                    } else {
                        th
                    };
                    for (jt, &b) in trig_row(th_eff, n_t).iter().enumerate() {
                        if b != 0.0 {
                            out.push((ring * n_t + jt, a * b));
                        }
                    }
                }
            } else {
                // Annulus: interpolate radially in s = ln r, matching the
                // deck-adapted differentiation.
                let s_axis: Vec<f64> = radii.iter().map(|v| v.ln()).collect();
                let s = r.ln();
                let (lo, hi) = axis_window(&s_axis, s, WIN);
                let win = &s_axis[lo..hi];
                let rrow = bary_row(s, win, &bary_weights(win));
                let trow = trig_row(th, n_t);
                for (k, &a) in rrow.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (jt, &b) in trow.iter().enumerate() {
                        if b != 0.0 {
                            out.push(((lo + k) * n_t + jt, a * b));
                        }
                    }
                }
            }
            out
        }
        Grid::PolarArc { radii, thetas, .. } => {
            let n_t = thetas.len();
            let r = zeta.norm();
            let mut th = zeta.arg();
            // The sector's angle list may live on either side of the branch
            // of arg; shift by 2 pi toward the list when needed.
            if th < thetas[0] - std::f64::consts::PI {
                th += 2.0 * std::f64::consts::PI;
            }
            if th > thetas[n_t - 1] + std::f64::consts::PI {
                th -= 2.0 * std::f64::consts::PI;
            }
            let (rlo, rhi) = axis_window(radii, r, WIN);
            let rrow = bary_row(r, &radii[rlo..rhi], &bary_weights(&radii[rlo..rhi]));
            let (tlo, thi) = axis_window(thetas, th, WIN);
            let trow = bary_row(th, &thetas[tlo..thi], &bary_weights(&thetas[tlo..thi]));
            let mut out = Vec::with_capacity(WIN * WIN);
            for (k, &a) in rrow.iter().enumerate() {
                for (j, &b) in trow.iter().enumerate() {
                    let v = a * b;
                    if v != 0.0 {
                        out.push(((rlo + k) * n_t + (tlo + j), v));
                    }
                }
            }
            out
        }
        Grid::Cart { xs, ys, .. } => {
            let n_y = ys.len();
            let (xlo, xhi) = axis_window(xs, zeta.re, WIN);
            let xrow = bary_row(zeta.re, &xs[xlo..xhi], &bary_weights(&xs[xlo..xhi]));
            let (ylo, yhi) = axis_window(ys, zeta.im, WIN);
            let yrow = bary_row(zeta.im, &ys[ylo..yhi], &bary_weights(&ys[ylo..yhi]));
            let mut out = Vec::with_capacity(WIN * WIN);
            for (k, &a) in xrow.iter().enumerate() {
                for (j, &b) in yrow.iter().enumerate() {
                    let v = a * b;
                    if v != 0.0 {
                        out.push(((xlo + k) * n_y + (ylo + j), v));
                    }
                }
            }
            out
        }
    }
}

/// Exact trigonometric interpolation row at angle th over n uniform angles
/// (n even): reproduces trigonometric polynomials below the grid Nyquist.
fn trig_row(th: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut row = vec![0.0; n];
    for (k, r) in row.iter_mut().enumerate() {
        let mut u = th - k as f64 * h;
        while u > std::f64::consts::PI {
            u -= 2.0 * std::f64::consts::PI;
        }
        while u < -std::f64::consts::PI {
            u += 2.0 * std::f64::consts::PI;
        }
        if u.abs() < 1e-13 {
            row.fill(0.0);
            row[k] = 1.0;
            return row;
        }
        *r = (n as f64 * u / 2.0).sin() / (n as f64 * (u / 2.0).tan());
    }
    row
}

/// Interpolate a chart-local slice of nodal values at zeta.
pub fn interp_value(chart: &Chart, zeta: Complex64, values: &[f64]) -> f64 {
    interp_row(chart, zeta)
        .iter()
        .map(|&(i, a)| a * values[i])
        .sum()
}

/// Evaluate a global scalar nodal field at a model point, averaging the
/// covering charts with their partition profiles. Returns None when no
/// chart covers the point.
pub fn eval_scalar(
    atlas: &ChartAtlas,
    x: Complex64,
    y: Complex64,
    values: &[f64],
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..atlas.charts.len() {
        if let Some(zeta) = atlas.locate(c, x, y) {
            let p = atlas.charts[c].prof.value(zeta);
            if p < 1e-9 {
                continue;
            }
            let off = atlas.offsets[c];
            let row = interp_row(&atlas.charts[c], zeta);
            let v: f64 = row.iter().map(|&(i, a)| a * values[off + i]).sum();
            num += p * v;
            den += p;
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Global sparse row evaluating a scalar nodal field at a model point
/// through every covering chart except `exclude`, partition weighted.
pub fn scalar_interp_row(
    atlas: &ChartAtlas,
    x: Complex64,
    y: Complex64,
    exclude: usize,
) -> Option<Vec<(usize, f64)>> {
    let mut parts: Vec<(usize, Complex64, f64)> = Vec::new();
    for c in 0..atlas.charts.len() {
        if c == exclude {
            continue;
        }
        if let Some(zeta) = atlas.locate(c, x, y) {
            let p = atlas.charts[c].prof.value(zeta);
            if p > 1e-6 {
                parts.push((c, zeta, p));
            }
        }
    }
    let den: f64 = parts.iter().map(|&(_, _, p)| p).sum();
    if den <= 0.0 {
        return None;
    }
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (c, zeta, p) in parts {
        let off = atlas.offsets[c];
        for (i, a) in interp_row(&atlas.charts[c], zeta) {
            out.push((off + i, a * p / den));
        }
    }
    Some(out)
}

/// Frame shift taking a weight of (m_k, k_l) from chart `from`'s frame to
/// chart `to`'s frame at the model point x.
pub fn weight_shift(
    atlas: &ChartAtlas,
    from: usize,
    to: usize,
    zeta_from: Complex64,
    zeta_to: Complex64,
    x: Complex64,
    m_k: i64,
    k_l: i64,
) -> f64 {
    let xp_from = chart_xp(&atlas.model, &atlas.charts[from], zeta_from);
    let xp_to = chart_xp(&atlas.model, &atlas.charts[to], zeta_to);
    let dlog_k = 2.0 * (xp_to.norm().ln() - xp_from.norm().ln());
    let d = match &atlas.model {
        Model::P1 { l_degree } => *l_degree as f64,
        _ => 0.0,
    };
    let dlog_l = l_frame_shift(
        &atlas.model,
        &atlas.charts[from].map,
        &atlas.charts[to].map,
        x,
    ) * d;
    m_k as f64 * dlog_k + k_l as f64 * dlog_l
}

/// Mean of a scalar field over the circle |z - center| = delta minus the
/// center value, in a single-chart model coordinate. Nonnegative up to
/// discretization for subharmonic fields. None if a sample leaves the atlas.
pub fn circle_mean_defect(
    atlas: &ChartAtlas,
    values: &[f64],
    center: Complex64,
    delta: f64,
    n_angle: usize,
) -> Option<f64> {
    let at = |x: Complex64| eval_scalar(atlas, x, Complex64::new(0.0, 0.0), values);
    let c0 = at(center)?;
    let mut mean = 0.0;
    for k in 0..n_angle {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / n_angle as f64;
        mean += at(center + Complex64::from_polar(delta, phi))?;
    }
    Some(mean / n_angle as f64 - c0)
}

/// The kind of chart map, for tests that pick a chart per grid family.
pub fn map_kind(chart: &Chart) -> &'static str {
    match chart.map {
        ChartMap::P1Affine | ChartMap::P1Inverse => "projective",
        ChartMap::Disk => "disk",
        ChartMap::HRect { .. } => "rect",
        ChartMap::HPair { .. } => "pair",
        ChartMap::HSingle => "single",
        ChartMap::HInfOdd | ChartMap::HInfEven { .. } => "infinity",
        ChartMap::HSleeve { .. } => "sleeve",
    }
}
