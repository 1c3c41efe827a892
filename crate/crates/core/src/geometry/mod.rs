//! Chart atlases for the model varieties, with quadrature, partitions of
//! unity, and section spaces of m*K + k*L.
//!
//! A chart carries a structured node set in its own coordinate `zeta`
//! (polar Gauss-Legendre x uniform angles, or a tensor Gauss-Legendre
//! rectangle), the model coordinates (x, y) of each node, and `xp = dx/dzeta`.
//! Quadrature weights include the factor 2 that converts Lebesgue area to the
//! sqrt(-1) dz wedge dzbar normalization used throughout.
//!
//! Partition values are per node and sum to 1 over all charts covering a
//! point. Projective and disk models use indicator partitions with exact
//! circle tiling; the hyperelliptic atlas uses smooth profiles built from
//! erf steps in each chart's own coordinates (see `hyper`).

pub mod hyper;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::util::{gauss_legendre_on, polyval};

pub use hyper::{build_hyper_atlas, HyperCurve};

#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("branch polynomial has a near-repeated root: separation {sep:.3e} < {min:.3e}")]
    NonSquarefree { sep: f64, min: f64 },
    #[error("requested section space is empty (projective degree {degree})")]
    EmptySpace { degree: i64 },
    #[error("density is not-a-number at global node {node}")]
    NanDensity { node: usize },
    #[error("{msg}")]
    Unsupported { msg: String },
}

/// Which model variety an atlas describes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Model {
    /// The projective line; `l_degree` is the degree of the auxiliary line
    /// bundle L (sections of m*K + k*L are polynomials of degree
    /// k*l_degree - 2m in the affine coordinate).
    P1 { l_degree: i64 },
    /// The unit disk, one chart, no compact section theory.
    Disk,
    /// A hyperelliptic curve y^2 = p(x) with p squarefree of degree 5 or 6.
    Hyperelliptic(HyperCurve),
}

/// Tensor structure of a chart's nodes.
#[derive(Debug, Clone)]
pub enum Grid {
    /// Nodes zeta = center + r e^{i theta}; radii are Gauss-Legendre on one
    /// or more panels, angles uniform over the full circle.
    /// Node index = ir * n_theta + it.
    Polar {
        center: Complex64,
        radii: Vec<f64>,
        wr: Vec<f64>,
        thetas: Vec<f64>,
        wth: f64,
        /// Edges of the radial panels (quadrature is exact per panel).
        panel_edges: Vec<f64>,
    },
    /// Sector nodes zeta = r e^{i theta}, Gauss-Legendre in both r and
    /// theta (theta is not periodic). Node index = ir * n_theta + it.
    PolarArc {
        radii: Vec<f64>,
        wr: Vec<f64>,
        thetas: Vec<f64>,
        wth: Vec<f64>,
    },
    /// Nodes zeta = xs[ix] + i ys[iy], Gauss-Legendre both ways.
    /// Node index = ix * ys.len() + iy.
    Cart {
        xs: Vec<f64>,
        wx: Vec<f64>,
        ys: Vec<f64>,
        wy: Vec<f64>,
    },
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Polar { radii, thetas, .. } => radii.len() * thetas.len(),
            Grid::PolarArc { radii, thetas, .. } => radii.len() * thetas.len(),
            Grid::Cart { xs, ys, .. } => xs.len() * ys.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The region of the zeta plane a chart covers (a superset of its nodes,
/// used by point location).
#[derive(Debug, Clone)]
pub enum Domain {
    DiskD { r_out: f64 },
    Annulus { r_in: f64, r_out: f64 },
    Sector { r_in: f64, r_out: f64, dir: f64, half: f64 },
    Box { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Domain {
    pub fn contains(&self, zeta: Complex64) -> bool {
        match *self {
            Domain::DiskD { r_out } => zeta.norm() <= r_out,
            Domain::Annulus { r_in, r_out } => {
                let r = zeta.norm();
                r >= r_in && r <= r_out
            }
            Domain::Sector {
                r_in,
                r_out,
                dir,
                half,
            } => {
                let r = zeta.norm();
                if r < r_in || r > r_out {
                    return false;
                }
                let mut da = zeta.arg() - dir;
                while da > std::f64::consts::PI {
                    da -= 2.0 * std::f64::consts::PI;
                }
                while da < -std::f64::consts::PI {
                    da += 2.0 * std::f64::consts::PI;
                }
                da.abs() <= half
            }
            Domain::Box { x0, x1, y0, y1 } => {
                zeta.re >= x0 && zeta.re <= x1 && zeta.im >= y0 && zeta.im <= y1
            }
        }
    }
}

/// Smooth partition profile of a chart in its own coordinate: a product of
/// erf-step ramps. `One` marks indicator partitions handled directly.
#[derive(Debug, Clone)]
pub enum ProfSpec {
    One,
    /// Ramp in rho = max(|zeta|, 1/|zeta|): plateau for rho <= core,
    /// decays to ~0 at edge.
    AnnulusP { core: f64, edge: f64 },
    /// Ramp in |zeta|.
    DiskP { core: f64, edge: f64 },
    /// Radial trapezoid (rises over [r0,r1], falls over [r2,r3]) times an
    /// angular ramp around `dir`.
    SectorP {
        r: (f64, f64, f64, f64),
        a_core: f64,
        a_edge: f64,
        dir: f64,
    },
    /// Trapezoid ramps along both axes: (lo, plateau_lo, plateau_hi, hi).
    BoxP {
        x: (f64, f64, f64, f64),
        y: (f64, f64, f64, f64),
    },
}

/// One-sided smooth ramp: ~0 for t <= 0, ~1 for t >= 1, erf profile.
pub fn ramp(t: f64) -> f64 {
    crate::util::smooth_step(3.0 * (2.0 * t - 1.0))
}

fn trapezoid(v: f64, e: (f64, f64, f64, f64)) -> f64 {
    ramp((v - e.0) / (e.1 - e.0)) * ramp((e.3 - v) / (e.3 - e.2))
}

impl ProfSpec {
    pub fn value(&self, zeta: Complex64) -> f64 {
        match *self {
            ProfSpec::One => 1.0,
            ProfSpec::AnnulusP { core, edge } => {
                let r = zeta.norm();
                let rho = r.max(1.0 / r);
                ramp((edge - rho) / (edge - core))
            }
            ProfSpec::DiskP { core, edge } => ramp((edge - zeta.norm()) / (edge - core)),
            ProfSpec::SectorP {
                r,
                a_core,
                a_edge,
                dir,
            } => {
                let rho = zeta.norm();
                let mut da = zeta.arg() - dir;
                while da > std::f64::consts::PI {
                    da -= 2.0 * std::f64::consts::PI;
                }
                while da < -std::f64::consts::PI {
                    da += 2.0 * std::f64::consts::PI;
                }
                trapezoid(rho, r) * ramp((a_edge - da.abs()) / (a_edge - a_core))
            }
            ProfSpec::BoxP { x, y } => trapezoid(zeta.re, x) * trapezoid(zeta.im, y),
        }
    }
}

/// How a chart's coordinate maps into the model.
#[derive(Debug, Clone, PartialEq)]
pub enum ChartMap {
    /// x = zeta on the affine part of the projective line.
    P1Affine,
    /// x = 1/zeta, the chart at infinity.
    P1Inverse,
    /// x = zeta on the unit disk.
    Disk,
    /// Curve chart, x = zeta, fixed sheet sign for y.
    HRect { sheet: i8 },
    /// Joukowski double cover of an ellipse around a root pair:
    /// x = c + d (zeta + 1/zeta) / 2 on an annulus 1/rho <= |zeta| <= rho.
    HPair { pair: usize },
    /// Square-root chart at the unpaired root: x = e + zeta^2.
    HSingle,
    /// Chart at infinity of a degree-5 curve: x = c0 + 1/zeta^2.
    HInfOdd,
    /// Sheet chart at infinity of a degree-6 curve: x = c0 + 1/zeta.
    HInfEven { sheet: i8 },
    /// Sector bridge along the ray cut of the unpaired root: x = e + zeta^2
    /// restricted to |arg(zeta) - dir| <= half_angle, fixed continuation.
    HSleeve { sheet: i8 },
}

/// One chart's worth of nodes and per-node model data.
#[derive(Debug, Clone)]
pub struct Chart {
    pub label: String,
    pub map: ChartMap,
    pub grid: Grid,
    pub dom: Domain,
    pub prof: ProfSpec,
    /// zeta per node.
    pub nodes: Vec<Complex64>,
    /// Quadrature weight per node, already including the factor 2 from the
    /// sqrt(-1) dz wedge dzbar convention.
    pub qw: Vec<f64>,
    /// Partition-of-unity value per node.
    pub partition: Vec<f64>,
    /// Model coordinate x (affine coordinate of the base model).
    pub x: Vec<Complex64>,
    /// Second coordinate y on a curve; zero elsewhere.
    pub y: Vec<Complex64>,
    /// dx/dzeta per node.
    pub xp: Vec<Complex64>,
    /// (dx/dzeta) / y on curve charts, in cancellation-free form; this is
    /// the factor converting the (dx/y)^m frame to the (dzeta)^m frame.
    pub gq: Vec<Complex64>,
}

impl Chart {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Membership of one chart's node in another chart, with the log-frame
/// shifts for weights of m*K + k*L: w_other = w_self + m*dlog_k + k*dlog_l.
#[derive(Debug, Clone)]
pub struct Membership {
    pub chart: usize,
    pub zeta: Complex64,
    pub dlog_k: f64,
    pub dlog_l: f64,
}

#[derive(Debug, Clone)]
pub struct ChartAtlas {
    pub model: Model,
    pub charts: Vec<Chart>,
    /// Global node index of chart c's first node.
    pub offsets: Vec<usize>,
    pub n_nodes: usize,
    /// For each global node, the list of OTHER charts containing its point.
    pub memberships: Vec<Vec<Membership>>,
    /// Total degree in (x, xbar) up to which owned-region quadrature of
    /// polynomial densities is exact (projective/disk atlases only).
    pub exactness_degree: usize,
}

impl ChartAtlas {
    pub fn global_index(&self, chart: usize, local: usize) -> usize {
        self.offsets[chart] + local
    }

    pub fn chart_of(&self, global: usize) -> (usize, usize) {
        let c = match self.offsets.binary_search(&global) {
            Ok(c) => c,
            Err(c) => c - 1,
        };
        (c, global - self.offsets[c])
    }

    /// Integral of a density given per global node, against the partition
    /// weighted quadrature. The density is the scalar multiplying
    /// sqrt(-1) dz wedge dzbar in the chart's own coordinate.
    pub fn integrate(&self, density: &[f64]) -> Result<f64, GeomError> {
        assert_eq!(density.len(), self.n_nodes);
        let mut total = 0.0;
        for (c, chart) in self.charts.iter().enumerate() {
            let off = self.offsets[c];
            for i in 0..chart.n_nodes() {
                let v = density[off + i];
                if !v.is_finite() {
                    return Err(GeomError::NanDensity { node: off + i });
                }
                total += chart.partition[i] * chart.qw[i] * v;
            }
        }
        Ok(total)
    }

    /// Same, but nodes with `mask[i] == false` are skipped entirely.
    pub fn integrate_masked(&self, density: &[f64], mask: &[bool]) -> f64 {
        let mut total = 0.0;
        for (c, chart) in self.charts.iter().enumerate() {
            let off = self.offsets[c];
            for i in 0..chart.n_nodes() {
                if !mask[off + i] {
                    continue;
                }
                total += chart.partition[i] * chart.qw[i] * density[off + i];
            }
        }
        total
    }

    /// Locate the curve/model point of `(x, y)` in chart `c`, returning its
    /// chart coordinate if the point lies in that chart's domain.
    pub fn locate(&self, c: usize, x: Complex64, y: Complex64) -> Option<Complex64> {
        match &self.model {
            Model::Hyperelliptic(curve) => hyper::locate(curve, &self.charts[c], x, y),
            _ => {
                let chart = &self.charts[c];
                let zeta = match chart.map {
                    ChartMap::P1Affine | ChartMap::Disk => x,
                    ChartMap::P1Inverse => {
                        if x.norm() < 1e-14 {
                            return None;
                        }
                        1.0 / x
                    }
                    _ => unreachable!("curve chart on a non-curve model"),
                };
                if chart.dom.contains(zeta) {
                    Some(zeta)
                } else {
                    None
                }
            }
        }
    }
}

/// Build a polar grid on the given radial panels.
///
/// Returns (radii, wr, thetas, wth).
pub fn polar_grid(
    panel_edges: &[f64],
    n_per_panel: &[usize],
    n_theta: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    assert_eq!(panel_edges.len(), n_per_panel.len() + 1);
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    for (p, &n) in n_per_panel.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, panel_edges[p], panel_edges[p + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let wth = 2.0 * std::f64::consts::PI / n_theta as f64;
    let thetas: Vec<f64> = (0..n_theta).map(|k| k as f64 * wth).collect();
    (radii, wr, thetas, wth)
}

pub(crate) fn grid_nodes(grid: &Grid) -> (Vec<Complex64>, Vec<f64>) {
    match grid {
        Grid::Polar {
            center,
            radii,
            wr,
            thetas,
            wth,
            ..
        } => {
            let mut nodes = Vec::with_capacity(radii.len() * thetas.len());
            let mut qw = Vec::with_capacity(nodes.capacity());
            for (ir, &r) in radii.iter().enumerate() {
                for &th in thetas.iter() {
                    nodes.push(center + Complex64::from_polar(r, th));
                    qw.push(2.0 * r * wr[ir] * wth);
                }
            }
            (nodes, qw)
        }
        Grid::PolarArc {
            radii,
            wr,
            thetas,
            wth,
        } => {
            let mut nodes = Vec::with_capacity(radii.len() * thetas.len());
            let mut qw = Vec::with_capacity(nodes.capacity());
            for (ir, &r) in radii.iter().enumerate() {
                for (it, &th) in thetas.iter().enumerate() {
                    nodes.push(Complex64::from_polar(r, th));
                    qw.push(2.0 * r * wr[ir] * wth[it]);
                }
            }
            (nodes, qw)
        }
        Grid::Cart { xs, wx, ys, wy } => {
            let mut nodes = Vec::with_capacity(xs.len() * ys.len());
            let mut qw = Vec::with_capacity(nodes.capacity());
            for (ix, &x) in xs.iter().enumerate() {
                for (iy, &y) in ys.iter().enumerate() {
                    nodes.push(Complex64::new(x, y));
                    qw.push(2.0 * wx[ix] * wy[iy]);
                }
            }
            (nodes, qw)
        }
    }
}

/// Node counts for the projective-line and disk atlases.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolarResolution {
    /// Radial nodes on the owned panel [0, 1].
    pub n_r: usize,
    /// Radial nodes on the halo panel [1, 1.25].
    pub n_halo: usize,
    pub n_theta: usize,
}

impl Default for PolarResolution {
    fn default() -> Self {
        PolarResolution {
            n_r: 26,
            n_halo: 8,
            n_theta: 48,
        }
    }
}

pub const P1_HALO_OUTER: f64 = 1.25;

/// Two polar charts (affine and inverse coordinate), each owning its closed
/// unit disk, with a halo annulus up to 1.25 for overlap. The partition is
/// the indicator of the owned disk; the two owned disks tile the projective
/// line up to the shared unit circle, which has measure zero.
pub fn build_p1_atlas(res: PolarResolution, l_degree: i64) -> ChartAtlas {
    let mut charts = Vec::new();
    for which in 0..2 {
        let (radii, wr, thetas, wth) = polar_grid(
            &[0.0, 1.0, P1_HALO_OUTER],
            &[res.n_r, res.n_halo],
            res.n_theta,
        );
        let grid = Grid::Polar {
            center: Complex64::new(0.0, 0.0),
            radii,
            wr,
            thetas,
            wth,
            panel_edges: vec![0.0, 1.0, P1_HALO_OUTER],
        };
        let (nodes, qw) = grid_nodes(&grid);
        let n = nodes.len();
        let partition: Vec<f64> = nodes
            .iter()
            .map(|z| if z.norm() < 1.0 { 1.0 } else { 0.0 })
            .collect();
        let (map, label) = if which == 0 {
            (ChartMap::P1Affine, "affine".to_string())
        } else {
            (ChartMap::P1Inverse, "inverse".to_string())
        };
        let x: Vec<Complex64> = match map {
            ChartMap::P1Affine => nodes.clone(),
            ChartMap::P1Inverse => nodes.iter().map(|w| 1.0 / w).collect(),
            _ => unreachable!(),
        };
        let xp: Vec<Complex64> = match map {
            ChartMap::P1Affine => vec![Complex64::new(1.0, 0.0); n],
            ChartMap::P1Inverse => nodes.iter().map(|w| -1.0 / (w * w)).collect(),
            _ => unreachable!(),
        };
        charts.push(Chart {
            label,
            map,
            grid,
            dom: Domain::DiskD {
                r_out: P1_HALO_OUTER,
            },
            prof: ProfSpec::One,
            nodes,
            qw,
            partition,
            x,
            y: vec![Complex64::new(0.0, 0.0); n],
            xp,
            gq: vec![Complex64::new(0.0, 0.0); n],
        });
    }
    let exactness_degree = (2 * res.n_r - 2).min(res.n_theta - 1);
    finish_atlas(Model::P1 { l_degree }, charts, exactness_degree, l_degree)
}

/// Single polar chart on the closed unit disk.
pub fn build_disk_atlas(res: PolarResolution) -> ChartAtlas {
    disk_atlas_to(res, 1.0)
}

/// Disk atlas truncated at radius r_out. Quadrature against hyperbolic-type
/// densities wants the full disk; differentiation of hyperbolic-type weights
/// only makes sense on a truncated one, where the boundary-value problems
/// live, because stencils reaching toward the rim see the log singularity.
pub fn disk_atlas_to(res: PolarResolution, r_out: f64) -> ChartAtlas {
    let (radii, wr, thetas, wth) = polar_grid(&[0.0, r_out], &[res.n_r], res.n_theta);
    let grid = Grid::Polar {
        center: Complex64::new(0.0, 0.0),
        radii,
        wr,
        thetas,
        wth,
        panel_edges: vec![0.0, r_out],
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let chart = Chart {
        label: "disk".to_string(),
        map: ChartMap::Disk,
        grid,
        dom: Domain::DiskD { r_out },
        prof: ProfSpec::One,
        nodes: nodes.clone(),
        qw,
        partition: vec![1.0; n],
        x: nodes,
        y: vec![Complex64::new(0.0, 0.0); n],
        xp: vec![Complex64::new(1.0, 0.0); n],
        gq: vec![Complex64::new(0.0, 0.0); n],
    };
    let exactness_degree = (2 * res.n_r - 2).min(res.n_theta - 1);
    finish_atlas(Model::Disk, vec![chart], exactness_degree, 0)
}

/// Compute offsets and cross-chart memberships, then assemble the atlas.
pub(crate) fn finish_atlas(
    model: Model,
    charts: Vec<Chart>,
    exactness_degree: usize,
    l_degree: i64,
) -> ChartAtlas {
    let mut offsets = Vec::with_capacity(charts.len());
    let mut n_nodes = 0;
    for c in charts.iter() {
        offsets.push(n_nodes);
        n_nodes += c.n_nodes();
    }
    let mut atlas = ChartAtlas {
        model,
        charts,
        offsets,
        n_nodes,
        memberships: vec![Vec::new(); n_nodes],
        exactness_degree,
    };
    for c in 0..atlas.charts.len() {
        for i in 0..atlas.charts[c].n_nodes() {
            let g = atlas.global_index(c, i);
            let x = atlas.charts[c].x[i];
            let y = atlas.charts[c].y[i];
            let xp_self = atlas.charts[c].xp[i];
            let mut mem = Vec::new();
            for b in 0..atlas.charts.len() {
                if b == c {
                    continue;
                }
                if let Some(zeta) = atlas.locate(b, x, y) {
                    let xp_other = chart_xp(&atlas.model, &atlas.charts[b], zeta);
                    let dlog_k = 2.0 * (xp_other.norm().ln() - xp_self.norm().ln());
                    let dlog_l =
                        l_frame_shift(&atlas.model, &atlas.charts[c].map, &atlas.charts[b].map, x)
                            * l_degree as f64;
                    mem.push(Membership {
                        chart: b,
                        zeta,
                        dlog_k,
                        dlog_l,
                    });
                }
            }
            atlas.memberships[g] = mem;
        }
    }
    atlas
}

/// dx/dzeta of a chart at an arbitrary point of its domain.
pub fn chart_xp(model: &Model, chart: &Chart, zeta: Complex64) -> Complex64 {
    match &chart.map {
        ChartMap::P1Affine | ChartMap::Disk | ChartMap::HRect { .. } => Complex64::new(1.0, 0.0),
        ChartMap::P1Inverse => -1.0 / (zeta * zeta),
        ChartMap::HPair { pair } => match model {
            Model::Hyperelliptic(curve) => {
                let d = curve.pair_half(*pair);
                d * (1.0 - 1.0 / (zeta * zeta)) / 2.0
            }
            _ => unreachable!(),
        },
        ChartMap::HSingle | ChartMap::HSleeve { .. } => 2.0 * zeta,
        ChartMap::HInfOdd => -2.0 / (zeta * zeta * zeta),
        ChartMap::HInfEven { .. } => -1.0 / (zeta * zeta),
    }
}

/// Log-frame shift for one unit of L-degree between two charts, at x.
///
/// On the projective line the inverse-chart frame of a degree-d bundle is
/// x^d times the affine frame, so the log-weight in the other frame is
/// w_other = w_self - 2 (gauge_to - gauge_from) d ln|x|; this returns the
/// per-degree summand -2 (gauge_to - gauge_from) ln|x|.
pub(crate) fn l_frame_shift(model: &Model, from: &ChartMap, to: &ChartMap, x: Complex64) -> f64 {
    match model {
        Model::P1 { .. } => {
            let gauge = |m: &ChartMap| match m {
                ChartMap::P1Affine => 0.0,
                ChartMap::P1Inverse => 1.0,
                _ => unreachable!(),
            };
            let g = gauge(to) - gauge(from);
            if g == 0.0 {
                0.0
            } else {
                -2.0 * g * x.norm().ln()
            }
        }
        // L is trivial (or a K-power) on the other models.
        _ => 0.0,
    }
}

/// A section of m_k * K + k_l * L, expressed per model.
#[derive(Debug, Clone)]
pub enum SectionExpr {
    /// Coefficient polynomial in the affine coordinate (projective line).
    Poly(Vec<Complex64>),
    /// x^xi y^ywt (dx/y)^m on a hyperelliptic curve.
    Monomial { xi: u32, ywt: u8 },
}

/// A basis (or frame) of sections of m_k * K + k_l * L, optionally recombined
/// by a coefficient matrix: section[i] = sum_j combo[i][j] * expr[j].
#[derive(Debug, Clone)]
pub struct SectionBasis {
    pub m_k: i64,
    pub k_l: i64,
    pub exprs: Vec<SectionExpr>,
    pub combo: Option<Vec<Vec<Complex64>>>,
    pub labels: Vec<String>,
}

impl SectionBasis {
    pub fn dim(&self) -> usize {
        match &self.combo {
            Some(c) => c.len(),
            None => self.exprs.len(),
        }
    }

    /// Values of raw expression `e` at all nodes of one chart, in the
    /// chart's (dzeta)^m frame.
    pub fn eval_expr(&self, atlas: &ChartAtlas, c: usize, e: usize) -> Vec<Complex64> {
        let chart = &atlas.charts[c];
        let n = chart.n_nodes();
        let m = self.m_k;
        match &self.exprs[e] {
            SectionExpr::Poly(coef) => {
                // Frame rule: f_inverse(w) = (-1)^m w^D f_affine(1/w) with
                // D = k_l * l_degree - 2 m.
                let d_l = match &atlas.model {
                    Model::P1 { l_degree } => *l_degree,
                    _ => unreachable!("polynomial sections on a non-projective model"),
                };
                let big_d = self.k_l * d_l - 2 * m;
                match chart.map {
                    ChartMap::P1Affine => {
                        (0..n).map(|i| polyval(coef, chart.nodes[i])).collect()
                    }
                    ChartMap::P1Inverse => (0..n)
                        .map(|i| {
                            let w = chart.nodes[i];
                            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                            sign * w.powi(big_d as i32) * polyval(coef, chart.x[i])
                        })
                        .collect(),
                    _ => unreachable!(),
                }
            }
            SectionExpr::Monomial { xi, ywt } => (0..n)
                .map(|i| {
                    let mut v = chart.x[i].powu(*xi);
                    if *ywt == 1 {
                        v *= chart.y[i];
                    }
                    v * chart.gq[i].powi(m as i32)
                })
                .collect(),
        }
    }

    /// Values of basis section `s` at all nodes of chart `c`.
    pub fn eval(&self, atlas: &ChartAtlas, c: usize, s: usize) -> Vec<Complex64> {
        match &self.combo {
            None => self.eval_expr(atlas, c, s),
            Some(combo) => {
                let n = atlas.charts[c].n_nodes();
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                for (e, &coef) in combo[s].iter().enumerate() {
                    if coef.norm() == 0.0 {
                        continue;
                    }
                    let vals = self.eval_expr(atlas, c, e);
                    for i in 0..n {
                        out[i] += coef * vals[i];
                    }
                }
                out
            }
        }
    }

    /// Values of every basis section at every node of chart `c`, as rows.
    pub fn eval_all(&self, atlas: &ChartAtlas, c: usize) -> Vec<Vec<Complex64>> {
        let raw: Vec<Vec<Complex64>> = (0..self.exprs.len())
            .map(|e| self.eval_expr(atlas, c, e))
            .collect();
        match &self.combo {
            None => raw,
            Some(combo) => {
                let n = atlas.charts[c].n_nodes();
                combo
                    .iter()
                    .map(|row| {
                        let mut out = vec![Complex64::new(0.0, 0.0); n];
                        for (e, &coef) in row.iter().enumerate() {
                            if coef.norm() == 0.0 {
                                continue;
                            }
                            for i in 0..n {
                                out[i] += coef * raw[e][i];
                            }
                        }
                        out
                    })
                    .collect()
            }
        }
    }
}

/// The full monomial basis of H^0(m_k K + k_l L) for the model.
pub fn canonical_section_basis(
    atlas: &ChartAtlas,
    m_k: i64,
    k_l: i64,
) -> Result<SectionBasis, GeomError> {
    match &atlas.model {
        Model::P1 { l_degree } => {
            let big_d = k_l * l_degree - 2 * m_k;
            if big_d < 0 {
                return Err(GeomError::EmptySpace { degree: big_d });
            }
            let mut exprs = Vec::new();
            let mut labels = Vec::new();
            for j in 0..=big_d {
                let mut coef = vec![Complex64::new(0.0, 0.0); j as usize + 1];
                coef[j as usize] = Complex64::new(1.0, 0.0);
                exprs.push(SectionExpr::Poly(coef));
                labels.push(format!("z^{j}"));
            }
            Ok(SectionBasis {
                m_k,
                k_l,
                exprs,
                combo: None,
                labels,
            })
        }
        Model::Hyperelliptic(curve) => {
            if k_l != 0 {
                return Err(GeomError::Unsupported {
                    msg: "auxiliary bundle on a curve model must be trivial".into(),
                });
            }
            if m_k < 1 {
                return Err(GeomError::EmptySpace { degree: m_k });
            }
            let m = m_k as u32;
            let genus = curve.genus();
            // Pluricanonical monomials x^i (dx/y)^m, i <= (deg-2) m / 2 - ...
            // For genus 2 (deg 5 or 6): x^i for i <= m, and x^j y for
            // j <= m - 3; dimension (2m - 1) for m >= 2, genus for m = 1.
            assert_eq!(genus, 2, "section table is the genus-2 one");
            let mut exprs = Vec::new();
            let mut labels = Vec::new();
            let i_max = if m == 1 { 1 } else { m };
            for i in 0..=i_max {
                exprs.push(SectionExpr::Monomial { xi: i, ywt: 0 });
                labels.push(format!("x^{i}"));
            }
            if m >= 3 {
                for j in 0..=(m - 3) {
                    exprs.push(SectionExpr::Monomial { xi: j, ywt: 1 });
                    labels.push(format!("x^{j} y"));
                }
            }
            Ok(SectionBasis {
                m_k,
                k_l,
                exprs,
                combo: None,
                labels,
            })
        }
        Model::Disk => Err(GeomError::Unsupported {
            msg: "the disk model has no compact section spaces".into(),
        }),
    }
}

/// Riemann-Roch dimension of H^0(m K + k L) on the projective line:
/// max(0, k l_deg - 2m + 1).
pub fn p1_h0_dim(l_degree: i64, m_k: i64, k_l: i64) -> usize {
    let d = k_l * l_degree - 2 * m_k;
    if d < 0 {
        0
    } else {
        (d + 1) as usize
    }
}

/// Riemann-Roch dimension of H^0(m K) on a genus-2 curve.
pub fn genus2_h0_dim(m_k: i64) -> usize {
    match m_k {
        m if m < 0 => 0,
        0 => 1,
        1 => 2,
        m => (2 * m - 1) as usize,
    }
}
