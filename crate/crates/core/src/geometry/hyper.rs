//! Atlas construction for hyperelliptic curves y^2 = p(x), with p monic and
//! squarefree of degree 5 or 6.
//!
//! Roots are paired by index order: (r0,r1), (r2,r3), and for degree 6
//! (r4,r5); a degree-5 curve has the unpaired root r4. Each chart carries a
//! single-valued y, obtained from one of:
//!
//!  * pair annulus: the Joukowski map x = c + d(zeta + 1/zeta)/2 double
//!    covers an ellipse around the pair segment; the pair's own factor of y
//!    is exactly d(zeta - 1/zeta)/2, which is entire on the annulus, and the
//!    remaining factors are evaluated by cut formulas whose cuts (the other
//!    segments and the ray at the unpaired root) stay outside the ellipse.
//!  * root disk: x = e + s^2 at the unpaired root, y = s g(s) with g given
//!    by a convergent log1p product over the other roots.
//!  * infinity chart: x = c0 + 1/t^2 (degree 5, one chart with deck
//!    t -> -t) or x = c0 + 1/tau (degree 6, two sheet charts).
//!  * sleeve sector: x = e + u^2 on a sector straddling the ray cut of the
//!    unpaired root; y is continued radially from an anchor circle inside
//!    the root disk by sign tracking, so the sector swallows the cut.
//!  * rectangles: two full-width bands above and below the real axis plus
//!    near-axis strips between root clusters, in two sheet copies each; y
//!    is the global product of cut formulas, valid because the rectangles
//!    avoid every cut.
//!
//! Partitions of unity are smooth erf profiles in each chart's own
//! coordinate, normalized pointwise across all charts containing the point.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    finish_atlas, grid_nodes, Chart, ChartAtlas, ChartMap, Domain, GeomError, Grid, Model,
    ProfSpec,
};
use crate::util::{gauss_legendre_on, ln_1p};

const SQUAREFREE_REL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperCurve {
    pub roots: Vec<Complex64>,
    pub c0: Complex64,
    pub scale: f64,
    /// (center, half-difference) per root pair.
    pub pairs: Vec<(Complex64, Complex64)>,
    /// Outer Joukowski radius per pair.
    pub pair_l: Vec<f64>,
    pub single: Option<Complex64>,
    /// x-radius of the unpaired root disk.
    pub single_rx: f64,
    pub sleeve_dir: f64,
    pub sleeve_half: f64,
    pub sleeve_rin: f64,
    pub sleeve_rout: f64,
    /// The infinity chart covers |x - c0| >= r_inf.
    pub r_inf: f64,
}

impl HyperCurve {
    pub fn degree(&self) -> usize {
        self.roots.len()
    }

    pub fn genus(&self) -> usize {
        (self.degree() - 1) / 2
    }

    pub fn pair_center(&self, p: usize) -> Complex64 {
        self.pairs[p].0
    }

    pub fn pair_half(&self, p: usize) -> Complex64 {
        self.pairs[p].1
    }

    pub fn p_eval(&self, x: Complex64) -> Complex64 {
        self.roots.iter().fold(Complex64::new(1.0, 0.0), |a, &e| a * (x - e))
    }

    /// The pair's y-factor with its cut on the segment between the two
    /// roots: d w sqrt(1 - 1/w^2), w = (x - c)/d.
    pub fn pair_factor(&self, p: usize, x: Complex64) -> Complex64 {
        let (c, d) = self.pairs[p];
        let w = (x - c) / d;
        d * w * (Complex64::new(1.0, 0.0) - 1.0 / (w * w)).sqrt()
    }

    /// sqrt(x - e) with the cut along the ray arg(x - e) = 2 sleeve_dir,
    /// the x-image of the sleeve sector's center line.
    pub fn single_factor(&self, x: Complex64) -> Complex64 {
        let e = self.single.expect("degree-5 curve");
        rot_sqrt(x - e, 2.0 * self.sleeve_dir)
    }

    /// One branch of y away from all cuts; the other branch is its negative.
    pub fn y_branch(&self, x: Complex64) -> Complex64 {
        let mut y = Complex64::new(1.0, 0.0);
        for p in 0..self.pairs.len() {
            y *= self.pair_factor(p, x);
        }
        if self.single.is_some() {
            y *= self.single_factor(x);
        }
        y
    }
}

/// sqrt with the branch cut along the ray arg(xi) = dir.
pub fn rot_sqrt(xi: Complex64, dir: f64) -> Complex64 {
    let rot = Complex64::from_polar(1.0, -(dir + std::f64::consts::PI));
    let back = Complex64::from_polar(1.0, (dir + std::f64::consts::PI) / 2.0);
    back * (xi * rot).sqrt()
}

/// Ellipse parameter of w relative to [-1, 1]: |w + sqrt(w^2 - 1)| with the
/// branch of modulus >= 1.
fn ellipse_rho(w: Complex64) -> f64 {
    let s = (w * w - Complex64::new(1.0, 0.0)).sqrt();
    (w + s).norm().max((w - s).norm())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HyperResolution {
    pub pair_nr: [usize; 5],
    pub pair_nth: usize,
    pub disk_nr: [usize; 2],
    pub disk_nth: usize,
    pub inf_nr: [usize; 3],
    pub inf_nth: usize,
    pub sleeve_nr: [usize; 3],
    pub sleeve_nth: [usize; 3],
    pub rect_nx: usize,
    pub rect_ny: usize,
    pub strip_nx: usize,
    pub strip_ny: usize,
}

impl Default for HyperResolution {
    fn default() -> Self {
        HyperResolution {
            pair_nr: [4, 7, 10, 7, 4],
            pair_nth: 52,
            disk_nr: [8, 6],
            disk_nth: 32,
            inf_nr: [8, 7, 14],
            inf_nth: 48,
            sleeve_nr: [6, 22, 6],
            sleeve_nth: [5, 20, 5],
            rect_nx: 30,
            rect_ny: 22,
            strip_nx: 14,
            strip_ny: 12,
        }
    }
}

impl HyperResolution {
    /// Roughly double every node count (for convergence checks).
    pub fn doubled(&self) -> Self {
        HyperResolution {
            pair_nr: [8, 14, 20, 14, 8],
            pair_nth: 104,
            disk_nr: [16, 12],
            disk_nth: 64,
            inf_nr: [16, 14, 28],
            inf_nth: 96,
            sleeve_nr: [12, 44, 12],
            sleeve_nth: [10, 40, 10],
            rect_nx: 60,
            rect_ny: 44,
            strip_nx: 28,
            strip_ny: 24,
        }
    }
}

/// Near-axis feature for strip placement: real extent plus the transverse
/// plateau half-height of the covering chart.
struct AxisFeature {
    lo: f64,
    hi: f64,
    /// transverse plateau half-height of this feature's own chart
    height: f64,
    /// how far a strip may reach into this feature and still land on its
    /// chart's plateau
    overlap: f64,
}

pub fn build_hyper_atlas(
    roots_in: &[Complex64],
    res: &HyperResolution,
) -> Result<ChartAtlas, GeomError> {
    let deg = roots_in.len();
    if deg != 5 && deg != 6 {
        return Err(GeomError::Unsupported {
            msg: format!("branch polynomial degree {deg}, want 5 or 6"),
        });
    }
    let roots = roots_in.to_vec();
    let c0 = roots.iter().sum::<Complex64>() / deg as f64;
    let spread = roots
        .iter()
        .map(|e| (e - c0).norm())
        .fold(0.0f64, f64::max);
    let scale = (2.0 * spread).max(1e-3);
    let mut min_sep = f64::INFINITY;
    for i in 0..deg {
        for j in (i + 1)..deg {
            min_sep = min_sep.min((roots[i] - roots[j]).norm());
        }
    }
    if min_sep < SQUAREFREE_REL * scale {
        return Err(GeomError::NonSquarefree {
            sep: min_sep,
            min: SQUAREFREE_REL * scale,
        });
    }

    let n_pairs = deg / 2;
    let mut pairs = Vec::new();
    for p in 0..n_pairs {
        let a = roots[2 * p];
        let b = roots[2 * p + 1];
        pairs.push(((a + b) / 2.0, (b - a) / 2.0));
    }
    let single = if deg == 5 { Some(roots[4]) } else { None };

    // Joukowski outer radii, capped and clearance-limited.
    let mut pair_l = Vec::new();
    for p in 0..n_pairs {
        let (c, d) = pairs[p];
        let mut rho_min = f64::INFINITY;
        for (k, &e) in roots.iter().enumerate() {
            if k == 2 * p || k == 2 * p + 1 {
                continue;
            }
            rho_min = rho_min.min(ellipse_rho((e - c) / d));
        }
        let l = (1.0 + 0.72 * (rho_min - 1.0)).min(4.5);
        pair_l.push(l);
    }

    let r_inf = 1.5 * spread;

    // Unpaired root: disk radius, sleeve direction and aperture.
    let (single_rx, sleeve_dir, sleeve_half, sleeve_rin, sleeve_rout) = if let Some(e) = single {
        let cmin = roots
            .iter()
            .filter(|&&r| (r - e).norm() > 0.0)
            .map(|r| (r - e).norm())
            .fold(f64::INFINITY, f64::min);
        let rx = 0.75 * cmin;
        // Branch points of y(u) sit at u = +-sqrt(e_k - e); the sleeve must
        // keep an angular margin from all of them.
        let mut obstacle_angles: Vec<f64> = Vec::new();
        for &r in roots.iter() {
            if (r - e).norm() == 0.0 {
                continue;
            }
            let a = (r - e).sqrt().arg();
            obstacle_angles.push(norm_angle(a));
            obstacle_angles.push(norm_angle(a + std::f64::consts::PI));
        }
        obstacle_angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let away = (e - c0).arg();
        // Widest angular gap whose center is usable; prefer the gap
        // nearest the direction away from the root cloud.
        let n = obstacle_angles.len();
        let mut best: Option<(f64, f64)> = None; // (score, center)
        for i in 0..n {
            let a0 = obstacle_angles[i];
            let a1 = if i + 1 < n {
                obstacle_angles[i + 1]
            } else {
                obstacle_angles[0] + 2.0 * std::f64::consts::PI
            };
            let gap = a1 - a0;
            if gap < 0.35 {
                continue;
            }
            let center = norm_angle((a0 + a1) / 2.0);
            let d_away = angle_dist(center, away);
            let score = gap - 0.35 * d_away;
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, center));
            }
        }
        let (_, dir) = best.ok_or_else(|| GeomError::Unsupported {
            msg: "no usable sleeve direction at the unpaired root".into(),
        })?;
        // Half-aperture: stay 0.14 rad clear of the nearest obstacle.
        let nearest = obstacle_angles
            .iter()
            .map(|&a| angle_dist(a, dir))
            .fold(f64::INFINITY, f64::min);
        let half = (nearest - 0.14).min(1.43);
        if half < 0.3 {
            return Err(GeomError::Unsupported {
                msg: "sleeve aperture too narrow at the unpaired root".into(),
            });
        }
        let rin = 0.8 * rx.sqrt();
        // Outer reach: deep enough into the infinity chart that its profile
        // is O(1) where the sleeve's dies.
        let rout = (2.1 * r_inf + (e - c0).norm()).sqrt();
        (rx, dir, half, rin, rout)
    } else {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    };

    let curve = HyperCurve {
        roots: roots.clone(),
        c0,
        scale,
        pairs,
        pair_l,
        single,
        single_rx,
        sleeve_dir,
        sleeve_half,
        sleeve_rin,
        sleeve_rout,
        r_inf,
    };

    // Near-axis features, sorted by real part, for strip placement.
    let mut features: Vec<AxisFeature> = Vec::new();
    features.push(AxisFeature {
        lo: f64::NEG_INFINITY,
        hi: c0.re - 0.95 * r_inf,
        height: 0.35 * r_inf,
        overlap: 0.40 * r_inf,
    });
    for p in 0..n_pairs {
        let (c, d) = curve.pairs[p];
        let l = curve.pair_l[p];
        let l_core = 1.0 + 0.55 * (l - 1.0);
        let a_l = d.norm() * (l + 1.0 / l) / 2.0;
        let a_core = d.norm() * (l_core + 1.0 / l_core) / 2.0;
        let b_core = d.norm() * (l_core - 1.0 / l_core) / 2.0;
        features.push(AxisFeature {
            lo: c.re - a_l,
            hi: c.re + a_l,
            height: b_core,
            overlap: a_l - a_core,
        });
    }
    if let Some(e) = single {
        features.push(AxisFeature {
            lo: e.re - single_rx,
            hi: e.re + single_rx,
            height: 0.3 * single_rx,
            overlap: 0.75 * single_rx,
        });
    }
    if deg == 6 {
        features.push(AxisFeature {
            lo: c0.re + 0.95 * r_inf,
            hi: f64::INFINITY,
            height: 0.35 * r_inf,
            overlap: 0.40 * r_inf,
        });
    }
    features.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());

    // Strips over genuine gaps between consecutive features.
    struct StripSpec {
        x0: f64,
        x1: f64,
        x_core0: f64,
        x_core1: f64,
        h: f64,
    }
    let mut strips: Vec<StripSpec> = Vec::new();
    for i in 0..features.len().saturating_sub(1) {
        let a = &features[i];
        let b = &features[i + 1];
        let gap = b.lo - a.hi;
        if gap <= 0.02 * scale {
            continue;
        }
        let x0 = a.hi - a.overlap;
        let x1 = b.lo + b.overlap;
        let h = 0.9 * a.height.min(b.height);
        strips.push(StripSpec {
            x0,
            x1,
            x_core0: x0 + 0.5 * a.overlap,
            x_core1: x1 - 0.5 * b.overlap,
            h,
        });
    }

    // Horizontal bands: lower edge ducks under every pair and strip plateau.
    let mut h_min = f64::INFINITY;
    for p in 0..n_pairs {
        let (_, d) = curve.pairs[p];
        let l = curve.pair_l[p];
        let l_core = 1.0 + 0.55 * (l - 1.0);
        h_min = h_min.min(d.norm() * (l_core - 1.0 / l_core) / 2.0);
    }
    for s in strips.iter() {
        h_min = h_min.min(0.45 * s.h);
    }
    let eta0 = 0.5 * h_min;
    let band_h = 1.3 * r_inf;
    let band_x0 = c0.re - 1.35 * r_inf;
    let band_x1 = c0.re + 1.35 * r_inf;

    // Panel lines for the bands: every feature edge plus the transition
    // circle of the chart at infinity, where neighbor profiles ramp.
    let mut band_x_splits: Vec<f64> = Vec::new();
    for f in features.iter() {
        if f.lo.is_finite() {
            band_x_splits.push(f.lo);
        }
        if f.hi.is_finite() {
            band_x_splits.push(f.hi);
        }
    }
    band_x_splits.push(c0.re - 1.06 * r_inf);
    band_x_splits.push(c0.re + 1.06 * r_inf);
    let mut b_edge_max = 0.0f64;
    for p in 0..n_pairs {
        let (_, d) = curve.pairs[p];
        let l_edge = 1.0 + 0.92 * (curve.pair_l[p] - 1.0);
        b_edge_max = b_edge_max.max(d.norm() * (l_edge - 1.0 / l_edge) / 2.0);
    }
    let band_y_splits = [1.15 * h_min, b_edge_max];

    // Assemble the charts in a fixed order.
    let mut charts: Vec<Chart> = Vec::new();

    for p in 0..n_pairs {
        charts.push(build_pair_chart(&curve, p, res));
    }
    if single.is_some() {
        charts.push(build_single_disk(&curve, res));
    }
    match deg {
        5 => charts.push(build_inf_odd(&curve, res)),
        6 => {
            charts.push(build_inf_even(&curve, res, 1));
            charts.push(build_inf_even(&curve, res, -1));
        }
        _ => unreachable!(),
    }
    if single.is_some() {
        charts.push(build_sleeve(&curve, res, 1));
        charts.push(build_sleeve(&curve, res, -1));
    }
    let band_y_lower: Vec<f64> = band_y_splits.iter().map(|s| -s).collect();
    for &sheet in &[1i8, -1] {
        charts.push(build_rect(
            &curve,
            "band+",
            sheet,
            band_x0,
            band_x1,
            eta0,
            band_h,
            &band_x_splits,
            &band_y_splits,
            res.rect_nx,
            res.rect_ny,
            0.10,
            h_min,
        ));
        charts.push(build_rect(
            &curve,
            "band-",
            sheet,
            band_x0,
            band_x1,
            -band_h,
            -eta0,
            &band_x_splits,
            &band_y_lower,
            res.rect_nx,
            res.rect_ny,
            0.10,
            h_min,
        ));
    }
    for (si, s) in strips.iter().enumerate() {
        for &sheet in &[1i8, -1] {
            charts.push(build_strip(
                &curve,
                &format!("strip{si}"),
                sheet,
                s.x0,
                s.x1,
                s.x_core0,
                s.x_core1,
                s.h,
                res.strip_nx,
                res.strip_ny,
            ));
        }
    }

    let mut atlas = finish_atlas(Model::Hyperelliptic(curve), charts, 0, 0);
    normalize_partitions(&mut atlas);
    Ok(atlas)
}

fn norm_angle(a: f64) -> f64 {
    let mut a = a;
    while a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    while a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

fn angle_dist(a: f64, b: f64) -> f64 {
    norm_angle(a - b).abs()
}

fn build_pair_chart(curve: &HyperCurve, p: usize, res: &HyperResolution) -> Chart {
    let (c, d) = curve.pairs[p];
    let l = curve.pair_l[p];
    let l_core = 1.0 + 0.55 * (l - 1.0);
    let l_edge = 1.0 + 0.92 * (l - 1.0);
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    let panels = [
        1.0 / l,
        1.0 / l_edge,
        1.0 / l_core,
        l_core,
        l_edge,
        l,
    ];
    for (i, &n) in res.pair_nr.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, panels[i], panels[i + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let wth = 2.0 * std::f64::consts::PI / res.pair_nth as f64;
    let thetas: Vec<f64> = (0..res.pair_nth).map(|k| k as f64 * wth).collect();
    let grid = Grid::Polar {
        center: Complex64::new(0.0, 0.0),
        radii,
        wr,
        thetas,
        wth,
        panel_edges: panels.to_vec(),
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &z in nodes.iter() {
        let w = (z + 1.0 / z) / 2.0;
        let xx = c + d * w;
        let own = d * (z - 1.0 / z) / 2.0;
        let mut rest = Complex64::new(1.0, 0.0);
        for q in 0..curve.pairs.len() {
            if q != p {
                rest *= curve.pair_factor(q, xx);
            }
        }
        if curve.single.is_some() {
            rest *= curve.single_factor(xx);
        }
        x.push(xx);
        y.push(own * rest);
        xp.push(own / z);
        gq.push(1.0 / (z * rest));
    }
    Chart {
        label: format!("pair{p}"),
        map: ChartMap::HPair { pair: p },
        grid,
        dom: Domain::Annulus {
            r_in: 1.0 / l,
            r_out: l,
        },
        prof: ProfSpec::AnnulusP {
            core: l_core,
            edge: l_edge,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp,
        gq,
    }
}

fn build_single_disk(curve: &HyperCurve, res: &HyperResolution) -> Chart {
    let e = curve.single.unwrap();
    let rho = curve.single_rx.sqrt();
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    let panels = [0.0, 0.55 * rho, rho];
    for (i, &n) in res.disk_nr.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, panels[i], panels[i + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let wth = 2.0 * std::f64::consts::PI / res.disk_nth as f64;
    let thetas: Vec<f64> = (0..res.disk_nth).map(|k| k as f64 * wth).collect();
    let grid = Grid::Polar {
        center: Complex64::new(0.0, 0.0),
        radii,
        wr,
        thetas,
        wth,
        panel_edges: panels.to_vec(),
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &s in nodes.iter() {
        let xx = e + s * s;
        let g = single_disk_g(curve, s);
        x.push(xx);
        y.push(s * g);
        xp.push(2.0 * s);
        gq.push(2.0 / g);
    }
    Chart {
        label: "root-disk".to_string(),
        map: ChartMap::HSingle,
        grid,
        dom: Domain::DiskD { r_out: rho },
        prof: ProfSpec::DiskP {
            core: 0.55 * rho,
            edge: 0.92 * rho,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp,
        gq,
    }
}

/// g(s) = prod_k sqrt(e + s^2 - e_k) over the other roots, via principal
/// logs anchored at s = 0; converges on the root disk since
/// |s^2| < distance to every other root.
fn single_disk_g(curve: &HyperCurve, s: Complex64) -> Complex64 {
    let e = curve.single.unwrap();
    let mut half_log = Complex64::new(0.0, 0.0);
    for &r in curve.roots.iter() {
        if (r - e).norm() == 0.0 {
            continue;
        }
        let base = e - r;
        half_log += 0.5 * (base.ln() + ln_1p(s * s / base));
    }
    half_log.exp()
}

fn build_inf_odd(curve: &HyperCurve, res: &HyperResolution) -> Chart {
    let t_out = 1.0 / curve.r_inf.sqrt();
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    // The rim panel carries most integrands' far-field mass (pullbacks
    // scale like |t|^-6 there), so it gets its own fine panel.
    let panels = [0.0, 0.55 * t_out, 0.85 * t_out, t_out];
    for (i, &n) in res.inf_nr.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, panels[i], panels[i + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let wth = 2.0 * std::f64::consts::PI / res.inf_nth as f64;
    let thetas: Vec<f64> = (0..res.inf_nth).map(|k| k as f64 * wth).collect();
    let grid = Grid::Polar {
        center: Complex64::new(0.0, 0.0),
        radii,
        wr,
        thetas,
        wth,
        panel_edges: panels.to_vec(),
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &t in nodes.iter() {
        let xx = curve.c0 + 1.0 / (t * t);
        let g = inf_g(curve, t * t);
        let t2 = t * t;
        let t5 = t2 * t2 * t;
        x.push(xx);
        y.push(g / t5);
        xp.push(-2.0 / (t2 * t));
        gq.push(-2.0 * t2 / g);
    }
    Chart {
        label: "infinity".to_string(),
        map: ChartMap::HInfOdd,
        grid,
        dom: Domain::DiskD { r_out: t_out },
        prof: ProfSpec::DiskP {
            core: 0.8 * t_out,
            edge: 0.97 * t_out,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp,
        gq,
    }
}

/// g = prod_k sqrt(1 + (c0 - e_k) q), where q = t^2 (degree 5) or tau
/// (degree 6); converges while |q| < 1 / max |c0 - e_k|.
fn inf_g(curve: &HyperCurve, q: Complex64) -> Complex64 {
    let mut half_log = Complex64::new(0.0, 0.0);
    for &r in curve.roots.iter() {
        half_log += 0.5 * ln_1p((curve.c0 - r) * q);
    }
    half_log.exp()
}

fn build_inf_even(curve: &HyperCurve, res: &HyperResolution, sheet: i8) -> Chart {
    let t_out = 1.0 / curve.r_inf;
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    let panels = [0.0, 0.55 * t_out, 0.85 * t_out, t_out];
    for (i, &n) in res.inf_nr.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, panels[i], panels[i + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let wth = 2.0 * std::f64::consts::PI / res.inf_nth as f64;
    let thetas: Vec<f64> = (0..res.inf_nth).map(|k| k as f64 * wth).collect();
    let grid = Grid::Polar {
        center: Complex64::new(0.0, 0.0),
        radii,
        wr,
        thetas,
        wth,
        panel_edges: panels.to_vec(),
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let sg = sheet as f64;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &t in nodes.iter() {
        let xx = curve.c0 + 1.0 / t;
        let g = inf_g(curve, t);
        let t3 = t * t * t;
        x.push(xx);
        y.push(sg * g / t3);
        xp.push(-1.0 / (t * t));
        gq.push(-sg * t / g);
    }
    Chart {
        label: format!("infinity{}", if sheet > 0 { "+" } else { "-" }),
        map: ChartMap::HInfEven { sheet },
        grid,
        dom: Domain::DiskD { r_out: t_out },
        prof: ProfSpec::DiskP {
            core: 0.8 * t_out,
            edge: 0.97 * t_out,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp,
        gq,
    }
}

fn build_sleeve(curve: &HyperCurve, res: &HyperResolution, sheet: i8) -> Chart {
    let rin = curve.sleeve_rin;
    let rout = curve.sleeve_rout;
    let dir = curve.sleeve_dir;
    let half = curve.sleeve_half;
    let r1 = 1.25 * rin;
    let r2 = 0.72 * rout;
    let mut radii = Vec::new();
    let mut wr = Vec::new();
    let rpanels = [rin, r1, r2, rout];
    for (i, &n) in res.sleeve_nr.iter().enumerate() {
        let (r, w) = gauss_legendre_on(n, rpanels[i], rpanels[i + 1]);
        radii.extend_from_slice(&r);
        wr.extend_from_slice(&w);
    }
    let mut thetas = Vec::new();
    let mut wth = Vec::new();
    let tpanels = [
        dir - half,
        dir - 0.7 * half,
        dir + 0.7 * half,
        dir + half,
    ];
    for (i, &n) in res.sleeve_nth.iter().enumerate() {
        let (t, w) = gauss_legendre_on(n, tpanels[i], tpanels[i + 1]);
        thetas.extend_from_slice(&t);
        wth.extend_from_slice(&w);
    }
    let grid = Grid::PolarArc {
        radii: radii.clone(),
        wr,
        thetas: thetas.clone(),
        wth,
    };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let sg = sheet as f64;
    let e = curve.single.unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &u in nodes.iter() {
        let yy = sleeve_y(curve, sg, u);
        x.push(e + u * u);
        y.push(yy);
        xp.push(2.0 * u);
        gq.push(2.0 * u / yy);
    }
    Chart {
        label: format!("sleeve{}", if sheet > 0 { "+" } else { "-" }),
        map: ChartMap::HSleeve { sheet },
        grid,
        dom: Domain::Sector {
            r_in: rin,
            r_out: rout,
            dir,
            half,
        },
        prof: ProfSpec::SectorP {
            r: (rin, r1, 0.72 * rout, 0.94 * rout),
            a_core: 0.7 * half,
            a_edge: 0.95 * half,
            dir,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp,
        gq,
    }
}

/// y on the sleeve sheet `sg` at sector coordinate `u` (x = e + u^2):
/// u times one square-root factor per obstacle +-sqrt(e_k - e), each cut
/// along its own outward radial ray. The sector keeps an angular margin
/// from every obstacle, so no cut enters it and the product is a single
/// continuous branch of sqrt(p); the overall sign is pinned to the
/// root-disk branch at the sector's inner edge.
fn sleeve_y(curve: &HyperCurve, sg: f64, u: Complex64) -> Complex64 {
    let e = curve.single.unwrap();
    let anchor = Complex64::from_polar(curve.sleeve_rin, curve.sleeve_dir);
    let mut prod = u;
    let mut at_anchor = anchor;
    for &r in curve.roots.iter() {
        if (r - e).norm() == 0.0 {
            continue;
        }
        let b = (r - e).sqrt();
        let beta = b.arg();
        let pi = std::f64::consts::PI;
        prod *= rot_sqrt(u - b, beta) * rot_sqrt(u + b, beta + pi);
        at_anchor *= rot_sqrt(anchor - b, beta) * rot_sqrt(anchor + b, beta + pi);
    }
    let want = sg * anchor * single_disk_g(curve, anchor);
    if (at_anchor - want).norm() <= (at_anchor + want).norm() {
        prod
    } else {
        -prod
    }
}

/// Gauss-Legendre nodes over [lo, hi] split at the given interior points,
/// so integrands with structure at known lines (other charts' profile
/// ramps) get panel boundaries there. Panel node counts share `n_total`
/// proportionally with a floor of five.
fn paneled_axis(lo: f64, hi: f64, splits: &[f64], n_total: usize) -> (Vec<f64>, Vec<f64>) {
    let span = hi - lo;
    let mut edges = vec![lo];
    let mut ss: Vec<f64> = splits
        .iter()
        .copied()
        .filter(|s| *s > lo + 0.01 * span && *s < hi - 0.01 * span)
        .collect();
    ss.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for s in ss {
        if s - edges.last().unwrap() > 0.015 * span {
            edges.push(s);
        }
    }
    edges.push(hi);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for i in 0..edges.len() - 1 {
        let w = edges[i + 1] - edges[i];
        let n = ((n_total as f64) * w / span).round().max(5.0) as usize;
        let (x, wq) = gauss_legendre_on(n, edges[i], edges[i + 1]);
        xs.extend_from_slice(&x);
        ws.extend_from_slice(&wq);
    }
    (xs, ws)
}

#[allow(clippy::too_many_arguments)]
fn build_rect(
    curve: &HyperCurve,
    tag: &str,
    sheet: i8,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    x_splits: &[f64],
    y_splits: &[f64],
    nx: usize,
    ny: usize,
    x_inset_frac: f64,
    h_min: f64,
) -> Chart {
    let (xs, wx) = paneled_axis(x0, x1, x_splits, nx);
    let (ys, wy) = paneled_axis(y0, y1, y_splits, ny);
    let grid = Grid::Cart { xs, wx, ys, wy };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let sg = sheet as f64;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &z in nodes.iter() {
        let yy = sg * curve.y_branch(z);
        x.push(z);
        y.push(yy);
        gq.push(1.0 / yy);
    }
    let w = x1 - x0;
    // Vertical profile: plateau past 1.15 h_min from the axis side, and to
    // 80 percent of the far edge.
    let ytrap = if y0 > 0.0 {
        (y0, 1.15 * h_min, 0.8 * y1, y1)
    } else {
        (y0, 0.8 * y0, -1.15 * h_min, y1)
    };
    Chart {
        label: format!("{tag}{}", if sheet > 0 { "a" } else { "b" }),
        map: ChartMap::HRect { sheet },
        grid,
        dom: Domain::Box { x0, x1, y0, y1 },
        prof: ProfSpec::BoxP {
            x: (x0, x0 + x_inset_frac * w, x1 - x_inset_frac * w, x1),
            y: ytrap,
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp: vec![Complex64::new(1.0, 0.0); n],
        gq,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_strip(
    curve: &HyperCurve,
    tag: &str,
    sheet: i8,
    x0: f64,
    x1: f64,
    x_core0: f64,
    x_core1: f64,
    h: f64,
    nx: usize,
    ny: usize,
) -> Chart {
    let (xs, wx) = paneled_axis(x0, x1, &[x_core0, x_core1], nx);
    let (ys, wy) = paneled_axis(-h, h, &[-0.45 * h, 0.45 * h], ny);
    let grid = Grid::Cart { xs, wx, ys, wy };
    let (nodes, qw) = grid_nodes(&grid);
    let n = nodes.len();
    let sg = sheet as f64;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut gq = Vec::with_capacity(n);
    for &z in nodes.iter() {
        let yy = sg * curve.y_branch(z);
        x.push(z);
        y.push(yy);
        gq.push(1.0 / yy);
    }
    Chart {
        label: format!("{tag}{}", if sheet > 0 { "a" } else { "b" }),
        map: ChartMap::HRect { sheet },
        grid,
        dom: Domain::Box {
            x0,
            x1,
            y0: -h,
            y1: h,
        },
        prof: ProfSpec::BoxP {
            x: (x0, x_core0, x_core1, x1),
            y: (-h, -0.45 * h, 0.45 * h, h),
        },
        nodes,
        qw,
        partition: vec![1.0; n],
        x,
        y,
        xp: vec![Complex64::new(1.0, 0.0); n],
        gq,
    }
}

/// Locate the curve point (x, y) in `chart`, matching both the base
/// coordinate and the sheet.
pub(super) fn locate(
    curve: &HyperCurve,
    chart: &Chart,
    x: Complex64,
    y: Complex64,
) -> Option<Complex64> {
    let y_tol = 1e-6 * (1.0 + y.norm());
    match chart.map {
        ChartMap::HPair { pair } => {
            let (c, d) = curve.pairs[pair];
            let w = (x - c) / d;
            let s = (w * w - Complex64::new(1.0, 0.0)).sqrt();
            for &cand in &[w + s, w - s] {
                if cand.norm() < 1e-14 || !chart.dom.contains(cand) {
                    continue;
                }
                let own = d * (cand - 1.0 / cand) / 2.0;
                let mut rest = Complex64::new(1.0, 0.0);
                for q in 0..curve.pairs.len() {
                    if q != pair {
                        rest *= curve.pair_factor(q, x);
                    }
                }
                if curve.single.is_some() {
                    rest *= curve.single_factor(x);
                }
                if (own * rest - y).norm() < y_tol {
                    return Some(cand);
                }
            }
            None
        }
        ChartMap::HSingle => {
            let e = curve.single.unwrap();
            let s = (x - e).sqrt();
            for &cand in &[s, -s] {
                if !chart.dom.contains(cand) {
                    continue;
                }
                if (cand * single_disk_g(curve, cand) - y).norm() < y_tol {
                    return Some(cand);
                }
            }
            None
        }
        ChartMap::HInfOdd => {
            let dx = x - curve.c0;
            if dx.norm() < curve.r_inf {
                return None;
            }
            let t = (1.0 / dx).sqrt();
            for &cand in &[t, -t] {
                if !chart.dom.contains(cand) {
                    continue;
                }
                let t2 = cand * cand;
                let t5 = t2 * t2 * cand;
                if (inf_g(curve, t2) / t5 - y).norm() < y_tol {
                    return Some(cand);
                }
            }
            None
        }
        ChartMap::HInfEven { sheet } => {
            let dx = x - curve.c0;
            if dx.norm() < curve.r_inf {
                return None;
            }
            let t = 1.0 / dx;
            if !chart.dom.contains(t) {
                return None;
            }
            let t3 = t * t * t;
            let yv = sheet as f64 * inf_g(curve, t) / t3;
            if (yv - y).norm() < y_tol {
                Some(t)
            } else {
                None
            }
        }
        ChartMap::HSleeve { sheet } => {
            let e = curve.single.unwrap();
            let s = (x - e).sqrt();
            for &cand in &[s, -s] {
                if !chart.dom.contains(cand) {
                    continue;
                }
                if (sleeve_y(curve, sheet as f64, cand) - y).norm() < y_tol {
                    return Some(cand);
                }
            }
            None
        }
        ChartMap::HRect { sheet } => {
            if !chart.dom.contains(x) {
                return None;
            }
            let yv = sheet as f64 * curve.y_branch(x);
            if (yv - y).norm() < y_tol {
                Some(x)
            } else {
                None
            }
        }
        _ => unreachable!("non-curve chart in a hyperelliptic atlas"),
    }
}

/// Pointwise normalization: each node's partition value becomes its own
/// profile divided by the sum of the profiles of every chart containing the
/// node's point, so the partition sums to one exactly at every node.
fn normalize_partitions(atlas: &mut ChartAtlas) {
    let mut parts: Vec<Vec<f64>> = atlas.charts.iter().map(|c| vec![0.0; c.n_nodes()]).collect();
    for c in 0..atlas.charts.len() {
        for i in 0..atlas.charts[c].n_nodes() {
            let g = atlas.global_index(c, i);
            let own = atlas.charts[c].prof.value(atlas.charts[c].nodes[i]);
            let mut total = own;
            for mem in atlas.memberships[g].iter() {
                total += atlas.charts[mem.chart].prof.value(mem.zeta);
            }
            // A tiny total is fine at a sole-cover node riding out its own
            // profile tail; this only guards division blowup.
            assert!(
                total > 1e-6,
                "partition underflow at chart {} node {} (total {total:.3e})",
                atlas.charts[c].label,
                i
            );
            parts[c][i] = own / total;
        }
    }
    for (c, p) in parts.into_iter().enumerate() {
        atlas.charts[c].partition = p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::canonical_section_basis;
    use crate::util::assert_close;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_a_roots() -> Vec<Complex64> {
        (0..5).map(|k| Complex64::new(k as f64, 0.0)).collect()
    }

    /// Integral over both sheets of a function of x alone equals twice the
    /// plane integral; a centered Gaussian gives exactly 4 pi.
    #[test]
    fn gaussian_total_mass() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        let a = Complex64::new(1.3, 0.4);
        let mut density = vec![0.0; atlas.n_nodes];
        for (c, chart) in atlas.charts.iter().enumerate() {
            for i in 0..chart.n_nodes() {
                let dx2 = (chart.x[i] - a).norm_sqr();
                density[atlas.global_index(c, i)] = (-dx2).exp() * chart.xp[i].norm_sqr();
            }
        }
        let v = atlas.integrate(&density).unwrap();
        let want = 4.0 * std::f64::consts::PI;
        // The limit is partition-ramp arcs crossing chart grids; observed
        // defect at this resolution is ~1e-3 (see the ignored probes).
        assert!(
            (v - want).abs() < 5e-3 * want,
            "gaussian mass {v} vs {want}, rel {:.2e}",
            (v - want).abs() / want
        );
    }

    /// A sheet-odd integrand cancels between the two sheets.
    #[test]
    fn sheet_odd_cancels() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        let a = Complex64::new(2.1, -0.2);
        let mut density = vec![0.0; atlas.n_nodes];
        let mut magnitude = vec![0.0; atlas.n_nodes];
        for (c, chart) in atlas.charts.iter().enumerate() {
            for i in 0..chart.n_nodes() {
                let dx2 = (chart.x[i] - a).norm_sqr();
                let f = (-0.5 * dx2).exp() * chart.xp[i].norm_sqr();
                let odd = chart.y[i].re / (1.0 + chart.x[i].norm_sqr().powi(2));
                density[atlas.global_index(c, i)] = f * odd;
                magnitude[atlas.global_index(c, i)] = f * odd.abs();
            }
        }
        let v = atlas.integrate(&density).unwrap();
        let m = atlas.integrate(&magnitude).unwrap();
        // Cancellation is limited by quadrature, not bookkeeping: the pair
        // charts' radial nodes are not symmetric under the deck map.
        assert!(v.abs() < 1e-3 * m, "odd part {v} vs magnitude {m}");
    }

    /// Monte-Carlo cross-check of a sheet-asymmetric integrand.
    #[test]
    fn monte_carlo_cross_check() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        let a = Complex64::new(2.0, 0.3);
        let f = |x: Complex64, y: Complex64| {
            ((-(x - a).norm_sqr()).exp()) * (1.0 + 0.3 * (y / (1.0 + x * x * x)).re)
        };
        let mut density = vec![0.0; atlas.n_nodes];
        for (c, chart) in atlas.charts.iter().enumerate() {
            for i in 0..chart.n_nodes() {
                density[atlas.global_index(c, i)] =
                    f(chart.x[i], chart.y[i]) * chart.xp[i].norm_sqr();
            }
        }
        let v = atlas.integrate(&density).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let curve = model_a_curve();
        let half = 4.2;
        let n = 1_500_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = a + Complex64::new(
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            );
            let y = curve.y_branch(x);
            acc += f(x, y) + f(x, -y);
        }
        // Factor 2 converts Lebesgue area to the measure convention.
        let mc = acc / n as f64 * (2.0 * half) * (2.0 * half) * 2.0;
        assert!(
            (v - mc).abs() < 8e-3 * v.abs().max(1.0),
            "atlas {v} vs monte-carlo {mc}"
        );
    }

    /// Prints the gaussian-mass defect at two resolutions; a defect that
    /// does not shrink under refinement points at the partition bookkeeping
    /// rather than the quadrature.
    #[test]
    #[ignore]
    fn mass_defect_probe() {
        let sextic: Vec<Complex64> = [0.0, 1.0, 2.2, 3.2, 4.4, 5.4]
            .iter()
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        for (tag, roots) in [("quintic", model_a_roots()), ("sextic", sextic)] {
            for (rtag, res) in [
                ("default", HyperResolution::default()),
                ("doubled", HyperResolution::default().doubled()),
            ] {
                let atlas = build_hyper_atlas(&roots, &res).unwrap();
                let a = Complex64::new(1.3, 0.4);
                let mut density = vec![0.0; atlas.n_nodes];
                for (c, chart) in atlas.charts.iter().enumerate() {
                    for i in 0..chart.n_nodes() {
                        let dx2 = (chart.x[i] - a).norm_sqr();
                        density[atlas.global_index(c, i)] =
                            (-dx2).exp() * chart.xp[i].norm_sqr();
                    }
                }
                let v = atlas.integrate(&density).unwrap();
                let want = 4.0 * std::f64::consts::PI;
                println!(
                    "{tag} {rtag}: {v:.10} want {want:.10} rel {:+.3e}",
                    (v - want) / want
                );
            }
        }
    }

    /// Per-chart gaussian-mass contributions at two resolutions; charts
    /// whose share moves under refinement are the under-resolved ones.
    #[test]
    #[ignore]
    fn mass_chart_probe() {
        let a = Complex64::new(1.3, 0.4);
        let roots: Vec<Complex64> = match std::env::var("PROBE_MODEL").as_deref() {
            Ok("sextic") => [0.0, 1.0, 2.2, 3.2, 4.4, 5.4]
                .iter()
                .map(|&r| Complex64::new(r, 0.0))
                .collect(),
            _ => model_a_roots(),
        };
        let mut shares: Vec<(String, f64, f64)> = Vec::new();
        for (pass, res) in [
            (0usize, HyperResolution::default()),
            (1usize, HyperResolution::default().doubled()),
        ] {
            let atlas = build_hyper_atlas(&roots, &res).unwrap();
            for (c, chart) in atlas.charts.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..chart.n_nodes() {
                    let dx2 = (chart.x[i] - a).norm_sqr();
                    acc += chart.partition[i]
                        * chart.qw[i]
                        * (-dx2).exp()
                        * chart.xp[i].norm_sqr();
                }
                if pass == 0 {
                    shares.push((chart.label.clone(), acc, 0.0));
                } else {
                    shares[c].2 = acc;
                }
            }
        }
        let mut dsum = 0.0;
        for (label, coarse, fine) in shares.iter() {
            println!(
                "{label:12} coarse {coarse:+.8} fine {fine:+.8} delta {:+.3e}",
                fine - coarse
            );
            dsum += fine - coarse;
        }
        println!("total delta {dsum:+.4e}");
    }

    /// Sum of normalized partitions over random curve points; any point
    /// where the charts disagree about who covers it shows up as a sum
    /// away from one.
    #[test]
    #[ignore]
    fn partition_sum_probe() {
        let sextic: Vec<Complex64> = [0.0, 1.0, 2.2, 3.2, 4.4, 5.4]
            .iter()
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        for (tag, roots) in [("quintic", model_a_roots()), ("sextic", sextic)] {
            let atlas = build_hyper_atlas(&roots, &HyperResolution::default()).unwrap();
            let curve = match &atlas.model {
                Model::Hyperelliptic(c) => c.clone(),
                _ => unreachable!(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut bad = 0usize;
            let mut worst = 0.0f64;
            let mut shown = 0usize;
            for _ in 0..40000 {
                let x = curve.c0
                    + Complex64::new(
                        rng.gen_range(-1.4..1.4) * curve.r_inf,
                        rng.gen_range(-1.4..1.4) * curve.r_inf,
                    );
                let y = curve.y_branch(x) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                // covering set and profiles via locate
                let mut cover: Vec<(usize, f64)> = Vec::new();
                for c in 0..atlas.charts.len() {
                    if let Some(z) = atlas.locate(c, x, y) {
                        cover.push((c, atlas.charts[c].prof.value(z)));
                    }
                }
                let total: f64 = cover.iter().map(|(_, p)| p).sum();
                if total < 1e-6 {
                    continue;
                }
                // The real check is whether locate FROM each chart's nodes
                // would see the same cover set, so redo it through the
                // membership path: treat each covering chart's zeta as a
                // node and re-resolve.
                let mut worst_here = 0.0f64;
                for &(c, pc) in cover.iter() {
                    let zc = atlas.locate(c, x, y).unwrap();
                    let xc = chart_point(&curve, &atlas.charts[c], zc);
                    let yc = chart_y(&curve, &atlas.charts[c], zc);
                    let mut denom = atlas.charts[c].prof.value(zc);
                    for b in 0..atlas.charts.len() {
                        if b == c {
                            continue;
                        }
                        if let Some(zb) = atlas.locate(b, xc, yc) {
                            denom += atlas.charts[b].prof.value(zb);
                        }
                    }
                    worst_here = worst_here.max((pc / denom - pc / total).abs());
                }
                if worst_here > 1e-6 {
                    bad += 1;
                    if worst_here > worst {
                        worst = worst_here;
                    }
                    if shown < 6 {
                        let names: Vec<&str> = cover
                            .iter()
                            .map(|&(c, _)| atlas.charts[c].label.as_str())
                            .collect();
                        println!(
                            "{tag}: x {x:.4} err {worst_here:.3e} cover {names:?}"
                        );
                        shown += 1;
                    }
                }
            }
            println!("{tag}: {bad} inconsistent points, worst {worst:.3e}");
        }
    }

    fn model_a_curve() -> HyperCurve {
        match build_hyper_atlas(&model_a_roots(), &HyperResolution::default())
            .unwrap()
            .model
        {
            Model::Hyperelliptic(c) => c,
            _ => unreachable!(),
        }
    }

    /// Every random curve point is covered with healthy total profile.
    #[test]
    fn random_coverage() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        let curve = model_a_curve();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20000 {
            let x = curve.c0
                + Complex64::new(
                    rng.gen_range(-1.1..1.1) * curve.r_inf,
                    rng.gen_range(-1.1..1.1) * curve.r_inf,
                );
            let y = curve.y_branch(x) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut total = 0.0;
            for c in 0..atlas.charts.len() {
                if let Some(z) = atlas.locate(c, x, y) {
                    let xx = chart_point(&curve, &atlas.charts[c], z);
                    assert!(
                        (xx - x).norm() < 1e-8 * (1.0 + x.norm()),
                        "round trip failed in {}",
                        atlas.charts[c].label
                    );
                    total += atlas.charts[c].prof.value(z);
                }
            }
            assert!(
                total > 0.01,
                "thin coverage at x = {x}, sheet y = {y}: total {total:.3e}"
            );
        }
    }

    fn chart_point(curve: &HyperCurve, chart: &Chart, z: Complex64) -> Complex64 {
        match chart.map {
            ChartMap::HPair { pair } => {
                let (c, d) = curve.pairs[pair];
                c + d * (z + 1.0 / z) / 2.0
            }
            ChartMap::HSingle | ChartMap::HSleeve { .. } => curve.single.unwrap() + z * z,
            ChartMap::HInfOdd => curve.c0 + 1.0 / (z * z),
            ChartMap::HInfEven { .. } => curve.c0 + 1.0 / z,
            ChartMap::HRect { .. } => z,
            _ => unreachable!(),
        }
    }

    fn chart_y(curve: &HyperCurve, chart: &Chart, z: Complex64) -> Complex64 {
        match chart.map {
            ChartMap::HPair { pair } => {
                let x = chart_point(curve, chart, z);
                let (_, d) = curve.pairs[pair];
                let own = d * (z - 1.0 / z) / 2.0;
                let mut rest = Complex64::new(1.0, 0.0);
                for q in 0..curve.pairs.len() {
                    if q != pair {
                        rest *= curve.pair_factor(q, x);
                    }
                }
                if curve.single.is_some() {
                    rest *= curve.single_factor(x);
                }
                own * rest
            }
            ChartMap::HSingle => z * single_disk_g(curve, z),
            ChartMap::HSleeve { sheet } => sleeve_y(curve, sheet as f64, z),
            ChartMap::HInfOdd => {
                let t2 = z * z;
                inf_g(curve, t2) / (t2 * t2 * z)
            }
            ChartMap::HInfEven { sheet } => {
                sheet as f64 * inf_g(curve, z) / (z * z * z)
            }
            ChartMap::HRect { sheet } => sheet as f64 * curve.y_branch(z),
            _ => unreachable!(),
        }
    }

    /// K-frame transition: for a section f (dzeta)^m the coefficient obeys
    /// ln|f_B|^2 = ln|f_A|^2 + m dlog_k at shared points.
    #[test]
    fn pluricanonical_frame_transition() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        let m = 2i32;
        let mut checked = 0usize;
        for c in 0..atlas.charts.len() {
            let chart = &atlas.charts[c];
            for i in (0..chart.n_nodes()).step_by(7) {
                let g = atlas.global_index(c, i);
                let x = chart.x[i];
                let y = chart.y[i];
                if y.norm() < 1e-8 {
                    continue;
                }
                let f_a = x * (chart.xp[i] / y).powi(m);
                for mem in atlas.memberships[g].iter() {
                    let xp_b =
                        super::super::chart_xp(&atlas.model, &atlas.charts[mem.chart], mem.zeta);
                    let f_b = x * (xp_b / y).powi(m);
                    let lhs = 2.0 * f_b.norm().ln();
                    let rhs = 2.0 * f_a.norm().ln() + m as f64 * mem.dlog_k;
                    assert_close(lhs, rhs, 1e-8, &format!("transition {}", chart.label));
                    checked += 1;
                }
            }
        }
        assert!(checked > 500, "only {checked} transition checks ran");
    }

    #[test]
    fn section_space_dimensions() {
        let atlas = build_hyper_atlas(&model_a_roots(), &HyperResolution::default()).unwrap();
        for m in 1..=6 {
            let b = canonical_section_basis(&atlas, m, 0).unwrap();
            assert_eq!(b.dim(), crate::geometry::genus2_h0_dim(m), "m = {m}");
        }
    }

    #[test]
    fn near_collision_still_builds() {
        let mut roots = model_a_roots();
        roots[4] = Complex64::new(3.001, 0.0);
        let atlas = build_hyper_atlas(&roots, &HyperResolution::default()).unwrap();
        let a = Complex64::new(1.0, 0.0);
        let mut density = vec![0.0; atlas.n_nodes];
        for (c, chart) in atlas.charts.iter().enumerate() {
            for i in 0..chart.n_nodes() {
                let dx2 = (chart.x[i] - a).norm_sqr();
                density[atlas.global_index(c, i)] = (-dx2).exp() * chart.xp[i].norm_sqr();
            }
        }
        let v = atlas.integrate(&density).unwrap();
        let want = 4.0 * std::f64::consts::PI;
        // Guards that a nearly colliding pair still yields a sane cover;
        // accuracy degrades there (the pair chart shrinks with the gap), so
        // the bound is loose on purpose.
        assert!(
            (v - want).abs() < 2e-2 * want,
            "near-degenerate gaussian mass {v} vs {want}"
        );
    }

    #[test]
    fn degree_six_builds() {
        let roots: Vec<Complex64> = [0.0, 1.0, 2.2, 3.2, 4.4, 5.4]
            .iter()
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        let atlas = build_hyper_atlas(&roots, &HyperResolution::default()).unwrap();
        let a = Complex64::new(2.7, 0.2);
        let mut density = vec![0.0; atlas.n_nodes];
        for (c, chart) in atlas.charts.iter().enumerate() {
            for i in 0..chart.n_nodes() {
                let dx2 = (chart.x[i] - a).norm_sqr();
                density[atlas.global_index(c, i)] = (-dx2).exp() * chart.xp[i].norm_sqr();
            }
        }
        let v = atlas.integrate(&density).unwrap();
        let want = 4.0 * std::f64::consts::PI;
        assert!(
            (v - want).abs() < 8e-3 * want,
            "sextic gaussian mass {v} vs {want}"
        );
    }

    #[test]
    fn repeated_root_rejected() {
        let roots: Vec<Complex64> = [0.0, 1e-8, 2.0, 3.0, 4.0]
            .iter()
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        match build_hyper_atlas(&roots, &HyperResolution::default()) {
            Err(GeomError::NonSquarefree { .. }) => {}
            other => panic!("expected squarefree rejection, got {other:?}"),
        }
    }
}
