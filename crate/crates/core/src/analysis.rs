//! Multiscale measurements over the graph-shifted boxes
//! `B_r = {x' in (-r, r)^2, wall(x') < x3 < wall(x') + r}`.
//!
//! Box integrals are column sums: every lattice column inside the (snapped)
//! horizontal square contributes its cell area times a vertical Gauss rule
//! whose panels break at every height where one of the integrands has a kink.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cell::CorrectorSolution;
use crate::channel::ChannelSolution;
use crate::error::{Error, Result};
use crate::halfspace::HalfspaceExtension;
use crate::linalg::solve_dense;
use crate::scalar::{lit, Real};

/// Column layout and wall heights of a periodic field.
#[derive(Debug, Clone)]
pub struct WallLattice<T: Real> {
    pub spacing: [T; 2],
    pub n: [usize; 2],
    /// Independent of `x2`; the second direction is integrated exactly.
    pub groove: bool,
    /// Wall height per lattice column, `i1` fastest.
    pub walls: Vec<T>,
}

/// A vector field that can be integrated over bumpy boxes.
pub trait BoxField<T: Real> {
    fn value(&self, x: [T; 3]) -> Result<[T; 3]>;

    fn gradient(&self, x: [T; 3]) -> Result<[[T; 3]; 3]>;

    /// Heights in `(lo, hi)` above `x` where the field is not smooth.
    fn breakpoints(&self, _x: [T; 2], _lo: T, _hi: T, _out: &mut Vec<T>) -> Result<()> {
        Ok(())
    }

    fn lattice(&self) -> Option<WallLattice<T>> {
        None
    }
}

fn gauss4<T: Real>() -> ([T; 4], [T; 4]) {
    let a = 0.339_981_043_584_856_3;
    let b = 0.861_136_311_594_052_6;
    let wa = 0.652_145_154_862_546_1;
    let wb = 0.347_854_845_137_453_9;
    ([T::lit(-b), T::lit(-a), T::lit(a), T::lit(b)], [T::lit(wb), T::lit(wa), T::lit(wa), T::lit(wb)])
}

#[derive(Debug, Clone)]
struct QuadColumn<T: Real> {
    x: [T; 2],
    /// Horizontal area times multiplicity.
    weight: T,
    wall: T,
    points: Vec<(T, T)>,
}

/// Quadrature over `B_r` built on the lattice of a primary field.
#[derive(Debug, Clone)]
pub struct BoxQuadrature<T: Real> {
    pub r: T,
    pub volume: T,
    /// Largest distance between the requested and the snapped half-width.
    pub snap: T,
    /// Horizontal lattice spacing (largest of the two directions).
    pub cell: T,
    columns: Vec<QuadColumn<T>>,
}

impl<T: Real> BoxQuadrature<T> {
    pub fn new(primary: &dyn BoxField<T>, others: &[&dyn BoxField<T>], r: T) -> Result<Self> {
        let lat = primary
            .lattice()
            .ok_or_else(|| Error::InvalidArgument("box quadrature needs a field with a wall lattice".into()))?;
        if !(r > T::zero()) {
            return Err(Error::InvalidArgument(format!("box half-width must be positive, got {r}")));
        }
        let half = lit::<T>(0.5);
        let snap_dir = |h: T| -> (isize, T) {
            let m = (r / h - half).round().max(T::zero());
            let rs = (m + half) * h;
            (m.to_isize().unwrap_or(0), rs)
        };
        let (m1, rs1) = snap_dir(lat.spacing[0]);
        let (m2, rs2, w2) = if lat.groove {
            (0, r, lit::<T>(2.0) * r)
        } else {
            let (m, rs) = snap_dir(lat.spacing[1]);
            (m, rs, lat.spacing[1])
        };
        let mut mult: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for i2 in -m2..=m2 {
            for i1 in -m1..=m1 {
                let c1 = i1.rem_euclid(lat.n[0] as isize) as usize;
                let c2 = i2.rem_euclid(lat.n[1] as isize) as usize;
                *mult.entry((c2, c1)).or_insert(0) += 1;
            }
        }
        let area = lat.spacing[0] * w2;
        let (nodes, weights) = gauss4::<T>();
        let mut columns = Vec::with_capacity(mult.len());
        let mut bps = Vec::new();
        for (&(c2, c1), &m) in &mult {
            let x = [
                lat.spacing[0] * T::from_usize_lossy(c1),
                if lat.groove { T::zero() } else { lat.spacing[1] * T::from_usize_lossy(c2) },
            ];
            let wall = lat.walls[c2 * lat.n[0] + c1];
            let (lo, hi) = (wall, wall + r);
            bps.clear();
            bps.push(lo);
            bps.push(hi);
            primary.breakpoints(x, lo, hi, &mut bps)?;
            for f in others {
                f.breakpoints(x, lo, hi, &mut bps)?;
            }
            bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let tol = r * lit(1e-12);
            bps.dedup_by(|a, b| (*a - *b).abs() <= tol);
            let mut points = Vec::with_capacity(4 * bps.len());
            for win in bps.windows(2) {
                let (a, b) = (win[0], win[1]);
                if !(a >= lo && b <= hi && b > a) {
                    continue;
                }
                let (mid, hw) = (half * (a + b), half * (b - a));
                for (t, w) in nodes.iter().zip(&weights) {
                    points.push((mid + hw * *t, hw * *w));
                }
            }
            columns.push(QuadColumn { x, weight: area * T::from_usize_lossy(m), wall, points });
        }
        let volume = lit::<T>(2.0) * rs1 * lit::<T>(2.0) * rs2 * r;
        let snap = (rs1 - r).abs().max((rs2 - r).abs());
        let cell = if lat.groove { lat.spacing[0] } else { lat.spacing[0].max(lat.spacing[1]) };
        Ok(Self { r, volume, snap, cell, columns })
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    /// `int_B f` for a pointwise integrand.
    pub fn integrate(&self, mut f: impl FnMut([T; 3]) -> Result<T>) -> Result<T> {
        let mut total = T::zero();
        for col in &self.columns {
            let mut acc = T::zero();
            for &(z, w) in &col.points {
                acc = acc + w * f([col.x[0], col.x[1], z])?;
            }
            total = total + col.weight * acc;
        }
        Ok(total)
    }

    /// Values of `field` at every quadrature point.
    pub fn sample(&self, field: &dyn BoxField<T>) -> Result<Vec<[T; 3]>> {
        let mut out = Vec::new();
        for col in &self.columns {
            for &(z, _) in &col.points {
                out.push(field.value([col.x[0], col.x[1], z])?);
            }
        }
        Ok(out)
    }

    /// Volume weights aligned with [`sample`](Self::sample).
    pub fn weights(&self) -> Vec<T> {
        self.columns.iter().flat_map(|c| c.points.iter().map(move |&(_, w)| w * c.weight)).collect()
    }

    /// `sum_cols area * (f(top) - f(wall))`: exact box integral of `d f / d x3`.
    pub fn vertical_flux(&self, field: &dyn BoxField<T>) -> Result<[T; 3]> {
        let mut s = [T::zero(); 3];
        for col in &self.columns {
            let top = field.value([col.x[0], col.x[1], col.wall + self.r])?;
            let bot = field.value([col.x[0], col.x[1], col.wall])?;
            for c in 0..3 {
                s[c] = s[c] + col.weight * (top[c] - bot[c]);
            }
        }
        Ok(s)
    }
}

fn inner<T: Real>(w: &[T], a: &[[T; 3]], b: &[[T; 3]]) -> T {
    let mut s = T::zero();
    for i in 0..w.len() {
        s = s + w[i] * (a[i][0] * b[i][0] + a[i][1] * b[i][1] + a[i][2] * b[i][2]);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxAverage {
    pub value: f64,
    pub volume: f64,
    pub snap: f64,
}

/// `(avg_B |u|^2)^{1/2}`.
pub fn box_average_l2<T: Real>(field: &dyn BoxField<T>, r: T) -> Result<BoxAverage> {
    let q = BoxQuadrature::new(field, &[], r)?;
    let s = q.integrate(|x| {
        let v = field.value(x)?;
        Ok(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    })?;
    Ok(BoxAverage {
        value: (s / q.volume).sqrt().to_f64_lossy(),
        volume: q.volume.to_f64_lossy(),
        snap: q.snap.to_f64_lossy(),
    })
}

/// Least-squares coefficients of `u` against `span{phi_1, phi_2}` and the
/// box-averaged residual norm.
fn project<T: Real>(w: &[T], u: &[[T; 3]], basis: [&[[T; 3]]; 2], volume: T) -> Result<([T; 2], T)> {
    let g = [
        [inner(w, basis[0], basis[0]), inner(w, basis[0], basis[1])],
        [inner(w, basis[1], basis[0]), inner(w, basis[1], basis[1])],
    ];
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let scale = g[0][0] * g[1][1];
    if !(det > scale * lit(1e-12)) || scale == T::zero() {
        return Err(Error::SingularFit { det: det.to_f64_lossy(), scale: scale.to_f64_lossy() });
    }
    let rhs = vec![inner(w, u, basis[0]), inner(w, u, basis[1])];
    let c = solve_dense(vec![g[0].to_vec(), g[1].to_vec()], rhs)
        .ok_or(Error::SingularFit { det: det.to_f64_lossy(), scale: scale.to_f64_lossy() })?;
    let c = [c[0], c[1]];
    Ok((c, residual_with(w, u, basis, c, volume)))
}

fn residual_with<T: Real>(w: &[T], u: &[[T; 3]], basis: [&[[T; 3]]; 2], c: [T; 2], volume: T) -> T {
    let mut s = T::zero();
    for i in 0..w.len() {
        let mut e = T::zero();
        for k in 0..3 {
            let d = u[i][k] - c[0] * basis[0][i][k] - c[1] * basis[1][i][k];
            e = e + d * d;
        }
        s = s + w[i] * e;
    }
    (s.max(T::zero()) / volume).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlipFit {
    pub c_grad: [f64; 2],
    pub c_lsq: [f64; 2],
}

/// `c_grad = avg_B d3 u'` and `c_lsq` against `span{x3 e_j + eps v^(j)(x/eps)}`.
pub fn fit_slip_coefficients<T: Real>(
    field: &dyn BoxField<T>,
    eps: T,
    r: T,
    correctors: [&CorrectorSolution<T>; 2],
) -> Result<SlipFit> {
    let b1 = CorrectorBasis::new(correctors[0], eps);
    let b2 = CorrectorBasis::new(correctors[1], eps);
    let q = BoxQuadrature::new(field, &[&b1, &b2], r)?;
    let w = q.weights();
    let u = q.sample(field)?;
    let p1 = q.sample(&b1)?;
    let p2 = q.sample(&b2)?;
    let (c, _) = project(&w, &u, [&p1, &p2], q.volume)?;
    let flux = q.vertical_flux(field)?;
    Ok(SlipFit {
        c_grad: [(flux[0] / q.volume).to_f64_lossy(), (flux[1] / q.volume).to_f64_lossy()],
        c_lsq: c.map(|v| v.to_f64_lossy()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub r: f64,
    pub avg_l2: f64,
    pub lipschitz_ratio: f64,
    pub c_grad: [f64; 2],
    pub c_lsq: [f64; 2],
    pub res_plain: f64,
    pub res_corrector: f64,
    pub res_navier: f64,
    /// Residuals with the `c_grad` coefficients in every span.
    pub res_plain_grad: f64,
    pub res_corrector_grad: f64,
    pub res_navier_grad: f64,
    pub snap: f64,
    pub small_scale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleReport {
    pub epsilon: f64,
    pub rows: Vec<ScaleRow>,
    pub slopes: BTreeMap<String, RateFit>,
    pub config_hash: String,
    pub version: String,
}

pub const SCALE_CSV_HEADER: &str =
    "r,avg_l2,lipschitz_ratio,c1_grad,c2_grad,c1_lsq,c2_lsq,res_plain,res_corrector,res_navier";

/// Columns of a [`ScaleReport`] that can be rate-fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    AvgL2,
    LipschitzRatio,
    ResPlain,
    ResCorrector,
    ResNavier,
}

impl Column {
    pub const ALL: [Column; 5] =
        [Column::AvgL2, Column::LipschitzRatio, Column::ResPlain, Column::ResCorrector, Column::ResNavier];

    pub fn name(&self) -> &'static str {
        match self {
            Column::AvgL2 => "avg_l2",
            Column::LipschitzRatio => "lipschitz_ratio",
            Column::ResPlain => "res_plain",
            Column::ResCorrector => "res_corrector",
            Column::ResNavier => "res_navier",
        }
    }

    pub fn get(&self, row: &ScaleRow) -> f64 {
        match self {
            Column::AvgL2 => row.avg_l2,
            Column::LipschitzRatio => row.lipschitz_ratio,
            Column::ResPlain => row.res_plain,
            Column::ResCorrector => row.res_corrector,
            Column::ResNavier => row.res_navier,
        }
    }
}

impl ScaleReport {
    pub fn column(&self, c: Column) -> Vec<f64> {
        self.rows.iter().map(|r| c.get(r)).collect()
    }

    pub fn r_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.r).collect()
    }

    /// Log-log slope of `column` against `r`.
    pub fn rate_vs_r(&self, c: Column) -> Result<RateFit> {
        rate_fit(&self.r_values(), &self.column(c))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SCALE_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.r, r.avg_l2, r.lipschitz_ratio, r.c_grad[0], r.c_grad[1], r.c_lsq[0], r.c_lsq[1], r.res_plain,
                r.res_corrector, r.res_navier
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slopes": self.slopes,
            "epsilon": self.epsilon,
            "config_hash": self.config_hash,
            "version": self.version,
            "rows": self.rows,
        })
    }
}

/// Sweeps the box size and fills every report column. `alpha[j]` is the slip
/// vector of corrector `j + 1`.
pub fn scale_scan<T: Real>(
    field: &dyn BoxField<T>,
    eps: T,
    r_values: &[T],
    correctors: [&CorrectorSolution<T>; 2],
    alpha: [[T; 3]; 2],
) -> Result<ScaleReport> {
    if r_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("r values must be strictly decreasing".into()));
    }
    let b1 = CorrectorBasis::new(correctors[0], eps);
    let b2 = CorrectorBasis::new(correctors[1], eps);
    let plain = [NavierPolynomial::new(1, T::zero(), [T::zero(); 3]), NavierPolynomial::new(2, T::zero(), [T::zero(); 3])];
    let navier = [NavierPolynomial::new(1, eps, alpha[0]), NavierPolynomial::new(2, eps, alpha[1])];
    let mut rows = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let q = BoxQuadrature::new(field, &[&b1, &b2], r)?;
        let w = q.weights();
        let u = q.sample(field)?;
        let pc = [q.sample(&b1)?, q.sample(&b2)?];
        let pp = [q.sample(&plain[0])?, q.sample(&plain[1])?];
        let pn = [q.sample(&navier[0])?, q.sample(&navier[1])?];
        let (c_lsq, res_corrector) = project(&w, &u, [&pc[0], &pc[1]], q.volume)?;
        let (_, res_plain) = project(&w, &u, [&pp[0], &pp[1]], q.volume)?;
        let (_, res_navier) = project(&w, &u, [&pn[0], &pn[1]], q.volume)?;
        let flux = q.vertical_flux(field)?;
        let c_grad = [flux[0] / q.volume, flux[1] / q.volume];
        let avg = (inner(&w, &u, &u) / q.volume).sqrt();
        rows.push(ScaleRow {
            r: r.to_f64_lossy(),
            avg_l2: avg.to_f64_lossy(),
            lipschitz_ratio: (avg / r).to_f64_lossy(),
            c_grad: c_grad.map(|v| v.to_f64_lossy()),
            c_lsq: c_lsq.map(|v| v.to_f64_lossy()),
            res_plain: res_plain.to_f64_lossy(),
            res_corrector: res_corrector.to_f64_lossy(),
            res_navier: res_navier.to_f64_lossy(),
            res_plain_grad: residual_with(&w, &u, [&pp[0], &pp[1]], c_grad, q.volume).to_f64_lossy(),
            res_corrector_grad: residual_with(&w, &u, [&pc[0], &pc[1]], c_grad, q.volume).to_f64_lossy(),
            res_navier_grad: residual_with(&w, &u, [&pn[0], &pn[1]], c_grad, q.volume).to_f64_lossy(),
            snap: q.snap.to_f64_lossy(),
            small_scale: r < eps,
        });
    }
    let mut report = ScaleReport {
        epsilon: eps.to_f64_lossy(),
        rows,
        slopes: BTreeMap::new(),
        config_hash: String::new(),
        version: crate::VERSION.to_string(),
    };
    if r_values.len() >= 4 {
        for c in Column::ALL {
            if let Ok(fit) = report.rate_vs_r(c) {
                report.slopes.insert(format!("{}_vs_r", c.name()), fit);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub band: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln y` against `ln x`.
pub fn rate_fit(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::InvalidArgument(format!("rate fit needs >= 4 paired points, got {}", x.len().min(y.len()))));
    }
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        if !(*a > 0.0 && *b > 0.0) {
            return Err(Error::NonPositiveData(i));
        }
    }
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let (slope, intercept) = crate::cell::linear_fit(&pts);
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let ssr = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum::<f64>();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::INFINITY);
    Ok(RateFit { slope, band: t * se, intercept, points: pts.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCheck {
    pub epsilon: Vec<f64>,
    pub gradient_integral: Vec<f64>,
    pub l2_integral: Vec<f64>,
    pub gradient_exponent: Option<RateFit>,
    pub l2_exponent: Option<RateFit>,
}

/// `int_{B_r} |(grad_y v)(x/eps)|^2` and `int_{B_r} |v(x/eps)|^2` over an `eps` sweep.
pub fn corrector_scaling_check<T: Real>(c: &CorrectorSolution<T>, eps_values: &[T], r: T) -> Result<ScalingCheck> {
    let mut grad = Vec::new();
    let mut l2 = Vec::new();
    for &eps in eps_values {
        if !(eps > T::zero() && eps <= r) {
            return Err(Error::InvalidArgument(format!("epsilon {eps} outside (0, r]")));
        }
        let f = ScaledCorrector::new(c, eps);
        let q = BoxQuadrature::new(&f, &[], r)?;
        let gi = q.integrate(|x| {
            let g = f.gradient(x)?;
            Ok(g.iter().flatten().fold(T::zero(), |s, v| s + *v * *v))
        })? * eps * eps;
        let li = q.integrate(|x| {
            let v = f.value(x)?;
            Ok(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        })?;
        grad.push(gi.to_f64_lossy());
        l2.push(li.to_f64_lossy());
    }
    let eps: Vec<f64> = eps_values.iter().map(|e| e.to_f64_lossy()).collect();
    Ok(ScalingCheck {
        gradient_exponent: rate_fit(&eps, &grad).ok(),
        l2_exponent: rate_fit(&eps, &l2).ok(),
        epsilon: eps,
        gradient_integral: grad,
        l2_integral: l2,
    })
}

/// `x3 e_j + eps alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavierPolynomial<T: Real> {
    pub j: usize,
    pub eps: T,
    pub alpha: [T; 3],
}

impl<T: Real> NavierPolynomial<T> {
    pub fn new(j: usize, eps: T, alpha: [T; 3]) -> Self {
        Self { j, eps, alpha }
    }

    pub fn eval(&self, x: [T; 3]) -> [T; 3] {
        let mut v = self.alpha.map(|a| self.eps * a);
        v[self.j - 1] = v[self.j - 1] + x[2];
        v
    }

    /// `(P1, P2) - eps M (d3 P1, d3 P2)` at `x3 = 0`.
    pub fn navier_slip_residual(&self, m: [[T; 2]; 2]) -> [T; 2] {
        let p = self.eval([T::zero(); 3]);
        let mut d = [T::zero(); 2];
        d[self.j - 1] = T::one();
        [
            p[0] - self.eps * (m[0][0] * d[0] + m[0][1] * d[1]),
            p[1] - self.eps * (m[1][0] * d[0] + m[1][1] * d[1]),
        ]
    }

    /// Momentum and divergence residuals with zero pressure. `P` is affine
    /// in `x3`, so only the advective term `P3 d3 P = eps alpha_3 e_j` survives.
    pub fn stokes_residual(&self, nonlinear: bool) -> [T; 2] {
        let adv = if nonlinear { (self.eps * self.alpha[2]).abs() } else { T::zero() };
        [adv, T::zero()]
    }
}

pub fn navier_polynomial_field<T: Real>(j: usize, eps: T, alpha: [T; 3]) -> NavierPolynomial<T> {
    NavierPolynomial::new(j, eps, alpha)
}

impl<T: Real> BoxField<T> for NavierPolynomial<T> {
    fn value(&self, x: [T; 3]) -> Result<[T; 3]> {
        Ok(self.eval(x))
    }

    fn gradient(&self, _x: [T; 3]) -> Result<[[T; 3]; 3]> {
        let mut g = [[T::zero(); 3]; 3];
        g[self.j - 1][2] = T::one();
        Ok(g)
    }
}

/// `x -> v^(j)(x / eps)` on the bumpy half-space `x3 > eps gamma(x'/eps)`.
#[derive(Debug, Clone)]
pub struct ScaledCorrector<'a, T: Real> {
    pub corrector: &'a CorrectorSolution<T>,
    pub eps: T,
    ext: HalfspaceExtension<T>,
    grad: [Vec<T>; 9],
}

impl<'a, T: Real> ScaledCorrector<'a, T> {
    pub fn new(corrector: &'a CorrectorSolution<T>, eps: T) -> Self {
        Self { corrector, eps, ext: corrector.extension(), grad: corrector.strip_gradient() }
    }

    fn column(&self, x: [T; 2]) -> Result<usize> {
        let g = &self.corrector.grid;
        let two_pi = lit::<T>(2.0) * T::PI();
        let h1 = self.eps * two_pi / T::from_usize_lossy(g.n1);
        let f1 = x[0] / h1;
        let i1 = f1.round();
        if (f1 - i1).abs() > lit(1e-6) {
            return Err(Error::Unresolved(format!("x1 = {} is not on the corrector lattice", x[0])));
        }
        let i2 = if g.n2 == 1 {
            T::zero()
        } else {
            let h2 = self.eps * two_pi / T::from_usize_lossy(g.n2);
            let f2 = x[1] / h2;
            let i2 = f2.round();
            if (f2 - i2).abs() > lit(1e-6) {
                return Err(Error::Unresolved(format!("x2 = {} is not on the corrector lattice", x[1])));
            }
            i2
        };
        let w = |i: T, n: usize| i.to_isize().unwrap_or(0).rem_euclid(n as isize) as usize;
        Ok(w(i2, g.n2) * g.n1 + w(i1, g.n1))
    }
}

/// Panel heights (in cell units) used above the strip.
const EXTENSION_PANELS: [f64; 22] =
    [0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 14.0, 16.0, 20.0, 24.0, 32.0, 40.0, 48.0, 64.0];

impl<T: Real> BoxField<T> for ScaledCorrector<'_, T> {
    fn value(&self, x: [T; 3]) -> Result<[T; 3]> {
        let col = self.column([x[0], x[1]])?;
        self.corrector.velocity_on_column(col, x[2] / self.eps, &self.ext)
    }

    fn gradient(&self, x: [T; 3]) -> Result<[[T; 3]; 3]> {
        let col = self.column([x[0], x[1]])?;
        let mut g = self.corrector.gradient_on_column(col, x[2] / self.eps, &self.ext, &self.grad);
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v = *v / self.eps;
            }
        }
        Ok(g)
    }

    fn breakpoints(&self, x: [T; 2], lo: T, hi: T, out: &mut Vec<T>) -> Result<()> {
        let col = self.column(x)?;
        let g = &self.corrector.grid;
        for k in 0..=g.nz {
            let z = self.eps * g.z[k * g.ncol + col];
            if z > lo && z < hi {
                out.push(z);
            }
        }
        let mut last = T::zero();
        for y in EXTENSION_PANELS {
            let z = self.eps * T::lit(y);
            if z > lo && z < hi {
                out.push(z);
            }
            last = z;
        }
        // uniform panels of 16 cell units beyond the table
        let step = self.eps * lit(16.0);
        let mut z = last + step;
        while z < hi {
            if z > lo {
                out.push(z);
            }
            z = z + step;
        }
        Ok(())
    }

    fn lattice(&self) -> Option<WallLattice<T>> {
        let g = &self.corrector.grid;
        let two_pi = lit::<T>(2.0) * T::PI();
        Some(WallLattice {
            spacing: [
                self.eps * two_pi / T::from_usize_lossy(g.n1),
                self.eps * two_pi / T::from_usize_lossy(g.n2),
            ],
            n: [g.n1, g.n2],
            groove: g.n2 == 1,
            walls: (0..g.ncol).map(|c| self.eps * g.z[c]).collect(),
        })
    }
}

/// `amplitude * (x3 e_j + eps v^(j)(x/eps))`; with unit amplitude this is the
/// corrector-enriched basis function, otherwise a manufactured field.
#[derive(Debug, Clone)]
pub struct CorrectorBasis<'a, T: Real> {
    pub scaled: ScaledCorrector<'a, T>,
    pub amplitude: T,
}

impl<'a, T: Real> CorrectorBasis<'a, T> {
    pub fn new(corrector: &'a CorrectorSolution<T>, eps: T) -> Self {
        Self { scaled: ScaledCorrector::new(corrector, eps), amplitude: T::one() }
    }

    pub fn manufactured(corrector: &'a CorrectorSolution<T>, eps: T, amplitude: T) -> Self {
        Self { scaled: ScaledCorrector::new(corrector, eps), amplitude }
    }
}

impl<T: Real> BoxField<T> for CorrectorBasis<'_, T> {
    fn value(&self, x: [T; 3]) -> Result<[T; 3]> {
        let v = self.scaled.value(x)?;
        let j = self.scaled.corrector.j;
        let eps = self.scaled.eps;
        let mut out = v.map(|c| eps * c);
        out[j - 1] = out[j - 1] + x[2];
        Ok(out.map(|c| c * self.amplitude))
    }

    fn gradient(&self, x: [T; 3]) -> Result<[[T; 3]; 3]> {
        let mut g = self.scaled.gradient(x)?;
        let eps = self.scaled.eps;
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * eps;
            }
        }
        let j = self.scaled.corrector.j;
        g[j - 1][2] = g[j - 1][2] + T::one();
        Ok(g.map(|row| row.map(|v| v * self.amplitude)))
    }

    fn breakpoints(&self, x: [T; 2], lo: T, hi: T, out: &mut Vec<T>) -> Result<()> {
        self.scaled.breakpoints(x, lo, hi, out)
    }

    fn lattice(&self) -> Option<WallLattice<T>> {
        self.scaled.lattice()
    }
}

/// A channel solution with its layer gradients, ready for box integration.
#[derive(Debug, Clone)]
pub struct ChannelField<'a, T: Real> {
    pub sol: &'a ChannelSolution<T>,
    grad: [Vec<T>; 9],
}

impl<'a, T: Real> ChannelField<'a, T> {
    pub fn new(sol: &'a ChannelSolution<T>) -> Self {
        Self { sol, grad: sol.grid.gradient(&sol.u) }
    }
}

impl<T: Real> BoxField<T> for ChannelField<'_, T> {
    fn value(&self, x: [T; 3]) -> Result<[T; 3]> {
        let col = self.sol.column_at([x[0], x[1]])?;
        self.sol.velocity_on_column(col, x[2])
    }

    fn gradient(&self, x: [T; 3]) -> Result<[[T; 3]; 3]> {
        let col = self.sol.column_at([x[0], x[1]])?;
        let k = self.sol.layer_on_column(col, x[2])?.min(self.sol.grid.nz - 1);
        let i = k * self.sol.grid.ncol + col;
        Ok(std::array::from_fn(|c| std::array::from_fn(|d| self.grad[3 * c + d][i])))
    }

    fn breakpoints(&self, x: [T; 2], lo: T, hi: T, out: &mut Vec<T>) -> Result<()> {
        let col = self.sol.column_at(x)?;
        let g = &self.sol.grid;
        for k in 0..=g.nz {
            let z = g.z[k * g.ncol + col];
            if z > lo && z < hi {
                out.push(z);
            }
        }
        Ok(())
    }

    fn lattice(&self) -> Option<WallLattice<T>> {
        let g = &self.sol.grid;
        Some(WallLattice {
            spacing: self.sol.spacing(),
            n: [g.n1, g.n2],
            groove: g.n2 == 1,
            walls: g.z[..g.ncol].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaccioppoliRecord {
    pub lhs: f64,
    pub rhs_terms: [f64; 2],
    pub implied_k: f64,
}

/// `||grad u||^2_{B_rho}` against `(r-rho)^{-2} ||u||^2_{B_r} + (r-rho)^{-4} ||u||^6_{B_r}`.
pub fn caccioppoli_ratio<T: Real>(field: &dyn BoxField<T>, rho: T, r: T) -> Result<CaccioppoliRecord> {
    if !(rho > T::zero() && rho < r && r <= T::one()) {
        return Err(Error::InvalidArgument(format!("need 0 < rho < r <= 1, got rho={rho}, r={r}")));
    }
    let outer = BoxQuadrature::new(field, &[], r)?;
    let cells = lit::<T>(2.0) * outer.cell;
    if r - rho < cells {
        return Err(Error::DegenerateBox { gap: (r - rho).to_f64_lossy(), cells: cells.to_f64_lossy() });
    }
    let inner_q = BoxQuadrature::new(field, &[], rho)?;
    let lhs = inner_q.integrate(|x| {
        let g = field.gradient(x)?;
        Ok(g.iter().flatten().fold(T::zero(), |s, v| s + *v * *v))
    })?;
    let l2 = outer.integrate(|x| {
        let v = field.value(x)?;
        Ok(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    })?;
    let d = r - rho;
    let t1 = l2 / (d * d);
    let t2 = l2 * l2 * l2 / (d * d * d * d);
    let sum = t1 + t2;
    let k = if sum > T::zero() { lhs / sum } else { T::zero() };
    Ok(CaccioppoliRecord {
        lhs: lhs.to_f64_lossy(),
        rhs_terms: [t1.to_f64_lossy(), t2.to_f64_lossy()],
        implied_k: k.to_f64_lossy(),
    })
}
