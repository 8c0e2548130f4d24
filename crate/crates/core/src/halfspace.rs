//! Exact Stokes machinery for the upper half-space `{y3 > 0}`.
//!
//! * the Poisson kernel `(U, P)` and a trapezoidal convolution solve,
//! * the Dirichlet-to-Neumann symbol `M(xi)` and its periodic application,
//! * the Fourier-series representation of the periodic half-space solution.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{slot, Fft2};
use crate::scalar::{lit, Real};

pub type C<T> = Complex<T>;
pub type CVec3<T> = [Complex<T>; 3];
pub type CMat3<T> = [[Complex<T>; 3]; 3];

fn cz<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

fn cr<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

fn ci<T: Real>(x: T) -> Complex<T> {
    Complex::new(T::zero(), x)
}

/// Poisson kernel of the half-space Stokes problem at `y` (requires `y3 > 0`).
///
/// `U_ij(y) = 3 y3 y_i y_j / (2π |y|^5)`, `P(y) = -y3 / (π |y|^3)`.
pub fn poisson_kernel_eval<T: Real>(y: [T; 3]) -> Result<([[T; 3]; 3], T)> {
    if !(y[2] > T::zero()) {
        return Err(Error::Domain(format!("Poisson kernel needs y3 > 0, got {}", y[2])));
    }
    let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    let r = r2.sqrt();
    let pre = lit::<T>(3.0) * y[2] / (lit::<T>(2.0) * T::PI() * r2 * r2 * r);
    let mut u = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            u[i][j] = pre * y[i] * y[j];
        }
    }
    let p = -y[2] / (T::PI() * r2 * r);
    Ok((u, p))
}

/// Boundary datum sampled on a uniform horizontal grid.
#[derive(Debug, Clone)]
pub struct GriddedDatum<T: Real> {
    pub origin: [T; 2],
    pub spacing: T,
    pub nx: usize,
    pub ny: usize,
    /// Values at `origin + (i*h, j*h)`, `i` fastest.
    pub values: Vec<[T; 3]>,
}

impl<T: Real> GriddedDatum<T> {
    pub fn from_fn(origin: [T; 2], spacing: T, nx: usize, ny: usize, f: impl Fn([T; 2]) -> [T; 3]) -> Self {
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = [
                    origin[0] + spacing * T::from_usize_lossy(i),
                    origin[1] + spacing * T::from_usize_lossy(j),
                ];
                values.push(f(x));
            }
        }
        Self { origin, spacing, nx, ny, values }
    }

    fn border_max(&self) -> T {
        let mut m = T::zero();
        for j in 0..self.ny {
            for i in 0..self.nx {
                if i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny {
                    for c in self.values[j * self.nx + i] {
                        m = m.max(c.abs());
                    }
                }
            }
        }
        m
    }
}

/// Velocity of the half-space Stokes solution with boundary datum `u0`,
/// by trapezoidal quadrature of the Poisson-kernel convolution. Error O(h^2).
pub fn poisson_solve<T: Real>(u0: &GriddedDatum<T>, points: &[[T; 3]]) -> Result<Vec<[T; 3]>> {
    let scale = u0.values.iter().flat_map(|v| v.iter()).fold(T::zero(), |m, &c| m.max(c.abs()));
    let border = u0.border_max();
    if border > lit::<T>(1e-12) * scale.max(T::min_positive_value()) {
        return Err(Error::Support(border.to_f64_lossy()));
    }
    let guard = lit::<T>(2.0) * u0.spacing;
    let w = u0.spacing * u0.spacing;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if p[2] < guard {
            return Err(Error::QuadratureGuard { height: p[2].to_f64_lossy(), guard: guard.to_f64_lossy() });
        }
        let mut acc = [T::zero(); 3];
        for j in 0..u0.ny {
            let yy = p[1] - (u0.origin[1] + u0.spacing * T::from_usize_lossy(j));
            for i in 0..u0.nx {
                let v = u0.values[j * u0.nx + i];
                if v[0] == T::zero() && v[1] == T::zero() && v[2] == T::zero() {
                    continue;
                }
                let yx = p[0] - (u0.origin[0] + u0.spacing * T::from_usize_lossy(i));
                let r2 = yx * yx + yy * yy + p[2] * p[2];
                let pre = lit::<T>(3.0) * p[2] / (lit::<T>(2.0) * T::PI() * r2 * r2 * r2.sqrt());
                let y = [yx, yy, p[2]];
                let dot = y[0] * v[0] + y[1] * v[1] + y[2] * v[2];
                for c in 0..3 {
                    acc[c] = acc[c] + w * pre * y[c] * dot;
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// The DN symbol `M(xi)` together with its off-diagonal singular part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnSymbol<T: Real> {
    pub xi: [T; 2],
    pub matrix: CMat3<T>,
    pub singular_part: CMat3<T>,
}

pub fn dn_symbol<T: Real>(xi: [T; 2]) -> Result<DnSymbol<T>> {
    let a = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    if a == T::zero() {
        return Err(Error::Domain("DN symbol is singular at xi = 0".into()));
    }
    Ok(DnSymbol { xi, matrix: dn_matrix(xi), singular_part: dn_singular_part(xi) })
}

/// `M(xi)` without the zero check; the caller guarantees `xi != 0`.
pub(crate) fn dn_matrix<T: Real>(xi: [T; 2]) -> CMat3<T> {
    let a = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    let two = lit::<T>(2.0);
    [
        [cr(a + xi[0] * xi[0] / a), cr(xi[0] * xi[1] / a), ci(xi[0])],
        [cr(xi[0] * xi[1] / a), cr(a + xi[1] * xi[1] / a), ci(xi[1])],
        [ci(-xi[0]), ci(-xi[1]), cr(two * a)],
    ]
}

fn dn_singular_part<T: Real>(xi: [T; 2]) -> CMat3<T> {
    let z = cz();
    [[z, z, ci(xi[0])], [z, z, ci(xi[1])], [ci(-xi[0]), ci(-xi[1]), z]]
}

pub(crate) fn matvec3<T: Real>(m: &CMat3<T>, v: &CVec3<T>) -> CVec3<T> {
    let mut out = [cz(); 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

/// Horizontal Fourier coefficients of a real 3-component field on the torus
/// of side `period`, for `|k1| <= k1max`, `|k2| <= k2max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTrace<T: Real> {
    k1max: usize,
    k2max: usize,
    period: T,
    coeffs: Vec<CVec3<T>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceModeFile {
    k: [i64; 2],
    v: [[f64; 2]; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceFile {
    #[serde(rename = "Kmax")]
    kmax: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    modes: Vec<TraceModeFile>,
}

impl<T: Real> SpectralTrace<T> {
    pub fn zeros(k1max: usize, k2max: usize, period: T) -> Self {
        Self { k1max, k2max, period, coeffs: vec![[cz(); 3]; (2 * k1max + 1) * (2 * k2max + 1)] }
    }

    fn idx(&self, k1: i64, k2: i64) -> Option<usize> {
        if k1.unsigned_abs() as usize > self.k1max || k2.unsigned_abs() as usize > self.k2max {
            return None;
        }
        let side = 2 * self.k1max + 1;
        Some((k1 + self.k1max as i64) as usize + side * (k2 + self.k2max as i64) as usize)
    }

    pub fn k1max(&self) -> usize {
        self.k1max
    }

    pub fn k2max(&self) -> usize {
        self.k2max
    }

    pub fn period(&self) -> T {
        self.period
    }

    pub fn get(&self, k1: i64, k2: i64) -> CVec3<T> {
        self.idx(k1, k2).map(|i| self.coeffs[i]).unwrap_or([cz(); 3])
    }

    pub fn set(&mut self, k1: i64, k2: i64, v: CVec3<T>) {
        let i = self.idx(k1, k2).expect("wavevector inside the stored band");
        self.coeffs[i] = v;
    }

    /// Physical wavevector `2π k / period`.
    pub fn wavevector(&self, k1: i64, k2: i64) -> [T; 2] {
        let s = lit::<T>(2.0) * T::PI() / self.period;
        [s * T::from_i64(k1).unwrap(), s * T::from_i64(k2).unwrap()]
    }

    /// All stored wavevectors in fixed order (k2-major).
    pub fn wavevectors(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let (a, b) = (self.k1max as i64, self.k2max as i64);
        (-b..=b).flat_map(move |k2| (-a..=a).map(move |k1| (k1, k2)))
    }

    pub fn zero_mode(&self) -> CVec3<T> {
        self.get(0, 0)
    }

    /// Coefficients of lattice samples (`n1 x n2`, first index fastest).
    /// Unpaired Nyquist content is dropped.
    pub fn from_grid(n1: usize, n2: usize, comps: [&[T]; 3], period: T) -> Self {
        let fft = Fft2::<T>::new(n1, n2);
        let k1max = if n1 > 1 { (n1 - 1) / 2 } else { 0 };
        let k2max = if n2 > 1 { (n2 - 1) / 2 } else { 0 };
        let mut out = Self::zeros(k1max, k2max, period);
        let mut spec = [vec![cz(); n1 * n2], vec![cz(); n1 * n2], vec![cz(); n1 * n2]];
        for c in 0..3 {
            fft.forward(comps[c], &mut spec[c]);
        }
        for (k1, k2) in out.wavevectors().collect::<Vec<_>>() {
            let idx = slot(k1 as isize, n1) + n1 * slot(k2 as isize, n2);
            out.set(k1, k2, [spec[0][idx], spec[1][idx], spec[2][idx]]);
        }
        out
    }

    /// Lattice samples of the physical trace.
    pub fn to_grid(&self, n1: usize, n2: usize) -> Result<[Vec<T>; 3]> {
        if 2 * self.k1max >= n1.max(1) && self.k1max > 0 || 2 * self.k2max >= n2.max(1) && self.k2max > 0 {
            return Err(Error::Unresolved(format!(
                "trace band ({}, {}) not representable on {n1}x{n2}",
                self.k1max, self.k2max
            )));
        }
        let fft = Fft2::<T>::new(n1, n2);
        let mut spec = [vec![cz(); n1 * n2], vec![cz(); n1 * n2], vec![cz(); n1 * n2]];
        for (k1, k2) in self.wavevectors() {
            let v = self.get(k1, k2);
            let idx = slot(k1 as isize, n1) + n1 * slot(k2 as isize, n2);
            for c in 0..3 {
                spec[c][idx] = v[c];
            }
        }
        let mut out = [vec![T::zero(); n1 * n2], vec![T::zero(); n1 * n2], vec![T::zero(); n1 * n2]];
        for c in 0..3 {
            fft.inverse_real(&spec[c], &mut out[c]);
        }
        Ok(out)
    }

    /// Largest violation of `b_{-k} = conj(b_k)`.
    pub fn hermitian_defect(&self) -> T {
        let mut m = T::zero();
        for (k1, k2) in self.wavevectors() {
            let a = self.get(k1, k2);
            let b = self.get(-k1, -k2);
            for c in 0..3 {
                m = m.max((a[c] - b[c].conj()).norm());
            }
        }
        m
    }

    /// `period * sqrt(sum |b_k|^2)`: the L2 norm of the physical trace.
    pub fn l2_norm(&self) -> T {
        let s = self.coeffs.iter().flat_map(|v| v.iter()).fold(T::zero(), |a, c| a + c.norm_sqr());
        self.period * s.sqrt()
    }

    /// `<DN b, b>` on one period cell.
    pub fn dn_form(&self) -> T {
        let mut acc = T::zero();
        for (k1, k2) in self.wavevectors() {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let b = self.get(k1, k2);
            let mb = matvec3(&dn_matrix(self.wavevector(k1, k2)), &b);
            for c in 0..3 {
                acc = acc + (b[c].conj() * mb[c]).re;
            }
        }
        acc * self.period * self.period
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let modes = self
            .wavevectors()
            .filter_map(|(k1, k2)| {
                let v = self.get(k1, k2);
                if v.iter().all(|c| c.norm() == T::zero()) {
                    return None;
                }
                Some(TraceModeFile {
                    k: [k1, k2],
                    v: [0, 1, 2].map(|c| [v[c].re.to_f64_lossy(), v[c].im.to_f64_lossy()]),
                })
            })
            .collect();
        let two_pi = 2.0 * std::f64::consts::PI;
        let p = self.period.to_f64_lossy();
        let file = TraceFile {
            kmax: self.k1max.max(self.k2max),
            period: if (p - two_pi).abs() > 1e-15 { Some(p) } else { None },
            modes,
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn read_json(s: &str) -> Result<Self> {
        let file: TraceFile = serde_json::from_str(s)?;
        let period = T::lit(file.period.unwrap_or(2.0 * std::f64::consts::PI));
        let mut k1max = 0usize;
        let mut k2max = 0usize;
        for m in &file.modes {
            k1max = k1max.max(m.k[0].unsigned_abs() as usize);
            k2max = k2max.max(m.k[1].unsigned_abs() as usize);
        }
        if k1max > file.kmax || k2max > file.kmax {
            return Err(Error::Format(format!("mode outside Kmax = {}", file.kmax)));
        }
        let mut out = Self::zeros(k1max, k2max, period);
        for m in file.modes {
            out.set(m.k[0], m.k[1], m.v.map(|[re, im]| Complex::new(T::lit(re), T::lit(im))));
        }
        Ok(out)
    }
}

/// Periodic DN map: `b_k -> M(k) b_k` for `k != 0`, zero mode to zero.
pub fn dn_apply_periodic<T: Real>(trace: &SpectralTrace<T>) -> SpectralTrace<T> {
    let mut out = SpectralTrace::zeros(trace.k1max, trace.k2max, trace.period);
    for (k1, k2) in trace.wavevectors().collect::<Vec<_>>() {
        if k1 == 0 && k2 == 0 {
            continue;
        }
        let m = dn_matrix(trace.wavevector(k1, k2));
        out.set(k1, k2, matvec3(&m, &trace.get(k1, k2)));
    }
    out
}

/// One Fourier mode of the half-space extension.
#[derive(Debug, Clone, Copy)]
pub struct ModeProfile<T: Real> {
    pub k: [i64; 2],
    pub xi: [T; 2],
    pub abs_xi: T,
    pub b: CVec3<T>,
    /// `b3 - i (xi/|xi|) . b'`
    pub c: Complex<T>,
}

impl<T: Real> ModeProfile<T> {
    pub fn new(k: [i64; 2], xi: [T; 2], b: CVec3<T>) -> Self {
        let a = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let c = if a > T::zero() {
            b[2] - ci::<T>(T::one()) * (b[0] * (xi[0] / a) + b[1] * (xi[1] / a))
        } else {
            cz()
        };
        Self { k, xi, abs_xi: a, b, c }
    }

    /// Velocity coefficient at height `y3`.
    pub fn velocity(&self, y3: T) -> CVec3<T> {
        if self.abs_xi == T::zero() {
            return self.b;
        }
        let e = (-self.abs_xi * y3).exp();
        let dir = [ci(-self.xi[0]), ci(-self.xi[1]), cr(self.abs_xi)];
        let mut v = [cz(); 3];
        for c in 0..3 {
            v[c] = self.b[c] * e + dir[c] * self.c * (y3 * e);
        }
        v
    }

    /// Vertical derivative of the velocity coefficient.
    pub fn velocity_dy(&self, y3: T) -> CVec3<T> {
        if self.abs_xi == T::zero() {
            return [cz(); 3];
        }
        let a = self.abs_xi;
        let e = (-a * y3).exp();
        let dir = [ci(-self.xi[0]), ci(-self.xi[1]), cr(a)];
        let mut v = [cz(); 3];
        for c in 0..3 {
            v[c] = self.b[c] * (-a * e) + dir[c] * self.c * ((T::one() - a * y3) * e);
        }
        v
    }

    /// Pressure coefficient (the zero mode is gauged to zero).
    pub fn pressure(&self, y3: T) -> Complex<T> {
        if self.abs_xi == T::zero() {
            return cz();
        }
        self.c * (lit::<T>(2.0) * self.abs_xi * (-self.abs_xi * y3).exp())
    }

    fn amplitude(&self) -> T {
        (self.b[0].norm_sqr() + self.b[1].norm_sqr() + self.b[2].norm_sqr()).sqrt() + self.c.norm()
    }
}

/// Per-mode profiles of a trace, ordered by increasing `|xi|` for pruning.
#[derive(Debug, Clone)]
pub struct HalfspaceExtension<T: Real> {
    modes: Vec<ModeProfile<T>>,
    mean: CVec3<T>,
    period: T,
    amp_max: T,
}

impl<T: Real> HalfspaceExtension<T> {
    pub fn new(trace: &SpectralTrace<T>) -> Self {
        let mut modes: Vec<ModeProfile<T>> = trace
            .wavevectors()
            .filter(|&(k1, k2)| !(k1 == 0 && k2 == 0))
            .map(|(k1, k2)| ModeProfile::new([k1, k2], trace.wavevector(k1, k2), trace.get(k1, k2)))
            .filter(|m| m.b.iter().any(|c| c.norm() > T::zero()))
            .collect();
        modes.sort_by(|a, b| a.abs_xi.partial_cmp(&b.abs_xi).unwrap().then(a.k.cmp(&b.k)));
        let amp_max = modes.iter().map(|m| m.amplitude()).fold(T::zero(), T::max);
        Self { modes, mean: trace.zero_mode(), period: trace.period, amp_max }
    }

    pub fn modes(&self) -> &[ModeProfile<T>] {
        &self.modes
    }

    pub fn mean(&self) -> [T; 3] {
        [self.mean[0].re, self.mean[1].re, self.mean[2].re]
    }

    pub fn period(&self) -> T {
        self.period
    }

    /// Velocity, velocity gradient `g[c][d] = d v_c / d y_d`, and pressure at `y`.
    pub fn eval_full(&self, y: [T; 3]) -> ([T; 3], [[T; 3]; 3], T) {
        let mut v = self.mean();
        let mut g = [[T::zero(); 3]; 3];
        let mut p = T::zero();
        let cutoff = self.amp_max * T::epsilon() * lit(1e-3);
        for m in &self.modes {
            // (1+a)(1+2a(1+y3))exp(-a y3) bounds every mode of amplitude <= amp_max and
            // decreases in a once a*y3 > 3; modes are sorted by a.
            let a = m.abs_xi;
            let ay = a * y[2];
            if ay > lit(3.0) {
                let bound = self.amp_max
                    * (T::one() + a)
                    * (T::one() + lit::<T>(2.0) * a * (T::one() + y[2]))
                    * (-ay).exp();
                if bound < cutoff {
                    break;
                }
            }
            let ph = m.xi[0] * y[0] + m.xi[1] * y[1];
            let e = Complex::new(ph.cos(), ph.sin());
            let vk = m.velocity(y[2]);
            let dk = m.velocity_dy(y[2]);
            for c in 0..3 {
                let t = vk[c] * e;
                v[c] = v[c] + t.re;
                g[c][0] = g[c][0] - m.xi[0] * t.im;
                g[c][1] = g[c][1] - m.xi[1] * t.im;
                g[c][2] = g[c][2] + (dk[c] * e).re;
            }
            p = p + (m.pressure(y[2]) * e).re;
        }
        (v, g, p)
    }

    pub fn velocity(&self, y: [T; 3]) -> [T; 3] {
        self.eval_full(y).0
    }

    /// `|| v(., y3) - b_0 ||_{L2(torus)}` by Parseval.
    pub fn deviation_norm(&self, y3: T) -> T {
        let mut s = T::zero();
        for m in &self.modes {
            let v = m.velocity(y3);
            s = s + v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr();
        }
        self.period * s.sqrt()
    }

    /// `int_{torus x (0,inf)} |grad v|^2`, by Gauss-Legendre quadrature in
    /// the variable `t = exp(-y3)` mode by mode (`panels` panels of 8 points).
    pub fn dirichlet_energy(&self, panels: usize) -> T {
        let (nodes, weights) = gauss_legendre_8::<T>();
        let mut total = T::zero();
        for m in &self.modes {
            let a = m.abs_xi;
            // y3 = -ln(t)/a maps (0,1] onto [0, inf); dy = dt / (a t)
            let mut acc = T::zero();
            for p in 0..panels {
                let lo = T::from_usize_lossy(p) / T::from_usize_lossy(panels);
                let hi = T::from_usize_lossy(p + 1) / T::from_usize_lossy(panels);
                let half = (hi - lo) * lit(0.5);
                let mid = (hi + lo) * lit(0.5);
                for (x, w) in nodes.iter().zip(&weights) {
                    let t = mid + half * *x;
                    let y3 = -t.ln() / a;
                    let v = m.velocity(y3);
                    let d = m.velocity_dy(y3);
                    let mut f = T::zero();
                    for c in 0..3 {
                        f = f + a * a * v[c].norm_sqr() + d[c].norm_sqr();
                    }
                    acc = acc + *w * half * f / (a * t);
                }
            }
            total = total + acc;
        }
        total * self.period * self.period
    }
}

/// Per-mode velocity and pressure of the half-space extension at a list of heights.
#[derive(Debug, Clone)]
pub struct HalfspaceEval<T: Real> {
    pub heights: Vec<T>,
    /// `velocity[h]` is a trace of `v(., heights[h])`.
    pub velocity: Vec<SpectralTrace<T>>,
    /// Pressure coefficients, stored in component 0 of a trace.
    pub pressure: Vec<SpectralTrace<T>>,
}

impl<T: Real> HalfspaceEval<T> {
    /// Physical samples `(u1,u2,u3,p)` at each height on an `n1 x n2` lattice.
    pub fn physical(&self, n1: usize, n2: usize) -> Result<Vec<[Vec<T>; 4]>> {
        let mut out = Vec::with_capacity(self.heights.len());
        for (v, p) in self.velocity.iter().zip(&self.pressure) {
            let [a, b, c] = v.to_grid(n1, n2)?;
            let [q, _, _] = p.to_grid(n1, n2)?;
            out.push([a, b, c, q]);
        }
        Ok(out)
    }

    /// CSV with header `y1,y2,y3,u1,u2,u3,p`.
    pub fn write_csv<W: Write>(&self, mut w: W, n1: usize, n2: usize) -> Result<()> {
        writeln!(w, "y1,y2,y3,u1,u2,u3,p")?;
        let fields = self.physical(n1, n2)?;
        let period = self.velocity.first().map(|t| t.period().to_f64_lossy()).unwrap_or(0.0);
        for (h, f) in self.heights.iter().zip(&fields) {
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    let idx = i2 * n1 + i1;
                    writeln!(
                        w,
                        "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                        period * i1 as f64 / n1 as f64,
                        period * i2 as f64 / n2 as f64,
                        h.to_f64_lossy(),
                        f[0][idx].to_f64_lossy(),
                        f[1][idx].to_f64_lossy(),
                        f[2][idx].to_f64_lossy(),
                        f[3][idx].to_f64_lossy()
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Fourier-series half-space solution with boundary trace `trace`.
pub fn halfspace_fourier_eval<T: Real>(trace: &SpectralTrace<T>, heights: &[T]) -> Result<HalfspaceEval<T>> {
    if let Some(h) = heights.iter().find(|h| !(**h >= T::zero())) {
        return Err(Error::Domain(format!("height {h} below zero")));
    }
    let mut velocity = Vec::with_capacity(heights.len());
    let mut pressure = Vec::with_capacity(heights.len());
    for &y3 in heights {
        let mut v = SpectralTrace::zeros(trace.k1max, trace.k2max, trace.period);
        let mut p = SpectralTrace::zeros(trace.k1max, trace.k2max, trace.period);
        for (k1, k2) in trace.wavevectors().collect::<Vec<_>>() {
            let m = ModeProfile::new([k1, k2], trace.wavevector(k1, k2), trace.get(k1, k2));
            v.set(k1, k2, m.velocity(y3));
            p.set(k1, k2, [m.pressure(y3), cz(), cz()]);
        }
        velocity.push(v);
        pressure.push(p);
    }
    Ok(HalfspaceEval { heights: heights.to_vec(), velocity, pressure })
}

/// 8-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre_8<T: Real>() -> ([T; 8], [T; 8]) {
    const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_2];
    const W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let mut x = [T::zero(); 8];
    let mut w = [T::zero(); 8];
    for i in 0..4 {
        x[2 * i] = T::lit(-X[i]);
        x[2 * i + 1] = T::lit(X[i]);
        w[2 * i] = T::lit(W[i]);
        w[2 * i + 1] = T::lit(W[i]);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kernel_on_axis() {
        let (u, p) = poisson_kernel_eval([0.0f64, 0.0, 1.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 2 && j == 2 { 3.0 / (2.0 * PI) } else { 0.0 };
                assert!(close(u[i][j], expect, 1e-15));
            }
        }
        assert!(close(p, -1.0 / PI, 1e-15));
    }

    #[test]
    fn kernel_off_axis() {
        let (u, p) = poisson_kernel_eval([1.0f64, 0.0, 1.0]).unwrap();
        let pre = 3.0 / (2.0 * PI * 2f64.powf(2.5));
        assert!(close(pre, 0.084_404, 1e-6));
        let pattern = [[1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(u[i][j], pre * pattern[i][j], 1e-15));
            }
        }
        assert!(close(p, -1.0 / (PI * 2f64.powf(1.5)), 1e-15));
        assert!(close(p, -0.112_540, 1e-6));
    }

    #[test]
    fn kernel_homogeneity() {
        let (u1, _) = poisson_kernel_eval([0.0f64, 0.0, 1.0]).unwrap();
        let (u2, _) = poisson_kernel_eval([0.0f64, 0.0, 2.0]).unwrap();
        assert!(close(u2[2][2], u1[2][2] / 4.0, 1e-15));
        assert!(matches!(poisson_kernel_eval([0.0f64, 0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn symbol_examples() {
        let s = dn_symbol([1.0f64, 0.0]).unwrap();
        let m = s.matrix;
        assert_eq!(m[0][0], cr(2.0));
        assert_eq!(m[1][1], cr(1.0));
        assert_eq!(m[2][2], cr(2.0));
        assert_eq!(m[0][2], ci(1.0));
        assert_eq!(m[2][0], ci(-1.0));
        let s = dn_symbol([0.0f64, 2.0]).unwrap();
        let m = s.matrix;
        assert_eq!(m[0][0], cr(2.0));
        assert_eq!(m[1][1], cr(4.0));
        assert_eq!(m[1][2], ci(2.0));
        assert_eq!(m[2][1], ci(-2.0));
        assert_eq!(m[2][2], cr(4.0));
        assert!(dn_symbol([0.0f64, 0.0]).is_err());
        let sp = s.singular_part;
        assert_eq!(sp[1][2], ci(2.0));
        assert_eq!(sp[0][0], cz());
    }

    #[test]
    fn dn_of_cosine() {
        // b = cos(y1) e1 -> DN b = (2 cos y1, 0, sin y1)
        let mut t = SpectralTrace::<f64>::zeros(2, 0, 2.0 * PI);
        t.set(1, 0, [cr(0.5), cz(), cz()]);
        t.set(-1, 0, [cr(0.5), cz(), cz()]);
        let out = dn_apply_periodic(&t);
        let [a, b, c] = out.to_grid(16, 1).unwrap();
        for i in 0..16 {
            let y = 2.0 * PI * i as f64 / 16.0;
            assert!(close(a[i], 2.0 * y.cos(), 1e-14));
            assert!(close(b[i], 0.0, 1e-14));
            assert!(close(c[i], y.sin(), 1e-14));
        }
        assert!(out.hermitian_defect() < 1e-15);
    }

    #[test]
    fn dn_kills_constants() {
        let mut t = SpectralTrace::<f64>::zeros(3, 3, 2.0 * PI);
        t.set(0, 0, [cr(1.0), cr(-2.0), cr(0.5)]);
        let out = dn_apply_periodic(&t);
        assert!(out.coeffs.iter().all(|v| v.iter().all(|c| c.norm() == 0.0)));
        assert_eq!(t.dn_form(), 0.0);
    }

    #[test]
    fn extension_single_mode() {
        let mut t = SpectralTrace::<f64>::zeros(1, 0, 2.0 * PI);
        t.set(1, 0, [cr(1.0), cz(), cz()]);
        let ev = halfspace_fourier_eval(&t, &[0.0, 1.0]).unwrap();
        let v1 = ev.velocity[1].get(1, 0);
        assert!(v1[0].norm() < 1e-15 && v1[1].norm() < 1e-15);
        assert!((v1[2] - ci(-1.0 / std::f64::consts::E)).norm() < 1e-15);
        let q = ev.pressure[1].get(1, 0)[0];
        assert!((q - ci(-2.0 / std::f64::consts::E)).norm() < 1e-15);
        let v0 = ev.velocity[0].get(1, 0);
        assert!((v0[0] - cr(1.0)).norm() < 1e-15);

        let mut t3 = SpectralTrace::<f64>::zeros(1, 0, 2.0 * PI);
        t3.set(1, 0, [cz(), cz(), cr(1.0)]);
        let v0 = halfspace_fourier_eval(&t3, &[0.0]).unwrap().velocity[0].get(1, 0);
        assert!((v0[2] - cr(1.0)).norm() < 1e-15 && v0[0].norm() < 1e-15);
    }

    #[test]
    fn extension_traction_matches_symbol() {
        // -d3 v + q e3 at y3 = 0 reproduces M(xi) b
        let b = [Complex::new(0.3, -0.2), Complex::new(-0.1, 0.4), Complex::new(0.25, 0.05)];
        let xi = [1.3, -0.7];
        let m = ModeProfile::new([1, -1], xi, b);
        let d = m.velocity_dy(0.0);
        let q = m.pressure(0.0);
        let mb = matvec3(&dn_matrix(xi), &b);
        let trac = [-d[0], -d[1], -d[2] + q];
        for c in 0..3 {
            assert!((trac[c] - mb[c]).norm() < 1e-14, "component {c}");
        }
    }

    #[test]
    fn trace_json_round_trip() {
        let mut t = SpectralTrace::<f64>::zeros(2, 1, 2.0 * PI);
        t.set(1, -1, [Complex::new(0.1, 0.2), cz(), Complex::new(-0.3, 0.0)]);
        t.set(-1, 1, [Complex::new(0.1, -0.2), cz(), Complex::new(-0.3, 0.0)]);
        let mut buf = Vec::new();
        t.write_json(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("\"Kmax\":2"));
        let back = SpectralTrace::<f64>::read_json(&s).unwrap();
        assert_eq!(back.get(1, -1), t.get(1, -1));
    }

    #[test]
    fn parseval() {
        let n = 16;
        let f1: Vec<f64> = (0..n * n).map(|i| ((i % n) as f64 * 0.4).sin() + 0.2).collect();
        let f2: Vec<f64> = (0..n * n).map(|i| ((i / n) as f64 * 2.0 * PI / n as f64).cos()).collect();
        let f3 = vec![0.1; n * n];
        let t = SpectralTrace::from_grid(n, n, [&f1, &f2, &f3], 2.0 * PI);
        let mut fx = t.to_grid(n, n).unwrap();
        // grid norm of the band-limited projection
        let h = 2.0 * PI / n as f64;
        let g: f64 = fx.iter_mut().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() * h * h;
        assert!(((g.sqrt() - t.l2_norm()) / t.l2_norm()).abs() < 1e-10);
    }
}
