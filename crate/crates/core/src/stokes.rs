//! Terrain-following Stokes discretization shared by the cell and channel solvers.
//!
//! Horizontal directions are Fourier pseudo-spectral on a periodic lattice;
//! the vertical direction uses mapped coordinates `s in [0, 1]` with velocity
//! at the nodes `s_k` and pressure at the half levels. The physical height of
//! node `k` above column `(i1, i2)` is `Z_k = b (1 - beta(s_k)) + t(s_k)`.
//!
//! Fields are stored level-major: `data[k * ncol + col]`, `col = i2 * n1 + i1`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::halfspace::dn_matrix;
use crate::linalg::{gmres, BandLu, GmresStats};
use crate::scalar::{lit, Real};

pub type Vel<T> = [Vec<T>; 3];

fn cz<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Node positions `0 = s_0 < ... < s_nz = 1` of the mapped vertical coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalGrid<T: Real> {
    pub s: Vec<T>,
}

impl<T: Real> VerticalGrid<T> {
    pub fn uniform(nz: usize) -> Self {
        let n = T::from_usize_lossy(nz);
        Self { s: (0..=nz).map(|k| T::from_usize_lossy(k) / n).collect() }
    }

    /// Nodes clustered towards `s = 0`; `strength = 0` is uniform.
    pub fn stretched(nz: usize, strength: T) -> Self {
        if strength <= T::zero() {
            return Self::uniform(nz);
        }
        let n = T::from_usize_lossy(nz);
        let th = strength.tanh();
        let s = (0..=nz)
            .map(|k| {
                let xi = T::from_usize_lossy(k) / n;
                T::one() - (strength * (T::one() - xi)).tanh() / th
            })
            .collect();
        Self { s }
    }

    pub fn nz(&self) -> usize {
        self.s.len() - 1
    }
}

/// Condition imposed at the top level `s = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopCondition {
    /// Prescribed velocity.
    Dirichlet,
    /// Free trace coupled to the half-space through the DN form.
    Transparent,
}

#[derive(Debug, Clone)]
pub struct MappedGrid<T: Real> {
    pub n1: usize,
    pub n2: usize,
    pub nz: usize,
    pub ncol: usize,
    pub period: [T; 2],
    pub s: Vec<T>,
    /// Physical heights at the nodes.
    pub z: Vec<T>,
    /// Horizontal slopes of the node surfaces.
    pub zx: [Vec<T>; 2],
    dz: Vec<T>,
    zh: [Vec<T>; 2],
    flat_dz: Vec<T>,
    /// Horizontal cell area.
    pub wh: T,
    pub top: TopCondition,
    fft: Fft2<T>,
    kappa: [Vec<T>; 2],
    nyq: Vec<bool>,
}

impl<T: Real> MappedGrid<T> {
    /// `bottom`, `bottom_grad`: lattice samples of `b` and `grad b`;
    /// `beta`, `lift`: the blending functions sampled at the nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n1: usize,
        n2: usize,
        period: [T; 2],
        vgrid: &VerticalGrid<T>,
        bottom: &[T],
        bottom_grad: [&[T]; 2],
        beta: &[T],
        lift: &[T],
        top: TopCondition,
    ) -> Result<Self> {
        let nz = vgrid.nz();
        let ncol = n1 * n2;
        if nz < 2 || bottom.len() != ncol || beta.len() != nz + 1 || lift.len() != nz + 1 {
            return Err(Error::InvalidArgument("inconsistent mapped-grid dimensions".into()));
        }
        let mut z = vec![T::zero(); (nz + 1) * ncol];
        let mut zx = [vec![T::zero(); (nz + 1) * ncol], vec![T::zero(); (nz + 1) * ncol]];
        for k in 0..=nz {
            let w = T::one() - beta[k];
            for col in 0..ncol {
                z[k * ncol + col] = bottom[col] * w + lift[k];
                zx[0][k * ncol + col] = bottom_grad[0][col] * w;
                zx[1][k * ncol + col] = bottom_grad[1][col] * w;
            }
        }
        let half = lit::<T>(0.5);
        let mut dz = vec![T::zero(); nz * ncol];
        let mut zh = [vec![T::zero(); nz * ncol], vec![T::zero(); nz * ncol]];
        let mut flat_dz = vec![T::zero(); nz];
        let mut min_dz = T::infinity();
        for k in 0..nz {
            let mut acc = T::zero();
            for col in 0..ncol {
                let (lo, hi) = (k * ncol + col, (k + 1) * ncol + col);
                let d = z[hi] - z[lo];
                dz[lo] = d;
                min_dz = min_dz.min(d);
                acc = acc + d;
                zh[0][lo] = half * (zx[0][lo] + zx[0][hi]);
                zh[1][lo] = half * (zx[1][lo] + zx[1][hi]);
            }
            flat_dz[k] = acc / T::from_usize_lossy(ncol);
        }
        if !(min_dz > T::zero()) {
            return Err(Error::DegenerateMap { depth: min_dz.to_f64_lossy() });
        }
        let fft = Fft2::new(n1, n2);
        let two_pi = lit::<T>(2.0) * T::PI();
        let mut kappa = [vec![T::zero(); ncol], vec![T::zero(); ncol]];
        let mut nyq = vec![false; ncol];
        for idx in 0..ncol {
            let (k1, k2) = fft.k_of(idx);
            nyq[idx] = fft.nyquist_at(idx);
            if !nyq[idx] {
                kappa[0][idx] = two_pi * T::from_isize_lossy(k1) / period[0];
                kappa[1][idx] = two_pi * T::from_isize_lossy(k2) / period[1];
            }
        }
        let wh = period[0] / T::from_usize_lossy(n1) * (period[1] / T::from_usize_lossy(n2));
        Ok(Self {
            n1,
            n2,
            nz,
            ncol,
            period,
            s: vgrid.s.clone(),
            z,
            zx,
            dz,
            zh,
            flat_dz,
            wh,
            top,
            fft,
            kappa,
            nyq,
        })
    }

    pub fn fft(&self) -> &Fft2<T> {
        &self.fft
    }

    /// Layer thickness between nodes `k` and `k + 1` above `col`.
    pub fn dz(&self, k: usize, col: usize) -> T {
        self.dz[k * self.ncol + col]
    }

    pub fn height(&self, k: usize, col: usize) -> T {
        self.z[k * self.ncol + col]
    }

    pub fn zeros_vel(&self) -> Vel<T> {
        let n = (self.nz + 1) * self.ncol;
        [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]]
    }

    pub fn zeros_p(&self) -> Vec<T> {
        vec![T::zero(); self.nz * self.ncol]
    }

    /// Levels carrying velocity unknowns.
    pub fn free_levels(&self) -> std::ops::Range<usize> {
        match self.top {
            TopCondition::Dirichlet => 1..self.nz,
            TopCondition::Transparent => 1..self.nz + 1,
        }
    }

    fn n_free(&self) -> usize {
        self.free_levels().len()
    }

    /// Length of the packed unknown vector `[u1, u2, u3 (free levels), p]`.
    pub fn packed_len(&self) -> usize {
        (3 * self.n_free() + self.nz) * self.ncol
    }

    pub fn pack(&self, u: &Vel<T>, p: &[T], out: &mut [T]) {
        let nc = self.ncol;
        let lv = self.free_levels();
        let nf = self.n_free() * nc;
        for c in 0..3 {
            out[c * nf..(c + 1) * nf].copy_from_slice(&u[c][lv.start * nc..lv.end * nc]);
        }
        out[3 * nf..].copy_from_slice(p);
    }

    /// Inverse of [`pack`](Self::pack); fixed levels are left untouched.
    pub fn unpack_into(&self, x: &[T], u: &mut Vel<T>, p: &mut [T]) {
        let nc = self.ncol;
        let lv = self.free_levels();
        let nf = self.n_free() * nc;
        for c in 0..3 {
            u[c][lv.start * nc..lv.end * nc].copy_from_slice(&x[c * nf..(c + 1) * nf]);
        }
        p.copy_from_slice(&x[3 * nf..]);
    }

    fn spectral_derivatives(&self, f: &[T], d1: &mut [T], d2: &mut [T]) {
        let mut spec = vec![cz(); self.ncol];
        self.fft.forward(f, &mut spec);
        let mut s2 = spec.clone();
        for idx in 0..self.ncol {
            let v = spec[idx];
            spec[idx] = Complex::new(-v.im, v.re) * self.kappa[0][idx];
            s2[idx] = Complex::new(-v.im, v.re) * self.kappa[1][idx];
        }
        self.fft.inverse_real(&spec, d1);
        if self.n2 > 1 {
            self.fft.inverse_real(&s2, d2);
        } else {
            d2.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `D1 f1 + D2 f2`.
    fn spectral_divergence(&self, f1: &[T], f2: &[T], out: &mut [T]) {
        let mut a = vec![cz(); self.ncol];
        self.fft.forward(f1, &mut a);
        if self.n2 > 1 {
            let mut b = vec![cz(); self.ncol];
            self.fft.forward(f2, &mut b);
            for idx in 0..self.ncol {
                let s = a[idx] * self.kappa[0][idx] + b[idx] * self.kappa[1][idx];
                a[idx] = Complex::new(-s.im, s.re);
            }
        } else {
            for idx in 0..self.ncol {
                let s = a[idx] * self.kappa[0][idx];
                a[idx] = Complex::new(-s.im, s.re);
            }
        }
        self.fft.inverse_real(&a, out);
    }

    /// Removes Nyquist content level by level.
    pub fn project_levels(&self, f: &mut [T]) {
        if !self.fft.has_nyquist() {
            return;
        }
        for chunk in f.chunks_mut(self.ncol) {
            self.fft.project_real(chunk);
        }
    }

    /// Discrete velocity gradient at the half levels; entry `3 * c + a` holds
    /// `d u_c / d x_a`.
    pub fn gradient(&self, u: &Vel<T>) -> [Vec<T>; 9] {
        let (nc, nz) = (self.ncol, self.nz);
        let half = lit::<T>(0.5);
        let mut g: [Vec<T>; 9] = std::array::from_fn(|_| vec![T::zero(); nz * nc]);
        let mut d1 = vec![T::zero(); (nz + 1) * nc];
        let mut d2 = vec![T::zero(); (nz + 1) * nc];
        for c in 0..3 {
            for k in 0..=nz {
                let r = k * nc..(k + 1) * nc;
                let (a, b) = (&mut d1[r.clone()], &mut d2[r.clone()]);
                self.spectral_derivatives(&u[c][r], a, b);
            }
            for k in 0..nz {
                for col in 0..nc {
                    let (lo, hi, h) = (k * nc + col, (k + 1) * nc + col, k * nc + col);
                    let g3 = (u[c][hi] - u[c][lo]) / self.dz[h];
                    g[3 * c + 2][h] = g3;
                    g[3 * c][h] = half * (d1[lo] + d1[hi]) - self.zh[0][h] * g3;
                    g[3 * c + 1][h] = half * (d2[lo] + d2[hi]) - self.zh[1][h] * g3;
                }
            }
        }
        g
    }

    /// Transpose of [`gradient`](Self::gradient), accumulated into `out`.
    pub fn gradient_adjoint(&self, h: &[Vec<T>; 9], out: &mut Vel<T>) {
        let (nc, nz) = (self.ncol, self.nz);
        let half = lit::<T>(0.5);
        let mut s1 = vec![T::zero(); (nz + 1) * nc];
        let mut s2 = vec![T::zero(); (nz + 1) * nc];
        let mut tmp = vec![T::zero(); nc];
        for c in 0..3 {
            s1.iter_mut().for_each(|v| *v = T::zero());
            s2.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..nz {
                for col in 0..nc {
                    let (lo, hi, i) = (k * nc + col, (k + 1) * nc + col, k * nc + col);
                    let (h1, h2) = (h[3 * c][i], h[3 * c + 1][i]);
                    let t = (h[3 * c + 2][i] - self.zh[0][i] * h1 - self.zh[1][i] * h2) / self.dz[i];
                    out[c][lo] = out[c][lo] - t;
                    out[c][hi] = out[c][hi] + t;
                    s1[lo] = s1[lo] + half * h1;
                    s1[hi] = s1[hi] + half * h1;
                    s2[lo] = s2[lo] + half * h2;
                    s2[hi] = s2[hi] + half * h2;
                }
            }
            for k in 0..=nz {
                let r = k * nc..(k + 1) * nc;
                self.spectral_divergence(&s1[r.clone()], &s2[r.clone()], &mut tmp);
                for (o, t) in out[c][r].iter_mut().zip(&tmp) {
                    *o = *o - *t;
                }
            }
        }
    }

    /// Quadrature weight of half-level cell `i = k * ncol + col`.
    #[inline]
    pub fn cell_weight(&self, i: usize) -> T {
        self.dz[i] * self.wh
    }

    /// Discrete Dirichlet form `a(u, w)`.
    pub fn energy(&self, u: &Vel<T>, w: &Vel<T>) -> T {
        let gu = self.gradient(u);
        let gw = self.gradient(w);
        let mut s = T::zero();
        for i in 0..self.nz * self.ncol {
            let mut acc = T::zero();
            for e in 0..9 {
                acc = acc + gu[e][i] * gw[e][i];
            }
            s = s + acc * self.cell_weight(i);
        }
        s
    }

    /// `A u` including the DN term on a transparent top.
    pub fn apply_a(&self, u: &Vel<T>) -> Vel<T> {
        let mut g = self.gradient(u);
        for e in g.iter_mut() {
            for (i, v) in e.iter_mut().enumerate() {
                *v = *v * self.cell_weight(i);
            }
        }
        let mut out = self.zeros_vel();
        self.gradient_adjoint(&g, &mut out);
        if self.top == TopCondition::Transparent {
            let top = self.nz * self.ncol;
            let dn = self.dn_top([&u[0][top..], &u[1][top..], &u[2][top..]]);
            for c in 0..3 {
                for (o, d) in out[c][top..].iter_mut().zip(&dn[c]) {
                    *o = *o + *d;
                }
            }
        }
        out
    }

    /// `w_h * DN(trace)` on the lattice.
    pub fn dn_top(&self, trace: [&[T]; 3]) -> Vel<T> {
        let nc = self.ncol;
        let mut spec = [vec![cz(); nc], vec![cz(); nc], vec![cz(); nc]];
        for c in 0..3 {
            self.fft.forward(trace[c], &mut spec[c]);
        }
        let mut res = [vec![cz(); nc], vec![cz(); nc], vec![cz(); nc]];
        for idx in 0..nc {
            let xi = [self.kappa[0][idx], self.kappa[1][idx]];
            if self.nyq[idx] || (xi[0] == T::zero() && xi[1] == T::zero()) {
                continue;
            }
            let m = dn_matrix(xi);
            for i in 0..3 {
                let mut acc = cz();
                for j in 0..3 {
                    acc = acc + m[i][j] * spec[j][idx];
                }
                res[i][idx] = acc * self.wh;
            }
        }
        let mut out = [vec![T::zero(); nc], vec![T::zero(); nc], vec![T::zero(); nc]];
        for c in 0..3 {
            self.fft.inverse_real(&res[c], &mut out[c]);
        }
        out
    }

    /// Flux through the node surface `k` per column, `u3 - zx . u'`.
    fn omega(&self, u: &Vel<T>, k: usize, col: usize) -> T {
        let i = k * self.ncol + col;
        u[2][i] - self.zx[0][i] * u[0][i] - self.zx[1][i] * u[1][i]
    }

    /// Discrete divergence `B u` (integrated over each half-level cell).
    pub fn divergence(&self, u: &Vel<T>) -> Vec<T> {
        let (nc, nz) = (self.ncol, self.nz);
        let half = lit::<T>(0.5);
        let mut out = self.zeros_p();
        let mut f1 = vec![T::zero(); nc];
        let mut f2 = vec![T::zero(); nc];
        let mut d = vec![T::zero(); nc];
        for k in 0..nz {
            for col in 0..nc {
                let (lo, hi, i) = (k * nc + col, (k + 1) * nc + col, k * nc + col);
                f1[col] = self.dz[i] * half * (u[0][lo] + u[0][hi]);
                f2[col] = self.dz[i] * half * (u[1][lo] + u[1][hi]);
            }
            self.spectral_divergence(&f1, &f2, &mut d);
            for col in 0..nc {
                out[k * nc + col] = self.wh * (d[col] + self.omega(u, k + 1, col) - self.omega(u, k, col));
            }
        }
        out
    }

    /// `B^T q`, accumulated into `out`.
    pub fn divergence_adjoint(&self, q: &[T], out: &mut Vel<T>) {
        let (nc, nz) = (self.ncol, self.nz);
        let half = lit::<T>(0.5);
        let mut wq = vec![T::zero(); nc];
        let mut d1 = vec![T::zero(); nc];
        let mut d2 = vec![T::zero(); nc];
        for k in 0..nz {
            for col in 0..nc {
                wq[col] = self.wh * q[k * nc + col];
            }
            self.spectral_derivatives(&wq, &mut d1, &mut d2);
            for col in 0..nc {
                let (lo, hi, i) = (k * nc + col, (k + 1) * nc + col, k * nc + col);
                let h = half * self.dz[i];
                out[0][lo] = out[0][lo] - h * d1[col] + self.zx[0][lo] * wq[col];
                out[0][hi] = out[0][hi] - h * d1[col] - self.zx[0][hi] * wq[col];
                out[1][lo] = out[1][lo] - h * d2[col] + self.zx[1][lo] * wq[col];
                out[1][hi] = out[1][hi] - h * d2[col] - self.zx[1][hi] * wq[col];
                out[2][lo] = out[2][lo] - wq[col];
                out[2][hi] = out[2][hi] + wq[col];
            }
        }
    }

    /// Skew-symmetric advection `N(u)` with `w . N(u) = b(u, u, w)`.
    pub fn advection(&self, u: &Vel<T>) -> Vel<T> {
        let (nc, nz) = (self.ncol, self.nz);
        let half = lit::<T>(0.5);
        let g = self.gradient(u);
        let mut h: [Vec<T>; 9] = std::array::from_fn(|_| vec![T::zero(); nz * nc]);
        let mut out = self.zeros_vel();
        for k in 0..nz {
            for col in 0..nc {
                let (lo, hi, i) = (k * nc + col, (k + 1) * nc + col, k * nc + col);
                let w = self.cell_weight(i);
                let ub = [
                    half * (u[0][lo] + u[0][hi]),
                    half * (u[1][lo] + u[1][hi]),
                    half * (u[2][lo] + u[2][hi]),
                ];
                for c in 0..3 {
                    let conv = ub[0] * g[3 * c][i] + ub[1] * g[3 * c + 1][i] + ub[2] * g[3 * c + 2][i];
                    let t = half * half * w * conv;
                    out[c][lo] = out[c][lo] + t;
                    out[c][hi] = out[c][hi] + t;
                    for a in 0..3 {
                        h[3 * c + a][i] = -half * w * ub[c] * ub[a];
                    }
                }
            }
        }
        self.gradient_adjoint(&h, &mut out);
        out
    }

    fn project_pressure_mean(&self, p: &mut [T]) {
        if self.top == TopCondition::Dirichlet {
            let m = p.iter().fold(T::zero(), |s, &v| s + v) / T::from_usize_lossy(p.len());
            p.iter_mut().for_each(|v| *v = *v - m);
        }
    }

    /// Packed saddle-point operator `[A, -B^T; -B, 0]` on the Nyquist-free subspace.
    pub fn apply_system(&self, x: &[T], y: &mut [T]) {
        let mut u = self.zeros_vel();
        let mut p = self.zeros_p();
        self.unpack_into(x, &mut u, &mut p);
        for c in 0..3 {
            self.project_levels(&mut u[c]);
        }
        self.project_levels(&mut p);
        self.project_pressure_mean(&mut p);
        let mut au = self.apply_a(&u);
        let mut bt = self.zeros_vel();
        self.divergence_adjoint(&p, &mut bt);
        for c in 0..3 {
            for (a, b) in au[c].iter_mut().zip(&bt[c]) {
                *a = *a - *b;
            }
            self.project_levels(&mut au[c]);
        }
        let mut d = self.divergence(&u);
        d.iter_mut().for_each(|v| *v = -*v);
        self.project_levels(&mut d);
        self.project_pressure_mean(&mut d);
        self.pack(&au, &d, y);
    }

    fn mode_system(&self, idx: usize) -> Option<BandLu<T>> {
        if self.nyq[idx] {
            return None;
        }
        let nz = self.nz;
        let dirichlet = self.top == TopCondition::Dirichlet;
        let n = if dirichlet { 4 * nz - 3 } else { 4 * nz };
        let (k1, k2) = (self.kappa[0][idx], self.kappa[1][idx]);
        let kk = k1 * k1 + k2 * k2;
        let wh = self.wh;
        let free = |k: usize| k >= 1 && (k < nz || !dirichlet);
        let upos = |c: usize, k: usize| 4 * k - 3 + c;
        let ppos = |k: usize| 4 * k;
        let mut m = BandLu::zeros(n, 4, 4);
        let quarter = lit::<T>(0.25);
        let half = lit::<T>(0.5);
        let re = |v: T| Complex::new(v, T::zero());
        for k in 0..nz {
            let d = self.flat_dz[k];
            let w = d * wh;
            let diag = w * (kk * quarter + T::one() / (d * d));
            let off = w * (kk * quarter - T::one() / (d * d));
            for c in 0..3 {
                if free(k) {
                    m.add(upos(c, k), upos(c, k), re(diag));
                }
                if free(k + 1) {
                    m.add(upos(c, k + 1), upos(c, k + 1), re(diag));
                }
                if free(k) && free(k + 1) {
                    m.add(upos(c, k), upos(c, k + 1), re(off));
                    m.add(upos(c, k + 1), upos(c, k), re(off));
                }
            }
            let zero_pinned = dirichlet && kk == T::zero() && k == nz - 1;
            // row of p_k: -B u; column of p_k in velocity rows: -B^H
            let bh = |a: T| Complex::new(T::zero(), wh * a * d * half);
            for lev in [k, k + 1] {
                if !free(lev) {
                    continue;
                }
                for (a, ka) in [(0usize, k1), (1, k2)] {
                    let b = bh(ka);
                    if !zero_pinned {
                        m.add(ppos(k), upos(a, lev), -b);
                    }
                    m.add(upos(a, lev), ppos(k), b.conj() * -T::one());
                }
                let sgn = if lev == k + 1 { T::one() } else { -T::one() };
                if !zero_pinned {
                    m.add(ppos(k), upos(2, lev), re(-wh * sgn));
                }
                m.add(upos(2, lev), ppos(k), re(-wh * sgn));
            }
            if zero_pinned {
                m.add(ppos(k), ppos(k), re(T::one()));
            }
        }
        if !dirichlet && kk > T::zero() {
            let dn = dn_matrix([k1, k2]);
            for i in 0..3 {
                for j in 0..3 {
                    m.add(upos(i, nz), upos(j, nz), dn[i][j] * wh);
                }
            }
        }
        if !m.factor() {
            return None;
        }
        Some(m)
    }

    /// Exact inverse of the flat-geometry operator, mode by mode.
    pub fn preconditioner(&self) -> FlatPreconditioner<T> {
        let factors = (0..self.ncol).map(|idx| self.mode_system(idx)).collect();
        FlatPreconditioner { factors }
    }

    pub fn apply_preconditioner(&self, pc: &FlatPreconditioner<T>, r: &[T], out: &mut [T]) {
        let (nc, nz) = (self.ncol, self.nz);
        let mut u = self.zeros_vel();
        let mut p = self.zeros_p();
        self.unpack_into(r, &mut u, &mut p);
        let dirichlet = self.top == TopCondition::Dirichlet;
        let free = self.free_levels();
        let mut su: Vec<[Vec<Complex<T>>; 3]> = Vec::with_capacity(nz + 1);
        let mut sp: Vec<Vec<Complex<T>>> = Vec::with_capacity(nz);
        for k in 0..=nz {
            let mut lvl: [Vec<Complex<T>>; 3] = std::array::from_fn(|_| vec![cz(); nc]);
            if free.contains(&k) {
                for c in 0..3 {
                    self.fft.forward(&u[c][k * nc..(k + 1) * nc], &mut lvl[c]);
                }
            }
            su.push(lvl);
        }
        for k in 0..nz {
            let mut lvl = vec![cz(); nc];
            self.fft.forward(&p[k * nc..(k + 1) * nc], &mut lvl);
            sp.push(lvl);
        }
        let n = if dirichlet { 4 * nz - 3 } else { 4 * nz };
        let mut b = vec![cz(); n];
        for idx in 0..nc {
            let Some(lu) = &pc.factors[idx] else {
                for lvl in su.iter_mut() {
                    for c in 0..3 {
                        lvl[c][idx] = cz();
                    }
                }
                for lvl in sp.iter_mut() {
                    lvl[idx] = cz();
                }
                continue;
            };
            let pinned = dirichlet && self.kappa[0][idx] == T::zero() && self.kappa[1][idx] == T::zero();
            for k in 0..nz {
                b[4 * k] = sp[k][idx];
            }
            for k in free.clone() {
                for c in 0..3 {
                    b[4 * k - 3 + c] = su[k][c][idx];
                }
            }
            if pinned {
                b[4 * (nz - 1)] = cz();
            }
            lu.solve(&mut b);
            if pinned {
                let mut mean = cz();
                for k in 0..nz {
                    mean = mean + b[4 * k];
                }
                mean = mean / T::from_usize_lossy(nz);
                for k in 0..nz {
                    b[4 * k] = b[4 * k] - mean;
                }
            }
            for k in 0..nz {
                sp[k][idx] = b[4 * k];
            }
            for k in free.clone() {
                for c in 0..3 {
                    su[k][c][idx] = b[4 * k - 3 + c];
                }
            }
        }
        for k in free.clone() {
            for c in 0..3 {
                self.fft.inverse_real(&su[k][c], &mut u[c][k * nc..(k + 1) * nc]);
            }
        }
        for k in 0..nz {
            self.fft.inverse_real(&sp[k], &mut p[k * nc..(k + 1) * nc]);
        }
        self.pack(&u, &p, out);
    }

    /// Solves `A u - B^T p = f`, `-B u = g` for the free-level velocity and the
    /// pressure; `u` enters as the initial guess and keeps its fixed levels.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        &self,
        pc: &FlatPreconditioner<T>,
        f: &Vel<T>,
        g: &[T],
        u: &mut Vel<T>,
        p: &mut Vec<T>,
        tol: T,
        max_iter: usize,
    ) -> Result<GmresStats> {
        let n = self.packed_len();
        let mut rhs = vec![T::zero(); n];
        let mut fp = f.clone();
        for c in 0..3 {
            self.project_levels(&mut fp[c]);
        }
        let mut gp = g.to_vec();
        self.project_levels(&mut gp);
        self.project_pressure_mean(&mut gp);
        self.pack(&fp, &gp, &mut rhs);
        let mut x = vec![T::zero(); n];
        self.pack(u, p, &mut x);
        let mut apply = |v: &[T], out: &mut [T]| self.apply_system(v, out);
        let mut prec = |v: &[T], out: &mut [T]| self.apply_preconditioner(pc, v, out);
        let stats = gmres(&mut apply, &mut prec, &rhs, &mut x, tol, 80, max_iter);
        if !stats.converged {
            return Err(Error::SolverDiverged {
                iterations: stats.iterations,
                residual: stats.relative_residual,
                target: tol.to_f64_lossy(),
            });
        }
        self.unpack_into(&x, u, p);
        for c in 0..3 {
            let lv = self.free_levels();
            let r = lv.start * self.ncol..lv.end * self.ncol;
            self.project_levels(&mut u[c][r]);
        }
        self.project_levels(p);
        self.project_pressure_mean(p);
        Ok(stats)
    }

    /// Momentum residual `f - (A u + lambda N(u) - B^T p)` on the free levels
    /// (fixed levels zeroed).
    pub fn momentum_residual(&self, u: &Vel<T>, p: &[T], f: &Vel<T>, lambda: T) -> Vel<T> {
        let mut r = self.apply_a(u);
        if lambda != T::zero() {
            let nl = self.advection(u);
            for c in 0..3 {
                for (a, b) in r[c].iter_mut().zip(&nl[c]) {
                    *a = *a + lambda * *b;
                }
            }
        }
        let mut bt = self.zeros_vel();
        self.divergence_adjoint(p, &mut bt);
        let lv = self.free_levels();
        let nc = self.ncol;
        for c in 0..3 {
            for i in 0..r[c].len() {
                let k = i / nc;
                r[c][i] = if lv.contains(&k) { f[c][i] - (r[c][i] - bt[c][i]) } else { T::zero() };
            }
            self.project_levels(&mut r[c]);
            for i in 0..r[c].len() {
                if !lv.contains(&(i / nc)) {
                    r[c][i] = T::zero();
                }
            }
        }
        r
    }

    /// Largest nodal-cell divergence normalised by the cell volume.
    pub fn divergence_residual(&self, u: &Vel<T>) -> T {
        let mut d = self.divergence(u);
        self.project_levels(&mut d);
        d.iter().enumerate().fold(T::zero(), |m, (i, v)| m.max(v.abs() / self.cell_weight(i)))
    }
}

/// Cached LU factors of the flat-geometry operator for every Fourier mode.
#[derive(Debug, Clone)]
pub struct FlatPreconditioner<T: Real> {
    factors: Vec<Option<BandLu<T>>>,
}

/// `C^2` smoothstep from 0 at `s <= a` to 1 at `s >= 1`.
pub fn smoothstep_blend<T: Real>(s: T, a: T) -> T {
    if s <= a {
        return T::zero();
    }
    if s >= T::one() {
        return T::one();
    }
    let t = (s - a) / (T::one() - a);
    t * t * t * (t * (t * lit::<T>(6.0) - lit::<T>(15.0)) + lit::<T>(10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bumpy_grid(top: TopCondition, n1: usize, n2: usize, nz: usize) -> MappedGrid<f64> {
        let ncol = n1 * n2;
        let mut b = vec![0.0; ncol];
        let mut g1 = vec![0.0; ncol];
        let mut g2 = vec![0.0; ncol];
        for col in 0..ncol {
            let x = 2.0 * PI * (col % n1) as f64 / n1 as f64;
            let y = 2.0 * PI * (col / n1) as f64 / n2 as f64;
            b[col] = -0.5 + 0.1 * x.cos() + 0.05 * (x + y).sin();
            g1[col] = -0.1 * x.sin() + 0.05 * (x + y).cos();
            g2[col] = if n2 > 1 { 0.05 * (x + y).cos() } else { 0.0 };
            if n2 == 1 {
                b[col] = -0.5 + 0.1 * x.cos();
                g1[col] = -0.1 * x.sin();
            }
        }
        let vg = VerticalGrid::stretched(nz, 1.0);
        let (beta, lift): (Vec<f64>, Vec<f64>) = match top {
            TopCondition::Transparent => (vg.s.clone(), vec![0.0; nz + 1]),
            TopCondition::Dirichlet => (vg.s.iter().map(|&s| smoothstep_blend(s, 0.5)).collect(), vg.s.clone()),
        };
        MappedGrid::new(n1, n2, [2.0 * PI, 2.0 * PI], &vg, &b, [&g1, &g2], &beta, &lift, top).unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn system_is_symmetric() {
        for top in [TopCondition::Transparent, TopCondition::Dirichlet] {
            let g = bumpy_grid(top, 8, 6, 5);
            let n = g.packed_len();
            let mut x = pseudo_random(n, 1);
            let mut y = pseudo_random(n, 2);
            // restrict to the Nyquist-free, mean-free subspace the operator acts on
            let mut t = vec![0.0; n];
            g.apply_system(&x, &mut t);
            let mut u = g.zeros_vel();
            let mut p = g.zeros_p();
            for v in [&mut x, &mut y] {
                g.unpack_into(v, &mut u, &mut p);
                for c in 0..3 {
                    g.project_levels(&mut u[c]);
                }
                g.project_levels(&mut p);
                g.project_pressure_mean(&mut p);
                g.pack(&u, &p, v);
            }
            let mut ax = vec![0.0; n];
            let mut ay = vec![0.0; n];
            g.apply_system(&x, &mut ax);
            g.apply_system(&y, &mut ay);
            let l: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let r: f64 = ay.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((l - r).abs() < 1e-10 * l.abs().max(1.0), "{top:?}: {l} vs {r}");
        }
    }

    #[test]
    fn gradient_exact_for_linear_fields() {
        let g = bumpy_grid(TopCondition::Transparent, 8, 8, 6);
        let mut u = g.zeros_vel();
        // u = (x3, 2 x3, -x3) is linear in the vertical; gradients are exact.
        for i in 0..u[0].len() {
            u[0][i] = g.z[i];
            u[1][i] = 2.0 * g.z[i];
            u[2][i] = -g.z[i];
        }
        let gr = g.gradient(&u);
        for i in 0..gr[0].len() {
            assert!((gr[2][i] - 1.0).abs() < 1e-12);
            assert!((gr[5][i] - 2.0).abs() < 1e-12);
            assert!((gr[8][i] + 1.0).abs() < 1e-12);
            for e in [0, 1, 3, 4, 6, 7] {
                assert!(gr[e][i].abs() < 1e-12, "entry {e}: {}", gr[e][i]);
            }
        }
    }

    #[test]
    fn advection_is_skew() {
        let g = bumpy_grid(TopCondition::Dirichlet, 8, 6, 5);
        let nn = (g.nz + 1) * g.ncol;
        let mut u = g.zeros_vel();
        for c in 0..3 {
            u[c] = pseudo_random(nn, 10 + c as u64);
            g.project_levels(&mut u[c]);
        }
        let nl = g.advection(&u);
        let s: f64 = (0..3).map(|c| nl[c].iter().zip(&u[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
        assert!(s.abs() < 1e-12, "{s}");
    }

    #[test]
    fn divergence_adjoint_matches() {
        let g = bumpy_grid(TopCondition::Dirichlet, 8, 6, 5);
        let nn = (g.nz + 1) * g.ncol;
        let mut u = g.zeros_vel();
        for c in 0..3 {
            u[c] = pseudo_random(nn, 20 + c as u64);
            g.project_levels(&mut u[c]);
        }
        let mut q = pseudo_random(g.nz * g.ncol, 30);
        g.project_levels(&mut q);
        let bu = g.divergence(&u);
        let mut bt = g.zeros_vel();
        g.divergence_adjoint(&q, &mut bt);
        let l: f64 = bu.iter().zip(&q).map(|(a, b)| a * b).sum();
        let r: f64 = (0..3).map(|c| bt[c].iter().zip(&u[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
        assert!((l - r).abs() < 1e-11, "{l} vs {r}");
    }

    #[test]
    fn preconditioner_inverts_flat_operator() {
        for top in [TopCondition::Transparent, TopCondition::Dirichlet] {
            let (n1, n2, nz) = (8, 8, 6);
            let vg = VerticalGrid::stretched(nz, 1.2);
            let b = vec![-0.5; n1 * n2];
            let zeros = vec![0.0; n1 * n2];
            let (beta, lift): (Vec<f64>, Vec<f64>) = match top {
                TopCondition::Transparent => (vg.s.clone(), vec![0.0; nz + 1]),
                TopCondition::Dirichlet => (vg.s.iter().map(|&s| smoothstep_blend(s, 0.5)).collect(), vg.s.clone()),
            };
            let g = MappedGrid::new(n1, n2, [2.0 * PI, 3.0], &vg, &b, [&zeros, &zeros], &beta, &lift, top).unwrap();
            let pc = g.preconditioner();
            let n = g.packed_len();
            let mut x = pseudo_random(n, 5);
            let mut u = g.zeros_vel();
            let mut p = g.zeros_p();
            g.unpack_into(&x, &mut u, &mut p);
            for c in 0..3 {
                g.project_levels(&mut u[c]);
            }
            g.project_levels(&mut p);
            g.project_pressure_mean(&mut p);
            g.pack(&u, &p, &mut x);
            let mut y = vec![0.0; n];
            g.apply_system(&x, &mut y);
            let mut z = vec![0.0; n];
            g.apply_preconditioner(&pc, &y, &mut z);
            let err = x.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-9, "{top:?}: {err}");
        }
    }

    #[test]
    fn stretched_grid_is_monotone() {
        let g = VerticalGrid::<f64>::stretched(16, 2.0);
        assert_eq!(g.s[0], 0.0);
        assert!((g.s[16] - 1.0).abs() < 1e-15);
        for k in 0..16 {
            assert!(g.s[k + 1] > g.s[k]);
        }
        assert!(g.s[1] < 1.0 / 16.0);
    }
}
