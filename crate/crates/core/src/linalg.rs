//! Small dense/banded kernels and a matrix-free restarted GMRES.

use num_complex::Complex;

use crate::scalar::Real;

/// Complex banded LU with partial pivoting.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` columns on
/// the right receive fill-in from row interchanges.
#[derive(Debug, Clone)]
pub struct BandLu<T: Real> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<Complex<T>>,
    piv: Vec<usize>,
    singular: bool,
}

impl<T: Real> BandLu<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            a: vec![Complex::new(T::zero(), T::zero()); n * width],
            piv: vec![0; n],
            singular: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` to entry `(i, j)` of the unfactored matrix.
    pub fn add(&mut self, i: usize, j: usize, v: Complex<T>) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let p = self.pos(i, j);
        self.a[p] = self.a[p] + v;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return Complex::new(T::zero(), T::zero());
        }
        self.a[self.pos(i, j)]
    }

    /// In-place factorisation. Returns `false` when an exact zero pivot shows up.
    pub fn factor(&mut self) -> bool {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.pos(k, k)].norm();
            for i in k + 1..=last {
                let v = self.a[self.pos(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[k] = p;
            if best == T::zero() {
                self.singular = true;
                continue;
            }
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (self.pos(k, j), self.pos(p, j));
                    self.a.swap(x, y);
                }
            }
            let inv = Complex::new(T::one(), T::zero()) / self.a[self.pos(k, k)];
            for i in k + 1..=last {
                let pik = self.pos(i, k);
                let l = self.a[pik] * inv;
                self.a[pik] = l;
                if l.norm() == T::zero() {
                    continue;
                }
                for j in k + 1..=jmax {
                    let pkj = self.pos(k, j);
                    let pij = self.pos(i, j);
                    self.a[pij] = self.a[pij] - l * self.a[pkj];
                }
            }
        }
        !self.singular
    }

    /// Solves in place after [`factor`](Self::factor).
    pub fn solve(&self, b: &mut [Complex<T>]) {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] = b[i] - self.a[self.pos(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s = s - self.a[self.pos(k, j)] * b[j];
            }
            b[k] = s / self.a[self.pos(k, k)];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // pairwise-free but fixed-order accumulation for reproducibility
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt.
///
/// Solves `A x = b` starting from the content of `x`. `apply(v, out)` computes
/// `out = A v`; `precond(v, out)` computes an approximation of `A^{-1} v`.
pub fn gmres<T: Real>(
    apply: &mut dyn FnMut(&[T], &mut [T]),
    precond: &mut dyn FnMut(&[T], &mut [T]),
    b: &[T],
    x: &mut [T],
    tol: T,
    restart: usize,
    max_iter: usize,
) -> GmresStats {
    let n = b.len();
    let bnorm = norm(b);
    let mut history = Vec::new();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return GmresStats { iterations: 0, relative_residual: 0.0, converged: true, history };
    }
    let m = restart.max(1);
    let mut r = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut total = 0usize;
    let mut rel;
    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        rel = beta / bnorm;
        history.push(rel.to_f64_lossy());
        if rel <= tol || total >= max_iter {
            break;
        }
        let mut v: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|&ri| ri / beta).collect());
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            precond(&v[j], &mut z);
            apply(&z, &mut w);
            total += 1;
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk = *wk - hij * *vk;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if d == T::zero() {
                cs[j] = T::one();
                sn[j] = T::zero();
            } else {
                cs[j] = h[j][j] / d;
                sn[j] = h[j + 1][j] / d;
            }
            h[j][j] = d;
            h[j + 1][j] = T::zero();
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j] * g[j];
            used = j + 1;
            rel = g[j + 1].abs() / bnorm;
            history.push(rel.to_f64_lossy());
            if rel <= tol || total >= max_iter || hn == T::zero() {
                break;
            }
            v.push(w.iter().map(|&wk| wk / hn).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![T::zero(); used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s = s - h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        let mut upd = vec![T::zero(); n];
        for (k, yk) in y.iter().enumerate() {
            for (u, vk) in upd.iter_mut().zip(&v[k]) {
                *u = *u + *yk * *vk;
            }
        }
        precond(&upd, &mut z);
        for i in 0..n {
            x[i] = x[i] + z[i];
        }
        if total >= max_iter {
            apply(x, &mut w);
            let res: Vec<T> = b.iter().zip(&w).map(|(&bi, &wi)| bi - wi).collect();
            rel = norm(&res) / bnorm;
            history.push(rel.to_f64_lossy());
            break;
        }
    }
    GmresStats { iterations: total, relative_residual: rel.to_f64_lossy(), converged: rel <= tol, history }
}

/// Solves a small dense real system by Gaussian elimination with partial pivoting.
pub fn solve_dense<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())?;
        if a[p][k] == T::zero() {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] = a[i][j] - l * a[k][j];
            }
            b[i] = b[i] - l * b[k];
        }
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn band_lu_matches_dense_solution() {
        // pentadiagonal with a zero leading diagonal entry forces pivoting
        let n = 9;
        let (kl, ku) = (2, 2);
        let mut dense = vec![vec![c(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = if i == j && i == 0 {
                    c(0.0, 0.0)
                } else {
                    c(((i * 7 + j * 3) % 5) as f64 - 1.5, ((i + 2 * j) % 3) as f64 * 0.5)
                };
                dense[i][j] = v + if i == j { c(4.0, 0.0) * (i > 0) as i32 as f64 } else { c(0.0, 0.0) };
            }
        }
        let mut lu = BandLu::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                lu.add(i, j, dense[i][j]);
            }
        }
        assert!(lu.factor());
        let x: Vec<Complex<f64>> = (0..n).map(|i| c(i as f64 * 0.3 - 1.0, 0.1 * i as f64)).collect();
        let mut b: Vec<Complex<f64>> =
            (0..n).map(|i| (0..n).fold(c(0.0, 0.0), |s, j| s + dense[i][j] * x[j])).collect();
        lu.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).norm() < 1e-12, "row {i}");
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let a = |i: usize, j: usize| -> f64 {
            if i == j {
                3.0
            } else if j == i + 1 {
                -1.2
            } else if i == j + 1 {
                -0.6
            } else {
                0.0
            }
        };
        let xs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a(i, j) * xs[j]).sum()).collect();
        let mut apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a(i, j) * v[j]).sum();
            }
        };
        let mut jacobi = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = v[i] / 3.0;
            }
        };
        let mut x = vec![0.0; n];
        let st = gmres(&mut apply, &mut jacobi, &b, &mut x, 1e-12, 8, 500);
        assert!(st.converged, "{st:?}");
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_solver() {
        let x: Vec<f64> = solve_dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert!(solve_dense(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 1.0]).is_none());
    }
}
