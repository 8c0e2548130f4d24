//! Two-dimensional periodic transforms on an `n1 x n2` lattice.
//!
//! Arrays are stored row-major with the first horizontal index fastest:
//! `idx = i2 * n1 + i1`. Forward transforms are normalised so that the
//! output holds Fourier-series amplitudes, `f(x) = sum_k c_k exp(i k.x)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Signed wavenumber stored at FFT slot `i` of a length-`n` transform.
pub fn wavenumber(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// FFT slot holding signed wavenumber `k`.
pub fn slot(k: isize, n: usize) -> usize {
    k.rem_euclid(n as isize) as usize
}

/// True for the unpaired Nyquist slot of an even-length transform.
pub fn is_nyquist(i: usize, n: usize) -> bool {
    n > 1 && n % 2 == 0 && i == n / 2
}

#[derive(Clone)]
pub struct Fft2<T: Real> {
    n1: usize,
    n2: usize,
    fwd1: Arc<dyn Fft<T>>,
    inv1: Arc<dyn Fft<T>>,
    fwd2: Arc<dyn Fft<T>>,
    inv2: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n1", &self.n1).field("n2", &self.n2).finish()
    }
}

impl<T: Real> Fft2<T> {
    pub fn new(n1: usize, n2: usize) -> Self {
        assert!(n1 >= 1 && n2 >= 1, "empty lattice");
        let mut planner = FftPlanner::new();
        Self {
            n1,
            n2,
            fwd1: planner.plan_fft_forward(n1),
            inv1: planner.plan_fft_inverse(n1),
            fwd2: planner.plan_fft_forward(n2),
            inv2: planner.plan_fft_inverse(n2),
        }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, buf: &mut [Complex<T>], forward: bool) {
        let (n1, n2) = (self.n1, self.n2);
        debug_assert_eq!(buf.len(), n1 * n2);
        let (p1, p2) = if forward { (&self.fwd1, &self.fwd2) } else { (&self.inv1, &self.inv2) };
        if n1 > 1 {
            p1.process(buf);
        }
        if n2 > 1 {
            let mut t = vec![Complex::new(T::zero(), T::zero()); n1 * n2];
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    t[i1 * n2 + i2] = buf[i2 * n1 + i1];
                }
            }
            p2.process(&mut t);
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    buf[i2 * n1 + i1] = t[i1 * n2 + i2];
                }
            }
        }
    }

    /// Real samples to normalised Fourier amplitudes.
    pub fn forward(&self, input: &[T], out: &mut [Complex<T>]) {
        let scale = T::one() / T::from_usize_lossy(self.len());
        for (o, &x) in out.iter_mut().zip(input) {
            *o = Complex::new(x * scale, T::zero());
        }
        self.transform(out, true);
    }

    /// Complex samples to normalised Fourier amplitudes, in place.
    pub fn forward_complex(&self, buf: &mut [Complex<T>]) {
        let scale = T::one() / T::from_usize_lossy(self.len());
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
        self.transform(buf, true);
    }

    /// Fourier amplitudes to complex samples, in place.
    pub fn inverse_complex(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, false);
    }

    /// Fourier amplitudes to real samples (imaginary part discarded).
    pub fn inverse_real(&self, spec: &[Complex<T>], out: &mut [T]) {
        let mut buf = spec.to_vec();
        self.transform(&mut buf, false);
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re;
        }
    }

    /// Signed wavenumber pair stored at flat spectral index `idx`.
    pub fn k_of(&self, idx: usize) -> (isize, isize) {
        let i1 = idx % self.n1;
        let i2 = idx / self.n1;
        (wavenumber(i1, self.n1), wavenumber(i2, self.n2))
    }

    pub fn nyquist_at(&self, idx: usize) -> bool {
        is_nyquist(idx % self.n1, self.n1) || is_nyquist(idx / self.n1, self.n2)
    }

    /// Removes the unpaired Nyquist content from a real field.
    pub fn project_real(&self, field: &mut [T]) {
        if !self.has_nyquist() {
            return;
        }
        let mut spec = vec![Complex::new(T::zero(), T::zero()); self.len()];
        self.forward(field, &mut spec);
        for (idx, c) in spec.iter_mut().enumerate() {
            if self.nyquist_at(idx) {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
        self.inverse_real(&spec, field);
    }

    pub fn has_nyquist(&self) -> bool {
        (self.n1 > 1 && self.n1 % 2 == 0) || (self.n2 > 1 && self.n2 % 2 == 0)
    }
}
