//! Periodic wall profiles, graph-shifted boxes and terrain-following maps.
//!
//! A profile `gamma` is 2π-periodic in both horizontal variables, band
//! limited, and takes values strictly inside `(-1, 0)`. It is stored twice:
//! as a truncated Fourier series and as samples on an `N x N` lattice.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{slot, Fft2};
use crate::scalar::{lit, Real};

/// Distance kept from the endpoints of the open range `(-1, 0)`.
pub const RANGE_MARGIN: f64 = 1e-6;

/// Smallest admissible layer depth of a terrain-following map.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub k: [i64; 2],
    pub re: f64,
    pub im: f64,
}

/// On-disk description of a profile: `{"modes": [...], "grid": N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpecFile {
    pub modes: Vec<ModeSpec>,
    pub grid: usize,
}

/// How a profile is handed to [`build_boundary`].
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec<T: Real> {
    Modes(Vec<([i64; 2], Complex<T>)>),
    /// Samples on the `N x N` lattice, first index fastest.
    Samples(Vec<T>),
}

#[derive(Debug, Clone)]
pub struct BoundaryFunction<T: Real> {
    kmax: usize,
    coeffs: Vec<Complex<T>>,
    n: usize,
    samples: Vec<T>,
    lipschitz_bound: T,
    range: (T, T),
}

fn check_grid(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("grid size {n} must be a power of two >= 8")));
    }
    Ok(())
}

impl<T: Real> BoundaryFunction<T> {
    fn cidx(kmax: usize, k1: i64, k2: i64) -> usize {
        let side = 2 * kmax + 1;
        (k1 + kmax as i64) as usize + side * (k2 + kmax as i64) as usize
    }

    /// Largest retained |k|_inf.
    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn lipschitz_bound(&self) -> T {
        self.lipschitz_bound
    }

    pub fn range(&self) -> (T, T) {
        self.range
    }

    /// Fourier coefficient at `(k1, k2)`; zero outside the stored band.
    pub fn coeff(&self, k1: i64, k2: i64) -> Complex<T> {
        let km = self.kmax as i64;
        if k1.abs() > km || k2.abs() > km {
            return Complex::new(T::zero(), T::zero());
        }
        self.coeffs[Self::cidx(self.kmax, k1, k2)]
    }

    /// Nonzero modes in a fixed (k2-major, then k1) order.
    pub fn modes(&self) -> Vec<([i64; 2], Complex<T>)> {
        let km = self.kmax as i64;
        let mut out = Vec::new();
        for k2 in -km..=km {
            for k1 in -km..=km {
                let c = self.coeff(k1, k2);
                if c.norm() > T::zero() {
                    out.push(([k1, k2], c));
                }
            }
        }
        out
    }

    pub fn mean(&self) -> T {
        self.coeff(0, 0).re
    }

    /// True when the profile depends on `y1` only.
    pub fn is_groove(&self) -> bool {
        let km = self.kmax as i64;
        let tol = lit::<T>(1e-14) * (T::one() + self.mean().abs());
        (-km..=km).all(|k1| (-km..=km).filter(|&k2| k2 != 0).all(|k2| self.coeff(k1, k2).norm() <= tol))
    }

    /// Pointwise evaluation of the Fourier series.
    pub fn eval(&self, y: [T; 2]) -> T {
        self.eval_with_grad(y).0
    }

    /// Value and gradient at an arbitrary point.
    pub fn eval_with_grad(&self, y: [T; 2]) -> (T, [T; 2]) {
        let km = self.kmax as i64;
        let mut v = T::zero();
        let mut g = [T::zero(); 2];
        for k2 in -km..=km {
            for k1 in -km..=km {
                let c = self.coeff(k1, k2);
                if c.norm() == T::zero() {
                    continue;
                }
                let (kf1, kf2) = (T::from_i64(k1).unwrap(), T::from_i64(k2).unwrap());
                let ph = kf1 * y[0] + kf2 * y[1];
                let e = Complex::new(ph.cos(), ph.sin());
                let t = c * e;
                v = v + t.re;
                // d/dy exp(i k y) = i k exp(i k y)
                g[0] = g[0] - kf1 * t.im;
                g[1] = g[1] - kf2 * t.im;
            }
        }
        (v, g)
    }

    /// Samples of the profile and its gradient on an `n1 x n2` lattice with
    /// spacing `2π/n1`, `2π/n2`.
    pub fn lattice(&self, n1: usize, n2: usize) -> Result<LatticeSamples<T>> {
        let km = self.kmax as i64;
        let fits = |n: usize, k: i64| -> bool { k == 0 || 2 * k.unsigned_abs() < n as u64 };
        let fft = Fft2::<T>::new(n1, n2);
        let zero = Complex::new(T::zero(), T::zero());
        let mut spec = vec![zero; n1 * n2];
        let mut d1 = vec![zero; n1 * n2];
        let mut d2 = vec![zero; n1 * n2];
        for k2 in -km..=km {
            for k1 in -km..=km {
                let c = self.coeff(k1, k2);
                if c.norm() == T::zero() {
                    continue;
                }
                if !fits(n1, k1) || !fits(n2, k2) {
                    return Err(Error::Unresolved(format!(
                        "mode ({k1},{k2}) not representable on a {n1}x{n2} lattice"
                    )));
                }
                let idx = slot(k1 as isize, n1) + n1 * slot(k2 as isize, n2);
                spec[idx] = c;
                let i = Complex::new(T::zero(), T::one());
                d1[idx] = c * i * T::from_i64(k1).unwrap();
                d2[idx] = c * i * T::from_i64(k2).unwrap();
            }
        }
        let mut values = vec![T::zero(); n1 * n2];
        let mut g1 = vec![T::zero(); n1 * n2];
        let mut g2 = vec![T::zero(); n1 * n2];
        fft.inverse_real(&spec, &mut values);
        fft.inverse_real(&d1, &mut g1);
        fft.inverse_real(&d2, &mut g2);
        Ok(LatticeSamples { n1, n2, values, d1: g1, d2: g2 })
    }

    /// Profile translated by `shift`: `gamma_new(y) = gamma(y - shift)`.
    pub fn translated(&self, shift: [T; 2]) -> Result<Self> {
        let modes = self
            .modes()
            .into_iter()
            .map(|(k, c)| {
                let ph = -(T::from_i64(k[0]).unwrap() * shift[0] + T::from_i64(k[1]).unwrap() * shift[1]);
                (k, c * Complex::new(ph.cos(), ph.sin()))
            })
            .collect();
        build_boundary(BoundarySpec::Modes(modes), self.n)
    }

    pub fn to_spec_file(&self) -> BoundarySpecFile {
        BoundarySpecFile {
            modes: self
                .modes()
                .into_iter()
                .map(|(k, c)| ModeSpec { k, re: c.re.to_f64_lossy(), im: c.im.to_f64_lossy() })
                .collect(),
            grid: self.n,
        }
    }

    /// SHA-256 of the canonical JSON spec, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.to_spec_file()).expect("spec serialises");
        crate::content_hash(json.as_bytes())
    }

    /// Writes the lattice samples as CSV with header `y1,y2,gamma`.
    pub fn write_grid_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "y1,y2,gamma")?;
        let h = 2.0 * std::f64::consts::PI / self.n as f64;
        for i2 in 0..self.n {
            for i1 in 0..self.n {
                writeln!(
                    w,
                    "{:.17e},{:.17e},{:.17e}",
                    i1 as f64 * h,
                    i2 as f64 * h,
                    self.samples[i2 * self.n + i1].to_f64_lossy()
                )?;
            }
        }
        Ok(())
    }
}

/// Profile samples with their spectral gradient on a lattice.
#[derive(Debug, Clone)]
pub struct LatticeSamples<T: Real> {
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<T>,
    pub d1: Vec<T>,
    pub d2: Vec<T>,
}

impl BoundarySpecFile {
    pub fn to_spec<T: Real>(&self) -> BoundarySpec<T> {
        BoundarySpec::Modes(
            self.modes.iter().map(|m| (m.k, Complex::new(T::lit(m.re), T::lit(m.im)))).collect(),
        )
    }

    pub fn build<T: Real>(&self) -> Result<BoundaryFunction<T>> {
        build_boundary(self.to_spec(), self.grid)
    }
}

/// Builds a validated profile from either representation.
pub fn build_boundary<T: Real>(spec: BoundarySpec<T>, n: usize) -> Result<BoundaryFunction<T>> {
    check_grid(n)?;
    let zero = Complex::new(T::zero(), T::zero());
    let (kmax, coeffs) = match spec {
        BoundarySpec::Modes(modes) => {
            if modes.is_empty() {
                return Err(Error::InvalidArgument("empty mode list".into()));
            }
            let kmax = modes.iter().map(|(k, _)| k[0].unsigned_abs().max(k[1].unsigned_abs())).max().unwrap() as usize;
            if 2 * kmax >= n {
                return Err(Error::Unresolved(format!("|k|_inf = {kmax} needs a grid larger than {n}")));
            }
            let mut coeffs = vec![zero; (2 * kmax + 1) * (2 * kmax + 1)];
            for (k, c) in modes {
                let i = BoundaryFunction::<T>::cidx(kmax, k[0], k[1]);
                coeffs[i] = coeffs[i] + c;
            }
            let scale = coeffs.iter().map(|c| c.norm()).fold(T::zero(), T::max);
            let tol = lit::<T>(1e-12) * (T::one() + scale);
            let km = kmax as i64;
            for k2 in -km..=km {
                for k1 in -km..=km {
                    let a = coeffs[BoundaryFunction::<T>::cidx(kmax, k1, k2)];
                    let b = coeffs[BoundaryFunction::<T>::cidx(kmax, -k1, -k2)];
                    let mismatch = (a - b.conj()).norm();
                    if mismatch > tol {
                        return Err(Error::ConjugacyViolation { k: [k1, k2], mismatch: mismatch.to_f64_lossy() });
                    }
                }
            }
            (kmax, coeffs)
        }
        BoundarySpec::Samples(samples) => {
            if samples.len() != n * n {
                return Err(Error::InvalidArgument(format!("expected {} samples, got {}", n * n, samples.len())));
            }
            let fft = Fft2::<T>::new(n, n);
            let mut spec = vec![zero; n * n];
            fft.forward(&samples, &mut spec);
            let scale = spec.iter().map(|c| c.norm()).fold(T::zero(), T::max);
            let nyq: T = (0..n * n).filter(|&i| fft.nyquist_at(i)).map(|i| spec[i].norm()).fold(T::zero(), T::max);
            if nyq > lit::<T>(1e-12) * (T::one() + scale) {
                return Err(Error::Unresolved(format!(
                    "samples carry Nyquist content {:e}; refine the grid",
                    nyq.to_f64_lossy()
                )));
            }
            let kmax = n / 2 - 1;
            let mut coeffs = vec![zero; (2 * kmax + 1) * (2 * kmax + 1)];
            for (idx, c) in spec.iter().enumerate() {
                if fft.nyquist_at(idx) {
                    continue;
                }
                let (k1, k2) = fft.k_of(idx);
                coeffs[BoundaryFunction::<T>::cidx(kmax, k1 as i64, k2 as i64)] = *c;
            }
            (kmax, coeffs)
        }
    };
    let mut bf = BoundaryFunction {
        kmax,
        coeffs,
        n,
        samples: Vec::new(),
        lipschitz_bound: T::zero(),
        range: (T::zero(), T::zero()),
    };
    let lat = bf.lattice(n, n)?;
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let mut lip = T::zero();
    for (i, &v) in lat.values.iter().enumerate() {
        if !(v > lit::<T>(-1.0 + RANGE_MARGIN) && v < lit::<T>(-RANGE_MARGIN)) {
            return Err(Error::RangeViolation { index: i, value: v.to_f64_lossy(), margin: RANGE_MARGIN });
        }
        lo = lo.min(v);
        hi = hi.max(v);
        lip = lip.max((lat.d1[i] * lat.d1[i] + lat.d2[i] * lat.d2[i]).sqrt());
    }
    bf.samples = lat.values;
    bf.lipschitz_bound = lip;
    bf.range = (lo, hi);
    Ok(bf)
}

/// Constant profile `gamma = value`.
pub fn flat_boundary<T: Real>(value: T, n: usize) -> Result<BoundaryFunction<T>> {
    build_boundary(BoundarySpec::Modes(vec![([0, 0], Complex::new(value, T::zero()))]), n)
}

/// `gamma(y) = mean + amplitude * cos(y1)`.
pub fn sinusoid_boundary<T: Real>(mean: T, amplitude: T, n: usize) -> Result<BoundaryFunction<T>> {
    let half = Complex::new(amplitude * lit(0.5), T::zero());
    build_boundary(
        BoundarySpec::Modes(vec![([0, 0], Complex::new(mean, T::zero())), ([1, 0], half), ([-1, 0], half)]),
        n,
    )
}

/// Random band-limited profile with `|k|_inf <= kmax`, coefficients decaying
/// like `|k|^-2`, and peak deviation from `mean` equal to `amplitude`.
pub fn random_boundary<T: Real, R: rand::Rng + ?Sized>(
    rng: &mut R,
    mean: T,
    amplitude: T,
    kmax: usize,
    n: usize,
) -> Result<BoundaryFunction<T>> {
    if kmax == 0 {
        return Err(Error::InvalidArgument("random profile needs kmax >= 1".into()));
    }
    let km = kmax as i64;
    let mut modes = Vec::new();
    for k2 in -km..=km {
        for k1 in -km..=km {
            if (k2, k1) <= (0, 0) {
                continue;
            }
            let w = T::one() / T::from_usize_lossy((k1 * k1 + k2 * k2) as usize);
            let c = Complex::new(lit::<T>(rng.gen_range(-1.0..1.0)), lit::<T>(rng.gen_range(-1.0..1.0))) * w;
            modes.push(([k1, k2], c));
            modes.push(([-k1, -k2], c.conj()));
        }
    }
    let tiny = lit::<T>(1e-3);
    let mut probe: Vec<_> = modes.iter().map(|&(k, c)| (k, c * tiny)).collect();
    probe.push(([0, 0], Complex::new(lit(-0.5), T::zero())));
    let shape = build_boundary(BoundarySpec::Modes(probe), n)?;
    let peak = shape.samples().iter().map(|v| (*v + lit(0.5)).abs()).fold(T::zero(), T::max) / tiny;
    let scale = amplitude / peak;
    modes.iter_mut().for_each(|m| m.1 = m.1 * scale);
    modes.push(([0, 0], Complex::new(mean, T::zero())));
    build_boundary(BoundarySpec::Modes(modes), n)
}

/// The graph-shifted box `B^eps_{r,+}(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpyBox<T: Real> {
    pub epsilon: T,
    pub r: T,
    pub center: [T; 2],
}

impl<T: Real> BumpyBox<T> {
    pub fn new(epsilon: T, r: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon <= T::one()) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0,1]")));
        }
        if !(r > T::zero() && r <= T::one()) {
            return Err(Error::InvalidArgument(format!("r {r} outside (0,1]")));
        }
        Ok(Self { epsilon, r, center: [T::zero(); 2] })
    }

    /// Lebesgue measure; the box is a vertical shift of a cube so it is `4 r^3`.
    pub fn volume(&self) -> T {
        lit::<T>(4.0) * self.r * self.r * self.r
    }

    /// `r >= epsilon`; smaller boxes are small-scale.
    pub fn is_mesoscopic(&self) -> bool {
        self.r >= self.epsilon
    }

    pub fn contains(&self, gamma: &BoundaryFunction<T>, x: [T; 3]) -> bool {
        let inside = |c: T| c > -self.r && c < self.r;
        if !(inside(x[0] - self.center[0]) && inside(x[1] - self.center[1])) {
            return false;
        }
        let wall = self.epsilon * gamma.eval([x[0] / self.epsilon, x[1] / self.epsilon]);
        x[2] > wall && x[2] < wall + self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerrainKind<T: Real> {
    /// `s = x3 - eps*gamma(x'/eps)`; unit Jacobian.
    ChannelShear { epsilon: T },
    /// `s = (y3 - gamma(y')) / (-gamma(y'))`, mapping the strip onto `(0,1)`.
    StripSigma,
}

/// Metric terms of a terrain-following map tabulated on the profile lattice.
#[derive(Debug, Clone)]
pub struct TerrainMap<T: Real> {
    pub kind: TerrainKind<T>,
    pub n: usize,
    /// Horizontal slopes of the mapped wall, in the map's own horizontal variable.
    pub d1: Vec<T>,
    pub d2: Vec<T>,
    /// Physical thickness of the unit mapped layer at each lattice column.
    pub depth: Vec<T>,
    gamma: BoundaryFunction<T>,
}

pub fn terrain_map<T: Real>(gamma: &BoundaryFunction<T>, kind: TerrainKind<T>) -> Result<TerrainMap<T>> {
    let n = gamma.grid_size();
    let lat = gamma.lattice(n, n)?;
    let depth = match kind {
        TerrainKind::ChannelShear { epsilon } => {
            if !(epsilon > T::zero() && epsilon <= T::one()) {
                return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0,1]")));
            }
            vec![T::one(); n * n]
        }
        TerrainKind::StripSigma => lat.values.iter().map(|&g| -g).collect::<Vec<_>>(),
    };
    let min = depth.iter().copied().fold(T::infinity(), T::min);
    if min < lit(MIN_DEPTH) {
        return Err(Error::DegenerateMap { depth: min.to_f64_lossy() });
    }
    Ok(TerrainMap { kind, n, d1: lat.d1, d2: lat.d2, depth, gamma: gamma.clone() })
}

impl<T: Real> TerrainMap<T> {
    /// Physical point to `(x1, x2, s)`.
    pub fn to_mapped(&self, x: [T; 3]) -> [T; 3] {
        match self.kind {
            TerrainKind::ChannelShear { epsilon } => {
                let g = self.gamma.eval([x[0] / epsilon, x[1] / epsilon]);
                [x[0], x[1], x[2] - epsilon * g]
            }
            TerrainKind::StripSigma => {
                let g = self.gamma.eval([x[0], x[1]]);
                [x[0], x[1], (x[2] - g) / (-g)]
            }
        }
    }

    pub fn from_mapped(&self, m: [T; 3]) -> [T; 3] {
        match self.kind {
            TerrainKind::ChannelShear { epsilon } => {
                let g = self.gamma.eval([m[0] / epsilon, m[1] / epsilon]);
                [m[0], m[1], m[2] + epsilon * g]
            }
            TerrainKind::StripSigma => {
                let g = self.gamma.eval([m[0], m[1]]);
                [m[0], m[1], g + (-g) * m[2]]
            }
        }
    }

    /// `dx3/ds` at a horizontal position.
    pub fn jacobian(&self, x: [T; 2]) -> T {
        match self.kind {
            TerrainKind::ChannelShear { .. } => T::one(),
            TerrainKind::StripSigma => -self.gamma.eval(x),
        }
    }

    pub fn min_depth(&self) -> T {
        self.depth.iter().copied().fold(T::infinity(), T::min)
    }
}
