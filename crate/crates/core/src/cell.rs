//! Boundary-layer cell problem on the strip `{gamma(y') < y3 < 0}` with the
//! transparent (DN) condition on `y3 = 0`.
//!
//! The unknown is `W = v + y3 e_j`, which vanishes on the rough bottom, so the
//! strip problem becomes homogeneous Dirichlet below and a unit tangential load
//! `int_top phi_j` above. The slip vector is the mean of the top trace of `W`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BoundaryFunction;
use crate::halfspace::{halfspace_fourier_eval, HalfspaceEval, HalfspaceExtension, SpectralTrace};
use crate::linalg::{dot, GmresStats};
use crate::scalar::{lit, resolvable, Real};
use crate::stokes::{FlatPreconditioner, MappedGrid, TopCondition, Vel, VerticalGrid};

/// Lattice and vertical resolution of a cell solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellResolution {
    pub n1: usize,
    pub n2: usize,
    pub nz: usize,
    /// Vertical clustering towards the bottom (0 = uniform).
    pub stretch: f64,
}

impl CellResolution {
    pub fn cube(n: usize) -> Self {
        Self { n1: n, n2: n, nz: n, stretch: 0.0 }
    }

    /// Fast path for profiles depending on `y1` only.
    pub fn groove(n1: usize, nz: usize) -> Self {
        Self { n1, n2: 1, nz, stretch: 0.0 }
    }

    /// Default production resolution for `gamma`.
    pub fn production<T: Real>(gamma: &BoundaryFunction<T>) -> Self {
        if gamma.is_groove() {
            Self::groove(256, 96)
        } else {
            Self::cube(64)
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self { n1: s(self.n1), n2: if self.n2 == 1 { 1 } else { s(self.n2) }, nz: s(self.nz), stretch: self.stretch }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 3000 }
    }
}

impl SolverOptions {
    /// Relative GMRES target: three orders below the residual contract, but
    /// no tighter than the scalar type can resolve.
    pub(crate) fn gmres_tol<T: Real>(&self) -> T {
        resolvable((self.tol * 1e-3).max(1e-13))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectorDiagnostics {
    pub iterations: usize,
    pub relative_residual: f64,
    pub divergence_residual: f64,
    pub weak_residual: f64,
    pub alpha3: f64,
    pub bottom_defect: f64,
}

/// Discrete corrector `(v^(j), q^(j))` on the strip.
#[derive(Debug, Clone)]
pub struct CorrectorSolution<T: Real> {
    pub gamma: BoundaryFunction<T>,
    pub j: usize,
    pub resolution: CellResolution,
    pub grid: MappedGrid<T>,
    /// `W = v + y3 e_j` at the nodes.
    pub w: Vel<T>,
    /// Pressure at the half levels as solved (DN-consistent level).
    pub p_raw: Vec<T>,
    /// Volume mean of `p_raw`; the reported pressure is `p_raw - gauge`.
    pub gauge: T,
    pub trace: SpectralTrace<T>,
    pub alpha: [T; 3],
    pub diagnostics: CorrectorDiagnostics,
    pub history: Vec<f64>,
}

pub(crate) fn cell_grid<T: Real>(gamma: &BoundaryFunction<T>, res: &CellResolution) -> Result<MappedGrid<T>> {
    if res.n2 == 1 && !gamma.is_groove() {
        return Err(Error::InvalidArgument("single-column lattice requires a groove profile".into()));
    }
    let lat = gamma.lattice(res.n1, res.n2)?;
    let vg = VerticalGrid::stretched(res.nz, T::lit(res.stretch));
    let zeros = vec![T::zero(); res.nz + 1];
    let two_pi = lit::<T>(2.0) * T::PI();
    MappedGrid::new(
        res.n1,
        res.n2,
        [two_pi, two_pi],
        &vg,
        &lat.values,
        [&lat.d1, &lat.d2],
        &vg.s,
        &zeros,
        TopCondition::Transparent,
    )
}

/// Dual norm `sup_phi r(phi) / ||phi||` over discretely divergence-free `phi`,
/// obtained from one auxiliary saddle solve.
pub(crate) fn dual_residual<T: Real>(grid: &MappedGrid<T>, pc: &FlatPreconditioner<T>, r: &Vel<T>) -> Result<T> {
    let scale = (0..3).fold(T::zero(), |s, c| s + dot(&r[c], &r[c])).sqrt();
    if scale == T::zero() {
        return Ok(T::zero());
    }
    let mut e = grid.zeros_vel();
    let mut pi = grid.zeros_p();
    let g = grid.zeros_p();
    grid.solve(pc, r, &g, &mut e, &mut pi, resolvable(1e-8), 4000)?;
    let s = (0..3).fold(T::zero(), |s, c| s + dot(&r[c], &e[c]));
    Ok(s.max(T::zero()).sqrt())
}

/// Solves the strip problem for `W^(j)`.
pub fn solve_corrector<T: Real>(
    gamma: &BoundaryFunction<T>,
    j: usize,
    res: CellResolution,
    opts: SolverOptions,
) -> Result<CorrectorSolution<T>> {
    if !(j == 1 || j == 2) {
        return Err(Error::InvalidArgument(format!("corrector index j must be 1 or 2, got {j}")));
    }
    if res.n1 < 16 || (res.n2 != 1 && res.n2 < 16) || res.nz < 16 {
        return Err(Error::InvalidArgument("cell resolution must be at least 16 per direction".into()));
    }
    let grid = cell_grid(gamma, &res)?;
    let pc = grid.preconditioner();
    let (nz, nc) = (grid.nz, grid.ncol);
    let mut f = grid.zeros_vel();
    for col in 0..nc {
        f[j - 1][nz * nc + col] = grid.wh;
    }
    let g = grid.zeros_p();
    let mut w = grid.zeros_vel();
    let mut p = grid.zeros_p();
    let stats: GmresStats = grid.solve(&pc, &f, &g, &mut w, &mut p, opts.gmres_tol(), opts.max_iter)?;

    let top = nz * nc;
    let two_pi = lit::<T>(2.0) * T::PI();
    let trace = SpectralTrace::from_grid(grid.n1, grid.n2, [&w[0][top..], &w[1][top..], &w[2][top..]], two_pi);
    let z0 = trace.zero_mode();
    let alpha = [z0[0].re, z0[1].re, z0[2].re];

    let mut vol = T::zero();
    let mut pm = T::zero();
    for (i, v) in p.iter().enumerate() {
        let cw = grid.cell_weight(i);
        vol = vol + cw;
        pm = pm + cw * *v;
    }
    let gauge = pm / vol;

    let r = grid.momentum_residual(&w, &p, &f, T::zero());
    let weak = dual_residual(&grid, &pc, &r)?;
    let div = grid.divergence_residual(&w);
    let bottom_defect = (0..3).fold(T::zero(), |m, c| w[c][..nc].iter().fold(m, |m, v| m.max(v.abs())));
    let diagnostics = CorrectorDiagnostics {
        iterations: stats.iterations,
        relative_residual: stats.relative_residual,
        divergence_residual: div.to_f64_lossy(),
        weak_residual: weak.to_f64_lossy(),
        alpha3: alpha[2].abs().to_f64_lossy(),
        bottom_defect: bottom_defect.to_f64_lossy(),
    };
    log::debug!("corrector j={j}: {diagnostics:?}");
    Ok(CorrectorSolution {
        gamma: gamma.clone(),
        j,
        resolution: res,
        grid,
        w,
        p_raw: p,
        gauge,
        trace,
        alpha,
        diagnostics,
        history: stats.history,
    })
}

impl<T: Real> CorrectorSolution<T> {
    pub fn nz(&self) -> usize {
        self.grid.nz
    }

    /// Corrector velocity `v` at node `k` of column `col`.
    pub fn v_node(&self, k: usize, col: usize) -> [T; 3] {
        let i = k * self.grid.ncol + col;
        let mut v = [self.w[0][i], self.w[1][i], self.w[2][i]];
        v[self.j - 1] = v[self.j - 1] - self.grid.z[i];
        v
    }

    /// Zero-mean pressure interpolated to the nodes.
    pub fn q_node(&self, k: usize, col: usize) -> T {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let at = |h: usize| self.p_raw[h * nc + col] - self.gauge;
        if k == 0 {
            at(0)
        } else if k == nz {
            at(nz - 1)
        } else {
            lit::<T>(0.5) * (at(k - 1) + at(k))
        }
    }

    /// Zero-mean pressure at the half levels.
    pub fn pressure(&self) -> Vec<T> {
        self.p_raw.iter().map(|v| *v - self.gauge).collect()
    }

    pub fn extension(&self) -> HalfspaceExtension<T> {
        HalfspaceExtension::new(&self.trace)
    }

    /// Bottom height `gamma` of lattice column `col`.
    pub fn bottom(&self, col: usize) -> T {
        self.grid.z[col]
    }

    /// `v` on lattice column `col` at height `y3 >= gamma`; heights above the
    /// strip use the half-space representation.
    pub fn velocity_on_column(&self, col: usize, y3: T, ext: &HalfspaceExtension<T>) -> Result<[T; 3]> {
        let nc = self.grid.ncol;
        let bottom = self.grid.z[col];
        if y3 < bottom - lit::<T>(1e-12) {
            return Err(Error::OutOfDomain(format!("y3 = {y3} below the wall at {bottom}")));
        }
        if y3 >= T::zero() {
            let x = self.column_position(col);
            return Ok(ext.velocity([x[0], x[1], y3]));
        }
        let k = self.level_below(col, y3);
        let (z0, z1) = (self.grid.z[k * nc + col], self.grid.z[(k + 1) * nc + col]);
        let t = ((y3 - z0) / (z1 - z0)).max(T::zero()).min(T::one());
        let mut v = [T::zero(); 3];
        for c in 0..3 {
            let (a, b) = (self.w[c][k * nc + col], self.w[c][(k + 1) * nc + col]);
            v[c] = a + t * (b - a);
        }
        v[self.j - 1] = v[self.j - 1] - y3;
        Ok(v)
    }

    /// Velocity gradient `g[c][d] = d v_c / d y_d` on column `col` at `y3`.
    /// Inside the strip this is the discrete cell gradient of the enclosing layer.
    pub fn gradient_on_column(&self, col: usize, y3: T, ext: &HalfspaceExtension<T>, strip_grad: &[Vec<T>; 9]) -> [[T; 3]; 3] {
        if y3 >= T::zero() {
            let x = self.column_position(col);
            return ext.eval_full([x[0], x[1], y3]).1;
        }
        let k = self.level_below(col, y3);
        let i = k * self.grid.ncol + col;
        let mut g = [[T::zero(); 3]; 3];
        for c in 0..3 {
            for d in 0..3 {
                g[c][d] = strip_grad[3 * c + d][i];
            }
        }
        g[self.j - 1][2] = g[self.j - 1][2] - T::one();
        g
    }

    /// Discrete gradient of `W` at the half levels (see [`MappedGrid::gradient`]).
    pub fn strip_gradient(&self) -> [Vec<T>; 9] {
        self.grid.gradient(&self.w)
    }

    fn level_below(&self, col: usize, y3: T) -> usize {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let mut lo = 0;
        let mut hi = nz;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.grid.z[mid * nc + col] <= y3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn column_position(&self, col: usize) -> [T; 2] {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let two_pi = lit::<T>(2.0) * T::PI();
        [
            two_pi * T::from_usize_lossy(col % n1) / T::from_usize_lossy(n1),
            two_pi * T::from_usize_lossy(col / n1) / T::from_usize_lossy(n2),
        ]
    }

    /// Writes `<stem>.bin` (little-endian f64 blocks `v1, v2, v3, q`, `y1`
    /// fastest, then `y2`, then the vertical node) and `<stem>.json`.
    pub fn write_dump(&self, dir: &Path, stem: &str, extra: serde_json::Map<String, serde_json::Value>) -> Result<(PathBuf, PathBuf)> {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let mut bytes = Vec::with_capacity(4 * (nz + 1) * nc * 8);
        for c in 0..4 {
            for k in 0..=nz {
                for col in 0..nc {
                    let v = if c < 3 { self.v_node(k, col)[c] } else { self.q_node(k, col) };
                    bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                }
            }
        }
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, bytes)?;
        let mut side = serde_json::Map::new();
        side.insert("N".into(), serde_json::json!([self.grid.n1, self.grid.n2]));
        side.insert("Nz".into(), serde_json::json!(nz + 1));
        side.insert("gamma_hash".into(), serde_json::json!(self.gamma.hash()));
        side.insert("j".into(), serde_json::json!(self.j));
        side.insert("alpha".into(), serde_json::json!(self.alpha.map(|a| a.to_f64_lossy())));
        side.insert("diagnostics".into(), serde_json::to_value(&self.diagnostics)?);
        side.insert("s".into(), serde_json::json!(self.grid.s.iter().map(|s| s.to_f64_lossy()).collect::<Vec<_>>()));
        side.extend(extra);
        let json = dir.join(format!("{stem}.json"));
        let mut f = std::fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &side)?;
        writeln!(f)?;
        Ok((bin, json))
    }
}

/// Fields of the corrector above the strip at the requested heights.
pub fn extend_to_halfspace<T: Real>(c: &CorrectorSolution<T>, heights: &[T]) -> Result<HalfspaceEval<T>> {
    halfspace_fourier_eval(&c.trace, heights)
}

pub fn slip_vector<T: Real>(c: &CorrectorSolution<T>) -> [T; 3] {
    c.alpha
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlipMatrix {
    #[serde(rename = "M")]
    pub m: [[f64; 2]; 2],
    pub asymmetry: f64,
    pub eigenvalues: [f64; 2],
    #[serde(skip)]
    pub alpha: [[f64; 3]; 2],
}

impl SlipMatrix {
    /// Assembles `M_ij = alpha_i^(j)` from the two slip vectors.
    pub fn from_alphas(a1: [f64; 3], a2: [f64; 3]) -> Self {
        let m = [[a1[0], a2[0]], [a1[1], a2[1]]];
        let asymmetry = (m[0][1] - m[1][0]).abs();
        // eigenvalues of the symmetric part
        let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        Self { m, asymmetry, eigenvalues: [mean - rad, mean + rad], alpha: [a1, a2] }
    }

    pub fn norm(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues[0] > 0.0
    }
}

pub fn slip_matrix<T: Real>(gamma: &BoundaryFunction<T>, res: CellResolution, opts: SolverOptions) -> Result<SlipMatrix> {
    let c1 = solve_corrector(gamma, 1, res, opts)?;
    let c2 = solve_corrector(gamma, 2, res, opts)?;
    Ok(SlipMatrix::from_alphas(c1.alpha.map(|v| v.to_f64_lossy()), c2.alpha.map(|v| v.to_f64_lossy())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyIdentity {
    pub alpha_from_trace: f64,
    pub alpha_from_energy: f64,
    pub mismatch: f64,
}

/// `(2π)^2 alpha_j = int |grad W|^2 + <DN W_top, W_top>` evaluated on the solve.
pub fn energy_slip_identity<T: Real>(c: &CorrectorSolution<T>) -> EnergyIdentity {
    let dirichlet = c.grid.energy(&c.w, &c.w);
    let dn = c.trace.dn_form();
    let cell = lit::<T>(4.0) * T::PI() * T::PI();
    let from_energy = ((dirichlet + dn) / cell).to_f64_lossy();
    let from_trace = c.alpha[c.j - 1].to_f64_lossy();
    let mismatch = (from_energy - from_trace).abs() / from_trace.abs().max(f64::MIN_POSITIVE);
    EnergyIdentity { alpha_from_trace: from_trace, alpha_from_energy: from_energy, mismatch }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub fitted_rate: f64,
    pub prefactor: f64,
    pub degenerate: bool,
    pub heights: Vec<f64>,
    pub deviations: Vec<f64>,
}

/// Exponential rate of `||v(., y3) - alpha||` over `y3 in [1, ymax]`.
pub fn decay_fit<T: Real>(c: &CorrectorSolution<T>, ymax: f64) -> Result<DecayFit> {
    if ymax < 3.0 {
        return Err(Error::InvalidArgument(format!("decay range upper end must be >= 3, got {ymax}")));
    }
    let ext = c.extension();
    let n = 41;
    let heights: Vec<f64> = (0..n).map(|i| 1.0 + (ymax - 1.0) * i as f64 / (n - 1) as f64).collect();
    let deviations: Vec<f64> = heights.iter().map(|&y| ext.deviation_norm(T::lit(y)).to_f64_lossy()).collect();
    let scale = c.alpha.iter().fold(0.0f64, |m, a| m.max(a.to_f64_lossy().abs())).max(1.0);
    let floor = 1e-13 * scale;
    let usable: Vec<(f64, f64)> =
        heights.iter().zip(&deviations).filter(|(_, d)| **d > floor).map(|(h, d)| (*h, d.ln())).collect();
    if usable.len() < 3 {
        return Ok(DecayFit { fitted_rate: f64::INFINITY, prefactor: 0.0, degenerate: true, heights, deviations });
    }
    let (slope, intercept) = linear_fit(&usable);
    Ok(DecayFit { fitted_rate: -slope, prefactor: intercept.exp(), degenerate: false, heights, deviations })
}

/// Ordinary least-squares line `y = a x + b`; returns `(a, b)`.
pub(crate) fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let a = sxy / sxx;
    (a, my - a * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_boundary, sinusoid_boundary};

    #[test]
    fn flat_wall_gives_constant_shift() {
        let gamma = flat_boundary(-0.5f64, 16).unwrap();
        let c = solve_corrector(&gamma, 1, CellResolution::groove(16, 16), SolverOptions::default()).unwrap();
        assert!((c.alpha[0] - 0.5).abs() < 1e-10, "{:?}", c.alpha);
        assert!(c.alpha[1].abs() < 1e-12 && c.alpha[2].abs() < 1e-12);
        for k in 0..=c.nz() {
            let v = c.v_node(k, 3);
            assert!((v[0] - 0.5).abs() < 1e-10 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
            assert!(c.q_node(k, 3).abs() < 1e-10);
        }
        let e = energy_slip_identity(&c);
        assert!(e.mismatch < 1e-10, "{e:?}");
        assert!(decay_fit(&c, 6.0).unwrap().degenerate);
    }

    #[test]
    fn groove_solution_satisfies_contracts() {
        let gamma = sinusoid_boundary(-0.5f64, 0.1, 16).unwrap();
        let c = solve_corrector(&gamma, 1, CellResolution::groove(32, 24), SolverOptions::default()).unwrap();
        let d = &c.diagnostics;
        assert!(d.divergence_residual < 1e-8, "{d:?}");
        assert!(d.weak_residual < 1e-8, "{d:?}");
        assert!(d.alpha3 < 1e-10, "{d:?}");
        assert!(c.alpha[1].abs() < 1e-12);
        let e = energy_slip_identity(&c);
        assert!(e.mismatch < 1e-8, "{e:?}");
        assert!(e.alpha_from_energy > 0.0);
    }

    #[test]
    fn slip_matrix_eigenvalues() {
        let m = SlipMatrix::from_alphas([2.0, 1.0, 0.0], [1.0, 2.0, 0.0]);
        assert!((m.eigenvalues[0] - 1.0).abs() < 1e-15 && (m.eigenvalues[1] - 3.0).abs() < 1e-15);
        assert_eq!(m.asymmetry, 0.0);
    }
}
