//! Shear-driven (Navier-)Stokes flow between the rough wall
//! `x3 = eps gamma(x'/eps)` and the flat lid `x3 = 1`.
//!
//! The vertical map is `Z = s + b (1 - beta(s))` with `b = eps gamma(x'/eps)`
//! and `beta` vanishing for `s <= 1/2`, so the lower half of the channel is a
//! pure unit-Jacobian shear of the wall.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cell::{dual_residual, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::BoundaryFunction;
use crate::linalg::dot;
use crate::scalar::{lit, Real};
use crate::stokes::{smoothstep_blend, FlatPreconditioner, MappedGrid, TopCondition, Vel, VerticalGrid};

/// Start of the blending layer in the mapped coordinate.
pub const BLEND_START: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelResolution {
    /// Lattice points across the whole lateral period (all `nper` cells).
    pub n1: usize,
    /// `1` selects the groove fast path.
    pub n2: usize,
    pub nz: usize,
    pub stretch: f64,
}

impl ChannelResolution {
    pub fn groove(n1: usize, nz: usize) -> Self {
        Self { n1, n2: 1, nz, stretch: 0.0 }
    }

    pub fn cube(n: usize, nz: usize) -> Self {
        Self { n1: n, n2: n, nz, stretch: 0.0 }
    }

    pub fn refined(&self) -> Self {
        Self { n1: 2 * self.n1, n2: if self.n2 == 1 { 1 } else { 2 * self.n2 }, nz: 2 * self.nz, stretch: self.stretch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelConfig {
    pub epsilon: f64,
    pub nper: usize,
    pub u_top: [f64; 2],
    pub nonlinear: bool,
    pub resolution: ChannelResolution,
    pub tol: f64,
    pub max_picard: usize,
    pub relaxation: f64,
    pub max_gmres: usize,
}

impl ChannelConfig {
    pub fn new(epsilon: f64, resolution: ChannelResolution) -> Self {
        Self {
            epsilon,
            nper: 4,
            u_top: [1.0, 0.0],
            nonlinear: false,
            resolution,
            tol: 1e-8,
            max_picard: 200,
            relaxation: 0.7,
            max_gmres: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelResiduals {
    pub weak_residual: f64,
    pub divergence_residual: f64,
    pub picard_iterations: usize,
    pub picard_history: Vec<f64>,
    pub gmres_iterations: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ChannelSolution<T: Real> {
    pub gamma: BoundaryFunction<T>,
    pub config: ChannelConfig,
    pub grid: MappedGrid<T>,
    /// Velocity at all nodes, boundary values included.
    pub u: Vel<T>,
    /// Zero-mean pressure at the half levels.
    pub p: Vec<T>,
    pub residuals: ChannelResiduals,
}

pub(crate) fn channel_grid<T: Real>(gamma: &BoundaryFunction<T>, cfg: &ChannelConfig) -> Result<MappedGrid<T>> {
    let res = cfg.resolution;
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= 0.25) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1/4], got {}", cfg.epsilon)));
    }
    if cfg.nper < 2 {
        return Err(Error::InvalidArgument(format!("nper must be >= 2, got {}", cfg.nper)));
    }
    if cfg.u_top[0].hypot(cfg.u_top[1]) > 4.0 {
        return Err(Error::InvalidArgument("|U_top| must not exceed 4".into()));
    }
    if res.n1 % cfg.nper != 0 || (res.n2 != 1 && res.n2 % cfg.nper != 0) {
        return Err(Error::InvalidArgument(format!(
            "lattice {}x{} is not a multiple of nper = {}",
            res.n1, res.n2, cfg.nper
        )));
    }
    if res.n2 == 1 && !gamma.is_groove() {
        return Err(Error::InvalidArgument("single-column lattice requires a groove profile".into()));
    }
    let (m1, m2) = (res.n1 / cfg.nper, if res.n2 == 1 { 1 } else { res.n2 / cfg.nper });
    let lat = gamma.lattice(m1, m2)?;
    let eps = T::lit(cfg.epsilon);
    let ncol = res.n1 * res.n2;
    let mut b = vec![T::zero(); ncol];
    let mut g1 = vec![T::zero(); ncol];
    let mut g2 = vec![T::zero(); ncol];
    for col in 0..ncol {
        let (i1, i2) = (col % res.n1, col / res.n1);
        let src = (i2 % m2) * m1 + i1 % m1;
        b[col] = eps * lat.values[src];
        g1[col] = lat.d1[src];
        g2[col] = lat.d2[src];
    }
    let vg = VerticalGrid::stretched(res.nz, T::lit(res.stretch));
    let beta: Vec<T> = vg.s.iter().map(|&s| smoothstep_blend(s, T::lit(BLEND_START))).collect();
    let period = lit::<T>(2.0) * T::PI() * eps * T::from_usize_lossy(cfg.nper);
    MappedGrid::new(res.n1, res.n2, [period, period], &vg, &b, [&g1, &g2], &beta, &vg.s, TopCondition::Dirichlet)
}

fn norm_vel<T: Real>(u: &Vel<T>) -> T {
    (0..3).fold(T::zero(), |s, c| s + dot(&u[c], &u[c])).sqrt()
}

/// Solves the channel problem by relaxed Picard iteration on the advection.
pub fn solve_channel<T: Real>(gamma: &BoundaryFunction<T>, cfg: &ChannelConfig) -> Result<ChannelSolution<T>> {
    let grid = channel_grid(gamma, cfg)?;
    let pc = grid.preconditioner();
    let (nz, nc) = (grid.nz, grid.ncol);
    let mut lift = grid.zeros_vel();
    for col in 0..nc {
        lift[0][nz * nc + col] = T::lit(cfg.u_top[0]);
        lift[1][nz * nc + col] = T::lit(cfg.u_top[1]);
    }
    let a_lift = grid.apply_a(&lift);
    let g = grid.divergence(&lift);
    let gmres_tol: T = SolverOptions { tol: cfg.tol, max_iter: cfg.max_gmres }.gmres_tol();
    let lambda = if cfg.nonlinear { T::one() } else { T::zero() };

    let stokes_step = |adv: Option<&Vel<T>>, u0: &mut Vel<T>, p: &mut Vec<T>| -> Result<usize> {
        let mut f = grid.zeros_vel();
        for c in 0..3 {
            for i in 0..f[c].len() {
                f[c][i] = -a_lift[c][i] - adv.map_or(T::zero(), |a| a[c][i]);
            }
        }
        let st = grid.solve(&pc, &f, &g, u0, p, gmres_tol, cfg.max_gmres)?;
        Ok(st.iterations)
    };

    let mut u0 = grid.zeros_vel();
    let mut p = grid.zeros_p();
    let mut gmres_iterations = stokes_step(None, &mut u0, &mut p)?;
    let mut history = Vec::new();
    let mut picard = 0;
    if cfg.nonlinear {
        let omega = T::lit(cfg.relaxation);
        loop {
            if picard >= cfg.max_picard {
                return Err(Error::PicardDiverged { iterations: picard, history });
            }
            picard += 1;
            let total = add(&u0, &lift);
            let adv = grid.advection(&total);
            let mut un = u0.clone();
            let mut pn = p.clone();
            gmres_iterations += stokes_step(Some(&adv), &mut un, &mut pn)?;
            let mut diff = T::zero();
            for c in 0..3 {
                for i in 0..un[c].len() {
                    let d = omega * (un[c][i] - u0[c][i]);
                    u0[c][i] = u0[c][i] + d;
                    diff = diff + d * d;
                }
            }
            for (a, b) in p.iter_mut().zip(&pn) {
                *a = *a + omega * (*b - *a);
            }
            let rel = (diff.sqrt() / norm_vel(&add(&u0, &lift)).max(T::min_positive_value())).to_f64_lossy();
            history.push(rel);
            log::debug!("picard {picard}: relative change {rel:e}");
            if !rel.is_finite() || (history.len() > 5 && rel > 1e3 * history[0].max(1e-300)) {
                return Err(Error::PicardDiverged { iterations: picard, history });
            }
            if rel <= cfg.tol * 1e-2 {
                break;
            }
        }
    }
    let u = add(&u0, &lift);
    let weak = weak_residual_of(&grid, &pc, &u, &p, lambda)?;
    let residuals = ChannelResiduals {
        weak_residual: weak.to_f64_lossy(),
        divergence_residual: grid.divergence_residual(&u).to_f64_lossy(),
        picard_iterations: picard,
        picard_history: history,
        gmres_iterations,
        lambda: lambda.to_f64_lossy(),
    };
    Ok(ChannelSolution { gamma: gamma.clone(), config: cfg.clone(), grid, u, p, residuals })
}

fn add<T: Real>(a: &Vel<T>, b: &Vel<T>) -> Vel<T> {
    std::array::from_fn(|c| a[c].iter().zip(&b[c]).map(|(x, y)| *x + *y).collect())
}

/// `sup |a(u, phi) + lambda b(u, u, phi)| / ||grad phi||` over discretely
/// divergence-free `phi` vanishing on the wall and the lid.
pub fn weak_residual_of<T: Real>(grid: &MappedGrid<T>, pc: &FlatPreconditioner<T>, u: &Vel<T>, p: &[T], lambda: T) -> Result<T> {
    let zero = grid.zeros_vel();
    let r = grid.momentum_residual(u, p, &zero, lambda);
    dual_residual(grid, pc, &r)
}

/// Weak-form residual of the stored solution over the full discrete test space.
pub fn weak_residual<T: Real>(sol: &ChannelSolution<T>) -> Result<T> {
    let pc = sol.grid.preconditioner();
    weak_residual_of(&sol.grid, &pc, &sol.u, &sol.p, T::lit(sol.residuals.lambda))
}

impl<T: Real> ChannelSolution<T> {
    pub fn epsilon(&self) -> T {
        T::lit(self.config.epsilon)
    }

    pub fn period(&self) -> T {
        self.grid.period[0]
    }

    pub fn spacing(&self) -> [T; 2] {
        [
            self.grid.period[0] / T::from_usize_lossy(self.grid.n1),
            self.grid.period[1] / T::from_usize_lossy(self.grid.n2),
        ]
    }

    /// Same geometry with the velocity multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            out.u[c].iter_mut().for_each(|v| *v = *v * factor);
        }
        out.p.iter_mut().for_each(|v| *v = *v * factor);
        out
    }

    /// `int |grad u|^2` over one lateral period cell.
    pub fn dissipation(&self) -> T {
        self.grid.energy(&self.u, &self.u)
    }

    /// Work done by the lid: `U_top . (reaction force on the lid)`.
    pub fn lid_work(&self) -> T {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let au = self.grid.apply_a(&self.u);
        let nl = if self.residuals.lambda != 0.0 { Some(self.grid.advection(&self.u)) } else { None };
        let mut bt = self.grid.zeros_vel();
        self.grid.divergence_adjoint(&self.p, &mut bt);
        let mut w = T::zero();
        for c in 0..3 {
            for col in 0..nc {
                let i = nz * nc + col;
                let mut react = au[c][i] - bt[c][i];
                if let Some(n) = &nl {
                    react = react + n[c][i];
                }
                w = w + react * self.u[c][i];
            }
        }
        w
    }

    /// Lattice column index holding horizontal position `x` (must be a lattice point).
    pub fn column_at(&self, x: [T; 2]) -> Result<usize> {
        let h = self.spacing();
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let f1 = x[0] / h[0];
        let i1 = f1.round();
        if (f1 - i1).abs() > lit(1e-6) {
            return Err(Error::OutOfDomain(format!("x1 = {} is not a channel lattice abscissa", x[0])));
        }
        let i2 = if n2 == 1 {
            T::zero()
        } else {
            let f2 = x[1] / h[1];
            let i2 = f2.round();
            if (f2 - i2).abs() > lit(1e-6) {
                return Err(Error::OutOfDomain(format!("x2 = {} is not a channel lattice abscissa", x[1])));
            }
            i2
        };
        let m = |i: T, n: usize| -> usize { (i.to_isize().unwrap_or(0)).rem_euclid(n as isize) as usize };
        Ok(m(i2, n2) * n1 + m(i1, n1))
    }

    /// Node index `k` with `Z_k <= x3 <= Z_{k+1}` on column `col`.
    pub fn layer_on_column(&self, col: usize, x3: T) -> Result<usize> {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let z = |k: usize| self.grid.z[k * nc + col];
        let tol = lit::<T>(1e-12);
        if x3 < z(0) - tol || x3 > z(nz) + tol {
            return Err(Error::OutOfDomain(format!("x3 = {x3} outside ({}, {})", z(0), z(nz))));
        }
        let (mut lo, mut hi) = (0, nz);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if z(mid) <= x3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// Velocity on lattice column `col`, linear in the height within each layer.
    pub fn velocity_on_column(&self, col: usize, x3: T) -> Result<[T; 3]> {
        let nc = self.grid.ncol;
        let k = self.layer_on_column(col, x3)?;
        let (z0, z1) = (self.grid.z[k * nc + col], self.grid.z[(k + 1) * nc + col]);
        let t = ((x3 - z0) / (z1 - z0)).max(T::zero()).min(T::one());
        Ok(std::array::from_fn(|c| {
            let (a, b) = (self.u[c][k * nc + col], self.u[c][(k + 1) * nc + col]);
            a + t * (b - a)
        }))
    }

    fn mapped_height(&self, b: T, x3: T) -> T {
        // Z(s) = s + b (1 - beta(s)) is increasing; bisection
        let beta = |s: T| smoothstep_blend(s, T::lit(BLEND_START));
        let z = |s: T| s + b * (T::one() - beta(s));
        let (mut lo, mut hi) = (T::zero(), T::one());
        for _ in 0..80 {
            let mid = lit::<T>(0.5) * (lo + hi);
            if z(mid) < x3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lit::<T>(0.5) * (lo + hi)
    }

    /// Velocity and pressure at physical points: bilinear across lattice columns,
    /// linear in height within each column layer at the common mapped height.
    pub fn evaluate(&self, points: &[[T; 3]]) -> Result<Vec<([T; 3], T)>> {
        let h = self.spacing();
        let (n1, n2, nc, nz) = (self.grid.n1, self.grid.n2, self.grid.ncol, self.grid.nz);
        let eps = self.epsilon();
        let mut out = Vec::with_capacity(points.len());
        for x in points {
            let (gv, _) = self.gamma.eval_with_grad([x[0] / eps, x[1] / eps]);
            let b = eps * gv;
            if x[2] < b - lit(1e-12) || x[2] > T::one() + lit(1e-12) {
                return Err(Error::OutOfDomain(format!("point {x:?} outside the channel")));
            }
            let s = self.mapped_height(b, x[2]);
            let f1 = x[0] / h[0];
            let (i1, t1) = (f1.floor(), f1 - f1.floor());
            let (i2, t2) = if n2 == 1 {
                (T::zero(), T::zero())
            } else {
                let f2 = x[1] / h[1];
                (f2.floor(), f2 - f2.floor())
            };
            let wrap = |i: T, d: isize, n: usize| (i.to_isize().unwrap_or(0) + d).rem_euclid(n as isize) as usize;
            let mut v = [T::zero(); 3];
            let mut p = T::zero();
            let corners: &[(isize, isize, T)] = &[
                (0, 0, (T::one() - t1) * (T::one() - t2)),
                (1, 0, t1 * (T::one() - t2)),
                (0, 1, (T::one() - t1) * t2),
                (1, 1, t1 * t2),
            ];
            for &(d1, d2, w) in corners {
                if w == T::zero() {
                    continue;
                }
                let col = wrap(i2, d2, n2) * n1 + wrap(i1, d1, n1);
                let bc = self.grid.z[col];
                let zc = s + bc * (T::one() - smoothstep_blend(s, T::lit(BLEND_START)));
                let vc = self.velocity_on_column(col, zc)?;
                for c in 0..3 {
                    v[c] = v[c] + w * vc[c];
                }
                let k = self.layer_on_column(col, zc)?;
                let pk = self.p[k.min(nz - 1) * nc + col];
                p = p + w * pk;
            }
            out.push((v, p));
        }
        Ok(out)
    }

    /// Binary + JSON dump in the corrector layout (`v1, v2, v3, p` at the nodes).
    pub fn write_dump(&self, dir: &Path, stem: &str, extra: serde_json::Map<String, serde_json::Value>) -> Result<(PathBuf, PathBuf)> {
        let (nz, nc) = (self.grid.nz, self.grid.ncol);
        let mut bytes = Vec::with_capacity(4 * (nz + 1) * nc * 8);
        for c in 0..4 {
            for k in 0..=nz {
                for col in 0..nc {
                    let v = if c < 3 {
                        self.u[c][k * nc + col]
                    } else if k == 0 {
                        self.p[col]
                    } else if k == nz {
                        self.p[(nz - 1) * nc + col]
                    } else {
                        lit::<T>(0.5) * (self.p[(k - 1) * nc + col] + self.p[k * nc + col])
                    };
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
        side.insert("epsilon".into(), serde_json::json!(self.config.epsilon));
        side.insert("U_top".into(), serde_json::json!(self.config.u_top));
        side.insert("nonlinear".into(), serde_json::json!(self.config.nonlinear));
        side.insert("nper".into(), serde_json::json!(self.config.nper));
        side.insert("diagnostics".into(), serde_json::to_value(&self.residuals)?);
        side.extend(extra);
        let json = dir.join(format!("{stem}.json"));
        let mut f = std::fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &side)?;
        writeln!(f)?;
        Ok((bin, json))
    }
}
