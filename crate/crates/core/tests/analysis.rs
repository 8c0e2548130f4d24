use proptest::prelude::*;
use walllaw::analysis::{
    box_average_l2, caccioppoli_ratio, corrector_scaling_check, fit_slip_coefficients, rate_fit, scale_scan,
    BoxField, BoxQuadrature, ChannelField, Column, CorrectorBasis, WallLattice,
};
use walllaw::cell::{solve_corrector, CellResolution, SolverOptions};
use walllaw::channel::{solve_channel, ChannelConfig, ChannelResolution};
use walllaw::geometry::{flat_boundary, sinusoid_boundary};
use walllaw::{CorrectorSolution, Error, Result};

/// `x3 e1` above a wall given by its heights on a groove lattice.
struct Shear {
    h: f64,
    walls: Vec<f64>,
    scale: f64,
}

impl BoxField<f64> for Shear {
    fn value(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        Ok([self.scale * x[2], 0.0, 0.0])
    }

    fn gradient(&self, _x: [f64; 3]) -> Result<[[f64; 3]; 3]> {
        let mut g = [[0.0; 3]; 3];
        g[0][2] = self.scale;
        Ok(g)
    }

    fn lattice(&self) -> Option<WallLattice<f64>> {
        Some(WallLattice { spacing: [self.h, self.h], n: [self.walls.len(), 1], groove: true, walls: self.walls.clone() })
    }
}

fn shear(n: usize, wall: impl Fn(f64) -> f64) -> Shear {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    Shear { h, walls: (0..n).map(|i| wall(i as f64 * h)).collect(), scale: 1.0 }
}

fn correctors(n1: usize) -> [CorrectorSolution; 2] {
    let gamma = sinusoid_boundary(-0.5f64, 0.15, 64).unwrap();
    [1, 2].map(|j| solve_corrector(&gamma, j, CellResolution::groove(n1, 24), SolverOptions::default()).unwrap())
}

fn flat_couette(g0: f64, eps: f64) -> walllaw::ChannelSolution {
    let mut cfg = ChannelConfig::new(eps, ChannelResolution::groove(32, 16));
    cfg.nper = 2;
    solve_channel(&flat_boundary(g0, 16).unwrap(), &cfg).unwrap()
}

#[test]
fn flat_box_average_of_linear_shear() {
    let f = shear(32, |_| 0.0);
    for m in [1, 3, 10, 40] {
        let r = (m as f64 + 0.5) * f.h;
        let a = box_average_l2(&f, r).unwrap();
        assert_eq!(a.snap, 0.0);
        assert!((a.volume - 4.0 * r * r * r).abs() < 1e-12 * a.volume);
        assert!((a.value - r / 3f64.sqrt()).abs() < 1e-13 * r, "m={m}");
    }
}

#[test]
fn bumpy_box_average_matches_column_sum() {
    let f = shear(24, |x| -0.3 + 0.2 * x.cos() + 0.05 * (3.0 * x).sin());
    for m in [2usize, 7, 30] {
        let r = (m as f64 + 0.5) * f.h;
        let mut s = 0.0;
        for i in -(m as isize)..=m as isize {
            let w = f.walls[i.rem_euclid(24) as usize];
            s += f.h * 2.0 * r * ((w + r).powi(3) - w.powi(3)) / 3.0;
        }
        let vol = 2.0 * r * 2.0 * r * r;
        let a = box_average_l2(&f, r).unwrap();
        assert!((a.value - (s / vol).sqrt()).abs() < 1e-12, "m={m}");
    }
}

#[test]
fn snapping_is_bounded_by_half_a_cell() {
    let f = shear(32, |_| 0.0);
    for r in [0.3, 0.77, 1.9] {
        let q = BoxQuadrature::new(&f, &[], r).unwrap();
        assert!(q.snap <= 0.5 * f.h + 1e-15);
        assert!(q.column_count() <= 32);
    }
    assert!(matches!(BoxQuadrature::new(&f, &[], 0.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn manufactured_field_recovers_its_coefficients() {
    let c = correctors(32);
    let eps = 0.05;
    for amp in [1.0, -0.7, 2.5] {
        let f = CorrectorBasis::manufactured(&c[0], eps, amp);
        for r in [0.4, 0.1, 0.03] {
            let fit = fit_slip_coefficients(&f, eps, r, [&c[0], &c[1]]).unwrap();
            assert!((fit.c_lsq[0] - amp).abs() < 1e-10 && fit.c_lsq[1].abs() < 1e-10, "{fit:?}");
        }
    }
}

#[test]
fn flat_couette_has_exact_slip_statistics() {
    let (g0, eps) = (-0.4, 0.125);
    let sol = flat_couette(g0, eps);
    let gamma = flat_boundary(g0, 16).unwrap();
    let c = [1, 2].map(|j| solve_corrector(&gamma, j, CellResolution::groove(16, 16), SolverOptions::default()).unwrap());
    let alpha = [c[0].alpha, c[1].alpha];
    let wall = eps * g0;
    let field = ChannelField::new(&sol);
    let rs = [0.6, 0.3, 0.15, 0.075];
    let rep = scale_scan(&field, eps, &rs, [&c[0], &c[1]], alpha).unwrap();
    for row in &rep.rows {
        assert!((row.c_grad[0] - 1.0 / (1.0 - wall)).abs() < 1e-10, "{row:?}");
        assert!(row.c_grad[1].abs() < 1e-12);
        assert!((row.c_lsq[0] - 1.0 / (1.0 - wall)).abs() < 1e-10);
        assert!(row.res_navier < 1e-10 && row.res_corrector < 1e-10 && row.res_navier_grad < 1e-10);
        // x3 e1 alone cannot absorb the wall offset
        assert!(row.res_plain > 1e-3);
        assert_eq!(row.small_scale, row.r < eps);
    }
    let plain = rep.column(Column::ALL[0]);
    assert_eq!(plain.len(), rs.len());
    assert_eq!(rep.r_values(), rs.to_vec());
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), rs.len() + 1);
    assert_eq!(rep.summary_json()["epsilon"], eps);
}

#[test]
fn fits_are_homogeneous_in_the_field() {
    let gamma = sinusoid_boundary(-0.5f64, 0.15, 64).unwrap();
    let mut cfg = ChannelConfig::new(0.125, ChannelResolution::groove(64, 24));
    cfg.nper = 2;
    let sol = solve_channel(&gamma, &cfg).unwrap();
    let c = correctors(32);
    let twice = sol.scaled(2.0);
    for r in [0.5, 0.2] {
        let a = fit_slip_coefficients(&ChannelField::new(&sol), 0.125, r, [&c[0], &c[1]]).unwrap();
        let b = fit_slip_coefficients(&ChannelField::new(&twice), 0.125, r, [&c[0], &c[1]]).unwrap();
        for k in 0..2 {
            assert!((b.c_lsq[k] - 2.0 * a.c_lsq[k]).abs() < 1e-10 * (1.0 + a.c_lsq[k].abs()));
            assert!((b.c_grad[k] - 2.0 * a.c_grad[k]).abs() < 1e-10 * (1.0 + a.c_grad[k].abs()));
        }
    }
}

#[test]
fn rate_fit_examples() {
    let x = [1.0, 0.5, 0.25, 0.125, 0.0625];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
    let f = rate_fit(&x, &y).unwrap();
    assert!((f.slope - 1.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
    assert_eq!(f.points, 5);
    // noisy data: the band covers the true slope
    let noisy: Vec<f64> = y.iter().zip([1.02, 0.98, 1.01, 0.99, 1.0]).map(|(a, b)| a * b).collect();
    let f = rate_fit(&x, &noisy).unwrap();
    assert!(f.band > 0.0 && (f.slope - 1.5).abs() < f.band);
    assert!(matches!(rate_fit(&x[..3], &y[..3]), Err(Error::InvalidArgument(_))));
    assert!(matches!(rate_fit(&x, &y[..4]), Err(Error::InvalidArgument(_))));
    assert!(matches!(rate_fit(&[1.0, -1.0, 2.0, 3.0], &[1.0; 4]), Err(Error::NonPositiveData(1))));
}

#[test]
fn caccioppoli_records() {
    let f = shear(256, |_| 0.0);
    let (rho, r) = (4.5 * f.h, 10.5 * f.h);
    let rec = caccioppoli_ratio(&f, rho, r).unwrap();
    let d = r - rho;
    let l2 = 4.0 * r.powi(5) / 3.0;
    assert!((rec.lhs - 4.0 * rho.powi(3)).abs() < 1e-12);
    assert!((rec.rhs_terms[0] - l2 / (d * d)).abs() < 1e-12 * rec.rhs_terms[0]);
    assert!((rec.rhs_terms[1] - l2.powi(3) / d.powi(4)).abs() < 1e-12 * rec.rhs_terms[1]);
    assert!((rec.implied_k - rec.lhs / (rec.rhs_terms[0] + rec.rhs_terms[1])).abs() < 1e-15);

    let zero = Shear { scale: 0.0, ..shear(256, |_| 0.0) };
    let rec = caccioppoli_ratio(&zero, rho, r).unwrap();
    assert_eq!((rec.lhs, rec.implied_k), (0.0, 0.0));

    assert!(matches!(caccioppoli_ratio(&f, rho, rho + f.h), Err(Error::DegenerateBox { .. })));
    assert!(matches!(caccioppoli_ratio(&f, r, rho), Err(Error::InvalidArgument(_))));
    assert!(matches!(caccioppoli_ratio(&f, 0.5, 1.5), Err(Error::InvalidArgument(_))));
}

#[test]
fn flat_wall_corrector_has_no_gradient() {
    let gamma = flat_boundary(-0.3f64, 8).unwrap();
    let c = solve_corrector(&gamma, 1, CellResolution::groove(16, 16), SolverOptions::default()).unwrap();
    let chk = corrector_scaling_check(&c, &[0.1, 0.05, 0.025, 0.0125], 0.4).unwrap();
    assert!(chk.gradient_integral.iter().all(|g| g.abs() < 1e-20), "{chk:?}");
    // v = alpha e1 is constant, so the L2 integral is alpha^2 |B_r| on the snapped box
    let (a, r) = (c.alpha[0], 0.4);
    for (eps, l2) in chk.epsilon.iter().zip(&chk.l2_integral) {
        let h = 2.0 * std::f64::consts::PI * eps / 16.0;
        let rs = ((r / h - 0.5).round() + 0.5) * h;
        assert!((l2 - a * a * 2.0 * rs * 2.0 * r * r).abs() < 1e-10 * l2, "eps={eps}");
    }
    assert!(matches!(corrector_scaling_check(&c, &[0.5], 0.4), Err(Error::InvalidArgument(_))));
}

#[test]
fn scan_requires_decreasing_radii() {
    let sol = flat_couette(-0.4, 0.125);
    let gamma = flat_boundary(-0.4f64, 16).unwrap();
    let c = [1, 2].map(|j| solve_corrector(&gamma, j, CellResolution::groove(16, 16), SolverOptions::default()).unwrap());
    let field = ChannelField::new(&sol);
    let r = scale_scan(&field, 0.125, &[0.2, 0.4], [&c[0], &c[1]], [c[0].alpha, c[1].alpha]);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

/// A corrector-basis field plus `k x3^2 e1`, which lies outside the basis span.
struct OffBasis<'a> {
    base: CorrectorBasis<'a, f64>,
    k: f64,
}

impl BoxField<f64> for OffBasis<'_> {
    fn value(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let mut v = self.base.value(x)?;
        v[0] += self.k * x[2] * x[2];
        Ok(v)
    }

    fn gradient(&self, x: [f64; 3]) -> Result<[[f64; 3]; 3]> {
        let mut g = self.base.gradient(x)?;
        g[0][2] += 2.0 * self.k * x[2];
        Ok(g)
    }

    fn breakpoints(&self, x: [f64; 2], lo: f64, hi: f64, out: &mut Vec<f64>) -> Result<()> {
        self.base.breakpoints(x, lo, hi, out)
    }

    fn lattice(&self) -> Option<WallLattice<f64>> {
        self.base.lattice()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn least_squares_is_a_minimum(d1 in -0.05f64..0.05, d2 in -0.05f64..0.05, amp in 0.2f64..2.0, k in 0.5f64..3.0) {
        let c = correctors(16);
        let eps = 0.1;
        let field = OffBasis { base: CorrectorBasis::manufactured(&c[1], eps, amp), k };
        let r = 0.3;
        let fit = fit_slip_coefficients(&field, eps, r, [&c[0], &c[1]]).unwrap();
        let b = [CorrectorBasis::new(&c[0], eps), CorrectorBasis::new(&c[1], eps)];
        let q = BoxQuadrature::new(&field, &[&b[0], &b[1]], r).unwrap();
        let w = q.weights();
        let u = q.sample(&field).unwrap();
        let p = [q.sample(&b[0]).unwrap(), q.sample(&b[1]).unwrap()];
        let res = |c: [f64; 2]| -> f64 {
            (0..w.len()).map(|i| w[i] * (0..3).map(|m| (u[i][m] - c[0] * p[0][i][m] - c[1] * p[1][i][m]).powi(2)).sum::<f64>()).sum()
        };
        let best = fit.c_lsq;
        prop_assert!(res(best) > 0.0);
        prop_assert!(res(best) <= res([best[0] + d1, best[1] + d2]) * (1.0 + 1e-12));
        prop_assert!(res(best) <= res([best[0] + d1, best[1]]) * (1.0 + 1e-12));
    }
}
