use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use walllaw::analysis::navier_polynomial_field;
use walllaw::cell::{energy_slip_identity, slip_matrix, solve_corrector, CellResolution, SolverOptions};
use walllaw::channel::{solve_channel, ChannelConfig, ChannelResolution};
use walllaw::geometry::{flat_boundary, random_boundary, sinusoid_boundary};
use walllaw::halfspace::{dn_symbol, poisson_solve, GriddedDatum, HalfspaceExtension};
use walllaw::SpectralTrace;

use crate::commands::Context;
use crate::Failure;

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

type Outcome = anyhow::Result<(bool, String)>;

fn flat_wall() -> Outcome {
    let gamma = flat_boundary(-0.5f64, 16)?;
    let mut worst = 0.0f64;
    for j in [1, 2] {
        let c = solve_corrector(&gamma, j, CellResolution::groove(16, 16), SolverOptions::default())?;
        let mut want = [0.0; 3];
        want[j - 1] = 0.5;
        for k in 0..3 {
            worst = worst.max((c.alpha[k] - want[k]).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max |alpha - (0.5 e_j)| = {worst:.2e}")))
}

fn dn_coercivity(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let xi = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
        let w: [Complex<f64>; 3] = std::array::from_fn(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let m = dn_symbol(xi)?.matrix;
        let mut form = Complex::new(0.0, 0.0);
        for i in 0..3 {
            for k in 0..3 {
                form += w[i].conj() * m[i][k] * w[k];
            }
        }
        let a = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let w2: f64 = w.iter().map(|c| c.norm_sqr()).sum();
        worst = worst.max(a * w2 - form.re);
    }
    Ok((worst <= 1e-12, format!("max violation of Re<Mw,w> >= |xi||w|^2: {worst:.2e}")))
}

/// Gaussian bump on a wide periodic box against direct Poisson-kernel quadrature.
fn halfspace_oracle() -> Outcome {
    let (l, n) = (128.0f64, 1024usize);
    let h = l / n as f64;
    let amp = [1.0, 0.5, -0.3];
    let g = |x: [f64; 2]| {
        let e = (-(x[0] * x[0] + x[1] * x[1])).exp();
        amp.map(|a| a * e)
    };
    let datum = GriddedDatum::from_fn([-l / 2.0, -l / 2.0], h, n, n, g);
    let wrap = |k: usize| {
        let x = k as f64 * h;
        if x >= l / 2.0 {
            x - l
        } else {
            x
        }
    };
    let mut comps = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for j in 0..n {
        for i in 0..n {
            let v = g([wrap(i), wrap(j)]);
            for c in 0..3 {
                comps[c][j * n + i] = v[c];
            }
        }
    }
    let ext = HalfspaceExtension::new(&SpectralTrace::from_grid(n, n, [&comps[0], &comps[1], &comps[2]], l));
    let pts: Vec<[f64; 3]> =
        (0..20).map(|i| [-1.0 + 0.1 * i as f64, 0.7 - 0.07 * i as f64, 0.5 + 0.075 * i as f64]).collect();
    let direct = poisson_solve(&datum, &pts)?;
    let mut worst = 0.0f64;
    for (p, q) in pts.iter().zip(&direct) {
        let f = ext.velocity([p[0].rem_euclid(l), p[1].rem_euclid(l), p[2]]);
        let num: f64 = (0..3).map(|c| (f[c] - q[c]).powi(2)).sum::<f64>().sqrt();
        let den: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    Ok((worst <= 1e-3, format!("max relative difference over 20 points: {worst:.2e}")))
}

fn energy_identity() -> Outcome {
    let gamma = sinusoid_boundary(-0.5, 0.1, 64)?;
    let c = solve_corrector(&gamma, 1, CellResolution::groove(128, 48), SolverOptions::default())?;
    let e = energy_slip_identity(&c);
    Ok((e.mismatch <= 1e-3, format!("trace {:.10} vs energy {:.10}", e.alpha_from_trace, e.alpha_from_energy)))
}

fn couette() -> Outcome {
    let g0 = -0.5;
    let eps = 0.125;
    let gamma = flat_boundary(g0, 16)?;
    let cfg = ChannelConfig::new(eps, ChannelResolution::groove(32, 16));
    let sol = solve_channel(&gamma, &cfg)?;
    let wall = eps * g0;
    let pts: Vec<[f64; 3]> = (0..10).map(|i| [0.01 * i as f64, 0.0, wall + (1.0 - wall) * (i as f64 + 0.5) / 10.0]).collect();
    let mut worst = 0.0f64;
    for (p, (v, _)) in pts.iter().zip(sol.evaluate(&pts)?) {
        let exact = (p[2] - wall) / (1.0 - wall);
        worst = worst.max((v[0] - exact).abs()).max(v[1].abs()).max(v[2].abs());
    }
    Ok((worst <= 1e-10, format!("max deviation from linear shear: {worst:.2e}")))
}

fn slip_structure(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = random_boundary(&mut rng, -0.5, 0.15, 2, 16)?;
    let m = slip_matrix(&gamma, CellResolution::cube(16), SolverOptions::default())?;
    let ok = m.asymmetry <= 1e-4 * m.norm() && m.is_positive_definite();
    Ok((ok, format!("asymmetry {:.2e}, eigenvalues ({:.6}, {:.6})", m.asymmetry, m.eigenvalues[0], m.eigenvalues[1])))
}

fn navier_polynomial() -> Outcome {
    let alpha: [[f64; 3]; 2] = [[0.49, 0.01, 0.0], [0.01, 0.495, 0.0]];
    let m = [[alpha[0][0], alpha[1][0]], [alpha[0][1], alpha[1][1]]];
    let mut worst = 0.0f64;
    for j in [1, 2] {
        let p = navier_polynomial_field(j, 0.1, alpha[j - 1]);
        let r = p.navier_slip_residual(m);
        worst = worst.max(r[0].abs()).max(r[1].abs());
    }
    Ok((worst <= 1e-14, format!("Navier-slip residual {worst:.2e}")))
}

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let seed = ctx.cfg.seed;
    let suite: Vec<(&'static str, Box<dyn Fn() -> Outcome + Sync>)> = vec![
        ("flat_wall_slip", Box::new(flat_wall)),
        ("dn_coercivity", Box::new(move || dn_coercivity(seed))),
        ("halfspace_oracle", Box::new(halfspace_oracle)),
        ("energy_identity", Box::new(energy_identity)),
        ("flat_couette", Box::new(couette)),
        ("slip_matrix_structure", Box::new(move || slip_structure(seed))),
        ("navier_polynomial", Box::new(navier_polynomial)),
    ];
    let checks: Vec<Check> = suite
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check { name, passed: false, detail: format!("error: {e:#}") },
        })
        .collect();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    ctx.write_json("selftest.json", &ctx.stamped(json!({ "seed": seed, "checks": checks })))?;
    if failed > 0 {
        return Err(Failure::Selftest(failed));
    }
    Ok(())
}
