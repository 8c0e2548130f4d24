use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use walllaw::analysis::{rate_fit, scale_scan, ChannelField, Column, CorrectorBasis, RateFit, ScaleReport};
use walllaw::cell::{energy_slip_identity, extend_to_halfspace, solve_corrector, SlipMatrix};
use walllaw::channel::solve_channel;
use walllaw::{CorrectorSolution, SpectralTrace, VERSION};

use crate::config::RunConfig;
use crate::Failure;

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub refine: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf, refine: bool) -> anyhow::Result<Self> {
        let hash = cfg.hash();
        let ctx = Self { cfg, hash, out, refine };
        ctx.write_json("config.json", &ctx.cfg)?;
        Ok(ctx)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Version and config hash, merged into every artifact.
    pub fn stamp(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("version".into(), json!(VERSION));
        m.insert("config_hash".into(), json!(self.hash));
        m
    }

    pub fn stamped(&self, body: Value) -> Value {
        let mut m = self.stamp();
        if let Value::Object(b) = body {
            m.extend(b);
        }
        Value::Object(m)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> anyhow::Result<()> {
        let path = self.path(name);
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn write_failure(&self, e: &anyhow::Error) {
        let body = self.stamped(json!({
            "status": "solver_failure",
            "error": format!("{e:#}"),
            "detail": e.chain().find_map(|c| c.downcast_ref::<walllaw::Error>()).map(|w| format!("{w:?}")),
        }));
        if let Err(err) = self.write_json("failure.json", &body) {
            log::error!("could not write failure.json: {err:#}");
        }
    }
}

fn solve_pair(ctx: &Context, gamma: &walllaw::BoundaryFunction, res: walllaw::cell::CellResolution) -> anyhow::Result<[CorrectorSolution; 2]> {
    let opts = ctx.cfg.solver_options();
    let (a, b) = rayon::join(|| solve_corrector(gamma, 1, res, opts), || solve_corrector(gamma, 2, res, opts));
    Ok([a.context("cell problem j = 1")?, b.context("cell problem j = 2")?])
}

fn fmt_vec(v: [f64; 3]) -> String {
    format!("({:.12e}, {:.12e}, {:.12e})", v[0], v[1], v[2])
}

pub fn corrector(ctx: &Context) -> Result<(), Failure> {
    let gamma = ctx.cfg.boundary()?;
    let res = ctx.cfg.cell_resolution(&gamma);
    let pair = solve_pair(ctx, &gamma, res)?;
    let delta = if ctx.refine {
        let coarse = solve_pair(ctx, &gamma, res.scaled(0.5))?;
        Some([0, 1].map(|j| {
            (0..3).map(|c| (pair[j].alpha[c] - coarse[j].alpha[c]).abs()).fold(0.0f64, f64::max)
        }))
    } else {
        None
    };
    let mut entries = Vec::new();
    for (i, c) in pair.iter().enumerate() {
        let mut extra = ctx.stamp();
        extra.insert("energy_identity".into(), serde_json::to_value(energy_slip_identity(c)).map_err(anyhow::Error::from)?);
        extra.insert("refinement_delta".into(), json!(delta.map(|d| d[i])));
        c.write_dump(&ctx.out, &format!("corrector_j{}", c.j), extra)?;
        let d = delta.map(|d| format!("{:.3e}", d[i])).unwrap_or_else(|| "n/a".into());
        println!("alpha_{} = {} ± {}", c.j, fmt_vec(c.alpha), d);
        entries.push(json!({
            "j": c.j,
            "alpha": c.alpha,
            "refinement_delta": delta.map(|d| d[i]),
            "diagnostics": c.diagnostics,
            "energy_identity": energy_slip_identity(c),
        }));
    }
    let summary = ctx.stamped(json!({
        "gamma_hash": gamma.hash(),
        "resolution": res,
        "correctors": entries,
    }));
    ctx.write_json("corrector_summary.json", &summary)?;
    Ok(())
}

pub fn slip_matrix(ctx: &Context) -> Result<(), Failure> {
    let gamma = ctx.cfg.boundary()?;
    let res = ctx.cfg.cell_resolution(&gamma);
    let [c1, c2] = solve_pair(ctx, &gamma, res)?;
    let m = SlipMatrix::from_alphas(c1.alpha, c2.alpha);
    let mut body = serde_json::to_value(&m).map_err(anyhow::Error::from)?;
    if let Value::Object(o) = &mut body {
        o.insert("positive_definite".into(), json!(m.is_positive_definite()));
        o.insert("alpha3".into(), json!([c1.alpha[2], c2.alpha[2]]));
        o.insert("gamma_hash".into(), json!(gamma.hash()));
        o.insert("resolution".into(), json!(res));
    }
    ctx.write_json("slip_matrix.json", &ctx.stamped(body))?;
    println!("M = [[{:.12e}, {:.12e}], [{:.12e}, {:.12e}]]", m.m[0][0], m.m[0][1], m.m[1][0], m.m[1][1]);
    println!("asymmetry = {:.3e}, eigenvalues = ({:.12e}, {:.12e})", m.asymmetry, m.eigenvalues[0], m.eigenvalues[1]);
    Ok(())
}

pub fn channel(ctx: &Context) -> Result<(), Failure> {
    let gamma = ctx.cfg.boundary()?;
    let cfg = ctx.cfg.channel_config(&gamma, ctx.cfg.channel.epsilon);
    let sol = solve_channel(&gamma, &cfg)?;
    let mut extra = ctx.stamp();
    let dissipation = sol.dissipation();
    let work = sol.lid_work();
    extra.insert("dissipation".into(), json!(dissipation));
    extra.insert("lid_work".into(), json!(work));
    if ctx.refine {
        let fine = solve_channel(&gamma, &walllaw::channel::ChannelConfig { resolution: cfg.resolution.refined(), ..cfg.clone() })?;
        extra.insert("refinement_delta".into(), json!({ "dissipation": (fine.dissipation() - dissipation).abs() }));
    }
    sol.write_dump(&ctx.out, "channel", extra)?;
    println!(
        "channel eps = {} dissipation = {:.12e} lid work = {:.12e} weak residual = {:.3e} picard = {}",
        cfg.epsilon, dissipation, work, sol.residuals.weak_residual, sol.residuals.picard_iterations
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EpsilonRun {
    epsilon: f64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Value>,
}

fn scan_epsilon(ctx: &Context, gamma: &walllaw::BoundaryFunction, pair: &[CorrectorSolution; 2], eps: f64) -> anyhow::Result<ScaleReport> {
    let rs: Vec<f64> = ctx.cfg.report.r_values.iter().copied().filter(|r| *r >= eps * (1.0 - 1e-12)).collect();
    let alpha = [pair[0].alpha, pair[1].alpha];
    let mut report = if ctx.cfg.report.manufactured {
        let field = CorrectorBasis::new(&pair[0], eps);
        scale_scan(&field, eps, &rs, [&pair[0], &pair[1]], alpha)?
    } else {
        let cfg = ctx.cfg.channel_config(gamma, eps);
        let per_cell = cfg.resolution.n1 / cfg.nper;
        if per_cell == 0 || pair[0].grid.n1 % per_cell != 0 {
            anyhow::bail!(
                "channel lattice ({} per cell) does not divide the corrector lattice ({})",
                per_cell,
                pair[0].grid.n1
            );
        }
        let sol = solve_channel(gamma, &cfg).with_context(|| format!("channel solve at eps = {eps}"))?;
        let field = ChannelField::new(&sol);
        scale_scan(&field, eps, &rs, [&pair[0], &pair[1]], alpha)?
    };
    report.config_hash = ctx.hash.clone();
    Ok(report)
}

pub fn walllaw_report(ctx: &Context) -> Result<(), Failure> {
    let gamma = ctx.cfg.boundary()?;
    let res = ctx.cfg.cell_resolution(&gamma);
    let pair = solve_pair(ctx, &gamma, res)?;
    let eps_list = ctx.cfg.report.epsilons.clone();
    let results: Vec<anyhow::Result<ScaleReport>> =
        eps_list.par_iter().map(|&eps| scan_epsilon(ctx, &gamma, &pair, eps)).collect();
    let r_imp = ctx.cfg.report.r_improvement;
    let mut runs = Vec::new();
    let mut improvement = Vec::new();
    let mut failed = None;
    for (i, (eps, r)) in eps_list.iter().zip(results).enumerate() {
        match r {
            Ok(report) => {
                let name = format!("report_eps{i}.csv");
                let mut f = BufWriter::new(File::create(ctx.path(&name)).map_err(anyhow::Error::from)?);
                report.write_csv(&mut f)?;
                f.flush().map_err(anyhow::Error::from)?;
                let lip = report.column(Column::LipschitzRatio);
                let spread = lip.iter().cloned().fold(f64::MIN, f64::max) / lip.iter().cloned().fold(f64::MAX, f64::min);
                if let Some(row) = report.rows.iter().find(|row| (row.r - r_imp).abs() <= 1e-12 * r_imp) {
                    if row.res_plain > 0.0 {
                        improvement.push((*eps, row.res_navier / row.res_plain));
                    }
                }
                runs.push(EpsilonRun {
                    epsilon: *eps,
                    status: "ok",
                    error: None,
                    csv: Some(name),
                    lipschitz_spread: Some(spread),
                    report: Some(report.summary_json()),
                });
            }
            Err(e) => {
                log::error!("eps = {eps}: {e:#}");
                runs.push(EpsilonRun {
                    epsilon: *eps,
                    status: "failed",
                    error: Some(format!("{e:#}")),
                    csv: None,
                    lipschitz_spread: None,
                    report: None,
                });
                failed.get_or_insert(e);
            }
        }
    }
    let fit: Option<RateFit> = {
        let (x, y): (Vec<f64>, Vec<f64>) = improvement.iter().cloned().unzip();
        rate_fit(&x, &y).ok()
    };
    let summary = ctx.stamped(json!({
        "gamma_hash": gamma.hash(),
        "manufactured": ctx.cfg.report.manufactured,
        "alpha": [pair[0].alpha, pair[1].alpha],
        "runs": runs,
        "improvement": {
            "r": r_imp,
            "epsilon": improvement.iter().map(|p| p.0).collect::<Vec<_>>(),
            "ratio": improvement.iter().map(|p| p.1).collect::<Vec<_>>(),
            "slope_vs_epsilon": fit,
        },
    }));
    ctx.write_json("walllaw_report.json", &summary)?;
    for run in &runs {
        println!("eps = {:.6}: {}", run.epsilon, run.status);
    }
    if let Some(f) = fit {
        println!("improvement slope vs eps at r = {r_imp}: {:.4} ± {:.4}", f.slope, f.band);
    }
    match failed {
        Some(e) => Err(Failure::from(e)),
        None => Ok(()),
    }
}

fn read_trace(path: &Path) -> anyhow::Result<SpectralTrace> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading trace {}", path.display()))?;
    Ok(SpectralTrace::read_json(&text)?)
}

pub fn halfspace_eval(ctx: &Context) -> Result<(), Failure> {
    let hs = &ctx.cfg.halfspace;
    let (eval, source) = match &hs.trace {
        Some(p) => {
            let trace = read_trace(p).map_err(Failure::Config)?;
            (walllaw::halfspace::halfspace_fourier_eval(&trace, &hs.heights)?, json!({ "trace": p }))
        }
        None => {
            let gamma = ctx.cfg.boundary()?;
            let res = ctx.cfg.cell_resolution(&gamma);
            let c = solve_corrector(&gamma, hs.j, res, ctx.cfg.solver_options())?;
            (extend_to_halfspace(&c, &hs.heights)?, json!({ "corrector": hs.j, "gamma_hash": gamma.hash() }))
        }
    };
    let lattice = hs.lattice.unwrap_or_else(|| {
        let t = &eval.velocity[0];
        let n = |k: usize| if k == 0 { 1 } else { 2 * k + 2 };
        [n(t.k1max()), n(t.k2max())]
    });
    let mut f = BufWriter::new(File::create(ctx.path("halfspace.csv")).map_err(anyhow::Error::from)?);
    eval.write_csv(&mut f, lattice[0], lattice[1])?;
    f.flush().map_err(anyhow::Error::from)?;
    let body = ctx.stamped(json!({ "heights": hs.heights, "lattice": lattice, "source": source }));
    ctx.write_json("halfspace.json", &body)?;
    println!("wrote {} heights to {}", hs.heights.len(), ctx.path("halfspace.csv").display());
    Ok(())
}
