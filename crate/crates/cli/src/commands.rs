use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rs_tensor::assembly::{assemble_long, build_rs, Assembly, BuildReport};
use rs_tensor::formats::OverlapPolicy;
use rs_tensor::io::{save_reference, save_rs};
use rs_tensor::kernel::{
    grid_order, grid_quadrature, max_relative_error, project_kernel, split_rank, EntryRule, RadialKernel, DEFAULT_C0,
    DEFAULT_DELTA, DEFAULT_EXPANSION_TOL,
};
use rs_tensor::observables::{direct_energy, direct_forces, forces_fd, rs_energy};
use rs_tensor::particles::{save_particles, separation_distance, Box3, Grid3, ParticleSystem};
use rs_tensor::rankred::{side_svd, WeightPlacement};
use rs_tensor::scattered::{build_rs_operator, rs_matvec, solve_interpolation, InterpolationProblem};
use rs_tensor::{Error, Result};

use crate::output::{num, Json, Obj, Sink};
use crate::settings::Settings;

/// Grid for interpolation problems, where the unknowns are all `n^3` points.
const DEFAULT_INTERP_N: usize = 16;
const DEFAULT_SVALS_N: &str = "200,400,782";
const LEADING_SVALS: usize = 50;

fn policy_name(p: OverlapPolicy) -> String {
    match p {
        OverlapPolicy::Strict => "strict".into(),
        OverlapPolicy::Soft { cap } => format!("soft:{cap}"),
    }
}

fn report_json(r: &BuildReport) -> Obj {
    let storage = Obj::new()
        .with("long_floats", r.storage.long_floats)
        .with("short_floats", r.storage.short_floats)
        .with("weight_floats", r.storage.weight_floats)
        .with("count", r.storage.count)
        .with("bound", r.storage.bound);
    Obj::new()
        .with("particles", r.particles)
        .with("M", r.order)
        .with("max_displacement", r.max_displacement)
        .with("sigma", r.sigma)
        .with("R_l", r.long_terms)
        .with("R_s", r.short_terms)
        .with("gamma", r.gamma)
        .with("overlap", policy_name(r.policy))
        .with("unreduced_rank", r.unreduced_rank)
        .with("long_ranks", r.long_ranks.clone())
        .with("sweeps", r.sweeps)
        .with("residual_estimate", r.residual_estimate)
        .with("storage", storage)
}

fn build(settings: &Settings, sink: &mut Sink) -> Result<(ParticleSystem, Assembly)> {
    let sys = settings.system()?;
    let grid = settings.grid_for(sys.bbox())?;
    let cfg = settings.assembly(grid)?;
    let start = Instant::now();
    let built = build_rs(&sys, &cfg)?;
    sink.time("build_rs", start.elapsed().as_secs_f64());
    for (stage, secs) in &built.report.timings {
        sink.time(&format!("build_rs.{stage}"), *secs);
    }
    sink.record("build", report_json(&built.report));
    Ok((sys, built))
}

pub fn kernel(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let bbox = settings.bbox()?;
    let grid = settings.grid_for(bbox)?;
    let kernel = settings.kernel(RadialKernel::Newton)?;
    let c0 = settings.get_or("C0", DEFAULT_C0)?;
    let start = Instant::now();
    let order = match settings.order()? {
        Some(m) => m,
        None => grid_order(kernel, c0, grid, settings.get_or("expansion_tol", DEFAULT_EXPANSION_TOL)?)?,
    };
    let rule = grid_quadrature(kernel, order, c0, grid)?;
    let delta = settings.get_or("delta", DEFAULT_DELTA)?;
    let sigma: Option<f64> = settings.get("sigma")?;
    let long_terms = match (settings.get::<usize>("Rl")?, sigma) {
        (Some(r), _) if r > rule.len() => {
            return Err(Error::Config(format!("`Rl` = {r} exceeds the expansion rank {}", rule.len())))
        }
        (Some(r), _) => Some(r),
        (None, Some(s)) => Some(split_rank(&rule, s, delta, settings.get_or("criterion", Default::default())?)?),
        (None, None) => None,
    };
    let entry = settings.get_or::<EntryRule>("entry", EntryRule::default())?;
    let mut reference = project_kernel(&rule, grid, false, entry);
    if let Some(r) = long_terms {
        reference = reference.with_split(r)?;
    }
    sink.time("reference", start.elapsed().as_secs_f64());
    save_reference(sink.path("reference.rst"), &reference)?;

    let h = grid.step();
    let b = bbox.half_width();
    let mut vectors = String::from("k,part,t_k,i,x,value\n");
    let weights = reference.tensor().weights();
    for k in 0..reference.rank() {
        let part = match long_terms {
            Some(r) if k < r => "long",
            Some(_) => "short",
            None => "full",
        };
        let scale = weights[k].cbrt();
        for (i, v) in reference.side(k).iter().enumerate() {
            let x = -b + (i as f64 + 0.5) * h;
            vectors.push_str(&format!("{k},{part},{},{i},{},{}\n", num(rule.nodes()[k]), num(x), num(scale * v)));
        }
    }
    sink.write("kernel_vectors.csv", &vectors)?;

    let r_min = settings.get_or("r_min", h)?;
    let r_max = settings.get_or("r_max", b)?;
    let samples: usize = settings.get_or("samples", 1000)?;
    if !(r_min > 0.0 && r_max >= r_min) || samples < 2 {
        return Err(Error::Config("error table needs 0 < r_min <= r_max and samples >= 2".into()));
    }
    let mut table = String::from("r,exact,expansion,rel_err\n");
    for i in 0..samples {
        let r = (r_min.ln() + (r_max / r_min).ln() * i as f64 / (samples - 1) as f64).exp();
        let (exact, approx) = (kernel.value(r), rule.value(r));
        table.push_str(&format!("{},{},{},{}\n", num(r), num(exact), num(approx), num(((approx - exact) / exact).abs())));
    }
    sink.write("expansion_error.csv", &table)?;
    let max_err = max_relative_error(&rule, r_min, r_max, samples)?;

    let summary = Obj::new()
        .with("n", grid.n())
        .with("b", b)
        .with("h", h)
        .with("M", order)
        .with("C0", c0)
        .with("h_M", rule.step())
        .with("R", rule.len())
        .with("sigma", sigma)
        .with("delta", delta)
        .with("R_l", long_terms)
        .with("R_s", long_terms.map(|r| rule.len() - r))
        .with("r_min", r_min)
        .with("r_max", r_max)
        .with("max_rel_err", max_err);
    sink.write("kernel.json", &summary.render())?;
    let split = long_terms.map_or(String::new(), |r| format!(", R_l={r}, R_s={}", rule.len() - r));
    println!("R={}{split}, max rel err {max_err:.3e} on [{r_min}, {r_max}]", rule.len());
    Ok(())
}

pub fn gen(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let sys = settings.system()?;
    save_particles(&sys, sink.path("particles.txt"))?;
    let sep = if sys.len() > 1 { Some(separation_distance(&sys)?) } else { None };
    let summary = Obj::new().with("N", sys.len()).with("b", sys.bbox().half_width()).with("separation", sep);
    sink.write("gen.json", &summary.render())?;
    println!("{} particles, separation {}", sys.len(), sep.map_or("n/a".into(), |s| format!("{s:.6}")));
    Ok(())
}

pub fn assemble(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let (_, built) = build(settings, sink)?;
    save_rs(sink.path("rs.rst"), &built.rs)?;
    let n = built.rs.grid().n();
    let count: usize = settings.get_or("probes", 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed()?);
    rng.set_stream(2);
    let mut probes = String::from("i,j,k,value\n");
    for _ in 0..count {
        let i = [0; 3].map(|_| rng.gen_range(0..n));
        probes.push_str(&format!("{},{},{},{}\n", i[0], i[1], i[2], num(built.rs.eval(i)?)));
    }
    sink.write("probes.csv", &probes)?;
    let summary = report_json(&built.report).with("long_kind", built.rs.long().kind());
    sink.write("assemble.json", &summary.render())?;
    println!(
        "RS tensor: R_l={}, ranks {:?}, {} stored floats",
        built.report.long_terms, built.report.long_ranks, built.report.storage.stored
    );
    Ok(())
}

pub fn energy(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let (sys, built) = build(settings, sink)?;
    let report = rs_energy(&built.rs, &built.indexed)?;
    sink.time("rs_energy", report.seconds);
    let start = Instant::now();
    let exact = direct_energy(&sys)?;
    sink.time("direct_energy", start.elapsed().as_secs_f64());
    let snapped = direct_energy(built.indexed.base())?;
    let report = report.with_exact(exact);
    let summary = Obj::new()
        .with("N", sys.len())
        .with("E_N", report.energy)
        .with("E_exact", exact)
        .with("E_exact_snapped", snapped)
        .with("abs_err", report.abs_err)
        .with("rel_err", report.rel_err)
        .with("flagged", report.flagged)
        .with("build", report_json(&built.report));
    sink.write("energy.json", &summary.render())?;
    println!("E_N = {:.10}, exact {:.10}, rel err {:.3e}", report.energy, exact, report.rel_err.unwrap_or(f64::NAN));
    Ok(())
}

pub fn forces(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let (_, built) = build(settings, sink)?;
    let start = Instant::now();
    let field = assemble_long(&built.reference, &built.indexed, built.reference.rank())?;
    let fd = forces_fd(&field, &built.indexed)?;
    sink.time("forces_fd", start.elapsed().as_secs_f64());
    let exact = direct_forces(built.indexed.base())?;
    let mut csv = String::from("j,fx,fy,fz,direct_x,direct_y,direct_z\n");
    let (mut max_abs, mut max_rel): (f64, f64) = (0.0, 0.0);
    for (a, e) in fd.iter().zip(&exact) {
        let f = a.force;
        let d = e.force;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            a.index,
            num(f[0]),
            num(f[1]),
            num(f[2]),
            num(d[0]),
            num(d[1]),
            num(d[2])
        ));
        let err = (0..3).map(|l| (f[l] - d[l]).abs()).fold(0.0, f64::max);
        max_abs = max_abs.max(err);
        if e.norm() > 0.0 {
            max_rel = max_rel.max(err / e.norm());
        }
    }
    sink.write("forces.csv", &csv)?;
    let summary = Obj::new()
        .with("N", fd.len())
        .with("max_abs_err", max_abs)
        .with("max_rel_err", max_rel)
        .with("build", report_json(&built.report));
    sink.write("forces.json", &summary.render())?;
    println!("{} forces, max component error {max_abs:.3e} ({max_rel:.3e} of |F|)", fd.len());
    Ok(())
}

/// Spectra of the unreduced long part for a sweep over cluster sizes.
pub fn svals(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let sizes: Vec<usize> = match settings.list("N")? {
        Some(v) => v,
        None => Settings::parse_file(&format!("N = {DEFAULT_SVALS_N}"))?.list("N")?.unwrap_or_default(),
    };
    if settings.raw("particles").is_some() || settings.raw("lattice").is_some() {
        return Err(Error::Config("svals sweeps random clusters; use `N` only".into()));
    }
    // One split for the whole sweep: the cluster guarantee, not each cluster's own separation.
    let mut fixed = settings.clone();
    if fixed.raw("Rl").is_none() && fixed.raw("sigma").is_none() {
        let min_sep: f64 = fixed.get_or("min_sep", crate::settings::DEFAULT_MIN_SEP)?;
        fixed.set("sigma", min_sep.to_string());
    }
    let mut leading: Vec<Vec<f64>> = Vec::new();
    let mut runs = Vec::new();
    for &count in &sizes {
        let mut one = fixed.clone();
        one.set("N", count.to_string());
        let sys = one.system()?;
        let grid = one.grid_for(sys.bbox())?;
        let mut cfg = one.assembly(grid)?;
        cfg.reduce = false;
        cfg.reduction_threshold = usize::MAX;
        // only the long part is used here
        cfg.overlap = OverlapPolicy::Soft { cap: usize::MAX };
        let start = Instant::now();
        let built = build_rs(&sys, &cfg)?;
        let windowed = assemble_long(&built.reference, &built.indexed, built.report.long_terms)?;
        let spectrum = side_svd(&windowed, WeightPlacement::FirstMode)?;
        sink.time(&format!("svals.N{count}"), start.elapsed().as_secs_f64());
        sink.write(&format!("svals_N{count}.csv"), &spectrum.to_csv())?;
        let mode1 = &spectrum.modes[0].sigma;
        leading.push(mode1.iter().take(LEADING_SVALS).copied().collect());
        runs.push(
            Obj::new()
                .with("N", count)
                .with("R_l", built.report.long_terms)
                .with("M", built.report.order)
                .with("sigma_1", mode1.first().copied()),
        );
    }
    let spread = |scaled: bool| -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..leading.len() {
            for b in a + 1..leading.len() {
                let (x, y) = (&leading[a], &leading[b]);
                let (sx, sy) = if scaled { (x[0], y[0]) } else { (1.0, 1.0) };
                for (p, q) in x.iter().zip(y) {
                    let (p, q) = (p / sx, q / sy);
                    worst = worst.max((p - q).abs() / p.abs().max(q.abs()));
                }
            }
        }
        worst
    };
    let summary = Obj::new()
        .with("runs", Json::Arr(runs.into_iter().map(Json::Obj).collect()))
        .with("leading", LEADING_SVALS)
        .with("max_pairwise_rel_diff", spread(false))
        .with("max_pairwise_rel_diff_normalized", spread(true));
    sink.write("svals.json", &summary.render())?;
    println!("{} spectra, leading-{LEADING_SVALS} spread {:.3e} (normalized {:.3e})", sizes.len(), spread(false), spread(true));
    Ok(())
}

pub fn interp(settings: &Settings, sink: &mut Sink) -> Result<()> {
    let kernel = settings.kernel(RadialKernel::Gaussian { lambda: 1.0 })?;
    let bbox: Box3 = settings.bbox()?;
    let grid = Grid3::new(settings.get_or("n", DEFAULT_INTERP_N)?, bbox)?;
    let c0 = settings.get_or("C0", DEFAULT_C0)?;
    let order = match settings.order()? {
        Some(m) => m,
        None => grid_order(kernel, c0, grid, settings.get_or("expansion_tol", DEFAULT_EXPANSION_TOL)?)?,
    };
    let rule = grid_quadrature(kernel, order, c0, grid)?;
    let long_terms = settings.get_or("Rl", rule.len())?;
    let gamma = settings.get_or("gamma", 1)?;
    let start = Instant::now();
    let op = build_rs_operator(&rule, grid, long_terms, gamma, None)?;
    sink.time("operator", start.elapsed().as_secs_f64());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed()?);
    rng.set_stream(3);
    let samples: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let prob = InterpolationProblem {
        samples: samples.clone(),
        kernel,
        tolerance: settings.get_or("tol", 1e-10)?,
        max_iterations: settings.get_or("max_iter", 1000)?,
    };
    let start = Instant::now();
    let cg = solve_interpolation(&op, &prob)?;
    sink.time("cg", start.elapsed().as_secs_f64());
    let applied = rs_matvec(&op, &cg.coefficients)?;
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let residual = norm(&mut applied.iter().zip(&samples).map(|(a, f)| a - f)) / norm(&mut samples.iter().copied());
    let n = grid.n();
    let mut coeffs = String::from("index,i,j,k,value\n");
    for (a, c) in cg.coefficients.iter().enumerate() {
        coeffs.push_str(&format!("{a},{},{},{},{}\n", a / (n * n), (a / n) % n, a % n, num(*c)));
    }
    sink.write("coefficients.csv", &coeffs)?;
    let mut res = String::from("iteration,rel_residual\n");
    for (k, r) in cg.residuals.iter().enumerate() {
        res.push_str(&format!("{k},{}\n", num(*r)));
    }
    sink.write("residuals.csv", &res)?;
    let summary = Obj::new()
        .with("unknowns", op.len())
        .with("R", rule.len())
        .with("R_l", long_terms)
        .with("gamma", gamma)
        .with("iterations", cg.residuals.len().saturating_sub(1))
        .with("converged", cg.converged)
        .with("rel_residual", residual);
    sink.write("interp.json", &summary.render())?;
    if !cg.converged {
        return Err(Error::Solver(format!("CG did not converge in {} iterations", prob.max_iterations)));
    }
    println!("CG converged in {} iterations, relative residual {residual:.3e}", cg.residuals.len() - 1);
    Ok(())
}
