#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod expr;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use levyfp::ddsde::{representation_experiment, DdsdeConfig, ExperimentSetup};
use levyfp::fpe_residual::{integrability_report, residual};
use levyfp::fpme::{bump_profile, sample_initial, solve, FpmeParams};
use levyfp::levy::{assumption_report, ProbeGrid};
use levyfp::measure::{MeasureCurve, ParticleCloud, Snapshot};
use levyfp::operators::{Generator, PeriodicGrid, StandardGenerator, TestBank};
use levyfp::sde::stats::ks_one_sample;
use levyfp::sde::{
    dirac, gaussian_sampler, lyapunov_moment_audit, martingale_audit, simulate_paths, GeneratorTable, JumpSpec,
    SimConfig, StableNormalization, StableOracle, StableParams,
};

use config::{ExperimentConfig, InitConfig, JumpMode, ProfileConfig};
use expr::Expr;

#[derive(Parser)]
#[command(name = "levyfp", version, about = "Lévy-type Fokker-Planck experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Growth condition and integrability reports.
    Check,
    /// Weak-form residual of a measure curve.
    Residual,
    /// Particle simulation with audits.
    Simulate,
    /// Fractional porous medium solver.
    Fpme,
    /// Particle system against the porous medium solver.
    Ddsde,
}

enum Outcome {
    Pass,
    Fail(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail(why)) => {
            eprintln!("failed: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let path = cli.config.as_deref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write_text(&cli.out.join("config.toml"), &cfg.to_toml()?)?;
    match cli.command {
        Command::Check => check(&cfg, base, &cli.out),
        Command::Residual => residual_cmd(&cfg, base, &cli.out),
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Fpme => fpme(&cfg, &cli.out),
        Command::Ddsde => ddsde(&cfg, &cli.out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Output<'a, R: Serialize> {
    config: &'a ExperimentConfig,
    report: R,
}

fn write_json<R: Serialize>(path: &Path, cfg: &ExperimentConfig, report: R) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, &Output { config: cfg, report })?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn read_curve(path: &Path) -> Result<MeasureCurve<f64>> {
    let file = File::open(path).with_context(|| format!("opening curve {}", path.display()))?;
    MeasureCurve::read_csv(file).with_context(|| format!("reading curve {}", path.display()))
}

/// Standard normal on a tensor grid with spacing 1/2 over `[-4, 4]^d`.
fn standard_normal_cloud(dim: usize) -> Result<ParticleCloud<f64>> {
    let axis: Vec<f64> = (0..17).map(|i| -4.0 + 0.5 * i as f64).collect();
    let count = axis.len().pow(dim as u32);
    let mut positions = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for mut k in 0..count {
        let mut r2 = 0.0;
        for _ in 0..dim {
            let x = axis[k % axis.len()];
            k /= axis.len();
            positions.push(x);
            r2 += x * x;
        }
        weights.push((-0.5 * r2).exp());
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ParticleCloud::new(dim, positions, weights)?)
}

#[derive(Serialize)]
struct CheckOutput {
    condition: levyfp::levy::ConditionReport,
    integrability: levyfp::fpe_residual::IntegrabilityReport,
    passed: bool,
}

fn check(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let c = cfg.check.clone().unwrap_or_default();
    let kernel = cfg.kernel()?;
    let coeffs = cfg.coefficient_field()?;
    let (lo, hi) = (c.probe_min.ln(), c.probe_max.ln());
    let per_side = c.per_side.max(2);
    let mut points = vec![vec![0.0; cfg.dim]];
    for i in 0..per_side {
        let r = (lo + (hi - lo) * i as f64 / (per_side - 1) as f64).exp();
        for s in [r, -r] {
            let mut p = vec![0.0; cfg.dim];
            p[0] = s;
            points.push(p);
        }
    }
    let probes = ProbeGrid::new(c.times.clone(), points);
    let condition = assumption_report(&*kernel, &coeffs, &probes, &cfg.quadrature, c.trend_threshold)?;
    let curve = match &c.curve {
        Some(p) => read_curve(&base.join(p))?,
        None => MeasureCurve::constant(vec![0.0, c.horizon], Snapshot::Particles(standard_normal_cloud(cfg.dim)?))?,
    };
    let integrability = integrability_report(&curve, &coeffs, &*kernel, &c.radii, c.horizon, &cfg.quadrature)?;
    let passed = condition.passes() && integrability.all_finite();
    let why = if condition.violated {
        "growth condition VIOLATED".to_string()
    } else if condition.unbounded_trend {
        format!("unbounded trend (ratio {:.3})", condition.trend_ratio)
    } else {
        "integrability report has infinite entries".to_string()
    };
    write_json(&out.join("check.json"), cfg, CheckOutput { condition, integrability, passed })?;
    Ok(if passed { Outcome::Pass } else { Outcome::Fail(why) })
}

#[derive(Serialize)]
struct ResidualOutput {
    residual: levyfp::fpe_residual::ResidualReport,
    max_relative: f64,
    tolerance: f64,
    passed: bool,
}

fn residual_cmd(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    let Some(r) = &cfg.residual else { bail!("the residual command needs a [residual] section") };
    let curve = read_curve(&base.join(&r.curve))?;
    let times = if r.times.is_empty() { curve.times().to_vec() } else { r.times.clone() };
    let bank = TestBank::standard(cfg.dim);
    let report = residual(&curve, &cfg.coefficient_field()?, cfg.kernel()?, &bank, &times, &cfg.quadrature)?;
    report.write_csv(create(&out.join("residual.csv"))?)?;
    let max_relative = report.max_relative();
    let passed = max_relative <= r.tolerance;
    write_json(&out.join("residual.json"), cfg, ResidualOutput { residual: report, max_relative, tolerance: r.tolerance, passed })?;
    Ok(if passed {
        Outcome::Pass
    } else {
        Outcome::Fail(format!("relative residual {max_relative:e} exceeds {:e}", r.tolerance))
    })
}

#[derive(Serialize)]
struct SimulateOutput {
    exits: usize,
    martingale: Option<levyfp::sde::MartingaleAudit>,
    moment: Option<levyfp::sde::MomentReport>,
    ks: Option<levyfp::sde::stats::KsResult>,
    passed: bool,
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let Some(s) = &cfg.simulate else { bail!("the simulate command needs a [simulate] section") };
    let d = cfg.dim;
    if s.particles == 0 || s.steps == 0 || !(s.t_end > 0.0) {
        bail!("simulate needs particles > 0, steps > 0 and t_end > 0");
    }
    let coeffs = cfg.coefficient_field()?;
    let kernel = cfg.kernel()?;
    let init = match &s.init {
        InitConfig::Dirac { point } if point.len() == d => dirac(point.clone()),
        InitConfig::Gaussian { mean, variance } if mean.len() == d && *variance >= 0.0 => {
            gaussian_sampler(mean.clone(), *variance)
        }
        _ => bail!("simulate.init must have {d} coordinates and a non-negative variance"),
    };
    let stable = StableParams::new(cfg.kernel.alpha, d, StableNormalization::LevyMeasure)?;
    let jumps = match s.jumps {
        JumpMode::None => JumpSpec::None,
        JumpMode::Kernel => JumpSpec::Kernel(kernel.clone()),
        JumpMode::Stable => JumpSpec::MultiplicativeStable { params: stable, sigma: cfg.stable_sigma()? },
    };
    let times: Vec<f64> = (0..=s.steps).map(|k| s.t_end * k as f64 / s.steps as f64).collect();
    let sim = SimConfig { seed: cfg.seed, max_dt: s.max_dt, guard: s.guard, policy: s.policy };
    let paths = simulate_paths(&*init, &coeffs, &jumps, &times, s.particles, &sim)?;
    if s.write_marginals {
        paths.to_curve()?.write_csv(create(&out.join("marginals.csv"))?)?;
    }
    let mut failures = Vec::new();
    let martingale = match &s.martingale {
        None => None,
        Some(m) => {
            if d != 1 {
                bail!("the martingale audit is one-dimensional");
            }
            let gen: Arc<dyn Generator<f64>> = Arc::new(StandardGenerator::new(coeffs.clone(), kernel.clone(), &cfg.quadrature)?);
            let tables = TestBank::standard(1)
                .functions
                .into_iter()
                .map(|f| GeneratorTable::new(gen.clone(), f, -m.table_half_width, m.table_half_width, m.table_nodes))
                .collect::<levyfp::Result<Vec<_>>>()?;
            let audit = martingale_audit(&paths, &tables, &m.pairs, &m.xis, m.threshold)?;
            if !audit.passed {
                failures.push("martingale audit");
            }
            Some(audit)
        }
    };
    let moment = s.moment.as_ref().map(|m| lyapunov_moment_audit(&paths, m.psi));
    let ks = match &s.ks {
        None => None,
        Some(k) => {
            let InitConfig::Dirac { point } = &s.init else { bail!("the KS audit needs a Dirac initial law") };
            if d != 1 || s.jumps != JumpMode::Stable || coeffs.has_diffusion() || coeffs.has_drift() {
                bail!("the KS audit needs dim = 1, stable jumps and no diffusion or drift");
            }
            let kappa = Expr::parse(&cfg.kernel.kappa, d)?;
            if kappa.uses_jump() {
                bail!("the KS audit needs κ independent of z");
            }
            let intensity = kappa.eval(0.0, point, &[]);
            let oracle = StableOracle::at_time(&stable.with_intensity(intensity), s.t_end, 0.0)?;
            let last = paths.times.len() - 1;
            let shifted: Vec<f64> = (0..paths.n).map(|i| paths.position(last, i)[0] - point[0]).collect();
            let res = ks_one_sample(&shifted, |x| oracle.cdf(x));
            if res.p_value < k.significance {
                failures.push("KS audit");
            }
            Some(res)
        }
    };
    let passed = failures.is_empty();
    write_json(&out.join("simulate.json"), cfg, SimulateOutput { exits: paths.exits, martingale, moment, ks, passed })?;
    Ok(if passed { Outcome::Pass } else { Outcome::Fail(failures.join(", ")) })
}

fn profile(p: &ProfileConfig) -> Result<Box<dyn Fn(f64) -> f64>> {
    Ok(match p {
        ProfileConfig::Bump { radius } => Box::new(bump_profile(*radius)),
        ProfileConfig::Expression { expr } => {
            let e = Expr::parse(expr, 1)?;
            Box::new(move |x| e.eval(0.0, &[x], &[]))
        }
    })
}

struct FpmeRun {
    params: FpmeParams,
    grid: PeriodicGrid<f64>,
    times: Vec<f64>,
    phi: Box<dyn Fn(f64) -> f64>,
}

fn fpme_setup(cfg: &ExperimentConfig) -> Result<FpmeRun> {
    let Some(f) = &cfg.fpme else { bail!("this command needs an [fpme] section") };
    if cfg.dim != 1 {
        bail!("the porous medium solver is one-dimensional");
    }
    let params = FpmeParams::new(f.m, f.alpha)?;
    let grid = PeriodicGrid::centered(f.width, f.nodes)?;
    let mut times = f.times.clone();
    if times.first().is_none_or(|&t| t > 0.0) {
        times.insert(0, 0.0);
    }
    Ok(FpmeRun { params, grid, times, phi: profile(&f.init)? })
}

fn fpme(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = fpme_setup(cfg)?;
    let solver = cfg.fpme.as_ref().expect("checked").solver;
    let init = sample_initial(&run.grid, &*run.phi)?;
    let sol = solve(&init, run.params, &run.grid, &run.times, &solver)?;
    sol.write_csv(create(&out.join("fpme.csv"))?)?;
    write_json(&out.join("fpme.json"), cfg, &sol.metadata)?;
    Ok(Outcome::Pass)
}

fn ddsde(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = fpme_setup(cfg)?;
    let Some(s) = &cfg.ddsde else { bail!("the ddsde command needs a [ddsde] section") };
    let f = cfg.fpme.as_ref().expect("checked");
    let m = s.m.unwrap_or(f.m);
    FpmeParams::new(m, f.alpha)?;
    let config = DdsdeConfig {
        m,
        alpha: f.alpha,
        dt: s.dt,
        particles: s.particles,
        seed: cfg.seed,
        density_floor: s.density_floor,
        refresh: s.refresh,
        estimator: s.estimator,
    };
    let setup = ExperimentSetup {
        grid: run.grid,
        report_times: s.report_times.clone(),
        residual_spacing: s.residual_spacing,
        fpme: f.solver,
        quad: cfg.quadrature.clone(),
        bank: TestBank::standard(1),
    };
    let exp = representation_experiment(&*run.phi, run.params, &config, &setup)?;
    exp.solution.write_csv(create(&out.join("fpme.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&out.join("particles.csv"))?);
    w.write_record(["time", "x", "density"])?;
    for snap in &exp.snapshots {
        for (j, v) in snap.density.values.iter().enumerate() {
            w.write_record([snap.time.to_string(), run.grid.x(j).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    write_json(&out.join("ddsde.json"), cfg, &exp.report)?;
    Ok(Outcome::Pass)
}
