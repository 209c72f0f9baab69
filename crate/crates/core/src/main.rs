use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use delayflow::analysis::emit::{self, Format, Table, TableWriter};
use delayflow::analysis::kernel::KERNEL_HEADER;
use delayflow::analysis::summary::{self, Criterion, Summary};
use delayflow::analysis::{delta_a_refinement, epsilon_sweep, initial_layer_report, kernel_sweep, SweepOptions};
use delayflow::density::{run_density_observed, InitMode};
use delayflow::flow::{lagrange_multiplier, run_flow_observed, FlowFrame, MinimizerOptions};
use delayflow::grid::{Grids, NodeField, SpaceGrid};
use delayflow::harmonic::{flow_sample_times, run_limit};
use delayflow::limit_density::limit_moment_series;
use delayflow::model::{load_problem, parse_config, validate_hypotheses, ConfigError, Setup};
use delayflow::{Error, Result};

#[derive(Parser)]
#[command(name = "delayflow", version, about = "Delayed minimizing movements with age-structured memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in [run]; default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// Keep every N-th time step in trajectories (overrides `stride` in [run]).
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Worker threads for sweeps and per-node loops. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the standing hypotheses only.
    Validate,
    /// Bond density run.
    Density,
    /// Delayed flow run (density in lockstep).
    Flow,
    /// Friction-limit run sampled at the flow's time points.
    Limit,
    /// Initial-layer decay fit.
    Layer,
    /// Convergence sweep over `eps_list`.
    SweepEps,
    /// Age-step refinement over `da_list` against the constant-rate oracle.
    SweepDa,
    /// Transposed kernel against its limit over `eps_list`.
    Kernel,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Density => "density",
            Command::Flow => "flow",
            Command::Limit => "limit",
            Command::Layer => "layer",
            Command::SweepEps => "sweep-eps",
            Command::SweepDa => "sweep-da",
            Command::Kernel => "kernel",
        }
    }
}

struct Ctx {
    setup: Setup,
    out: PathBuf,
    format: Format,
    stride: usize,
}

impl Ctx {
    fn emit(&self, table: &Table, stem: &str) -> Result<()> {
        emit::emit(table, &self.out, stem, self.format).map(|_| ())
    }
}

/// Criteria plus the error that stopped the run, if any. Tables are
/// written before this is returned, so a failure still leaves partial output.
type Outcome = (Vec<Criterion>, Option<Error>);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => {
                eprintln!("error: cannot start {n} threads: {e}");
                1
            }
        },
        None => run(&cli),
    };
    ExitCode::from(code)
}

fn run(cli: &Cli) -> u8 {
    let Some(path) = &cli.config else {
        eprintln!("error: --config PATH is required");
        return 1;
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", path.display());
            return 1;
        }
    };
    let out_of = |setup: Option<&Setup>| {
        cli.out
            .clone()
            .or_else(|| setup.and_then(|s| s.run.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    };

    if cli.command == Command::Validate {
        let setup = match parse_config(&text) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        };
        let report = validate_hypotheses(&setup.problem, &setup.numerics);
        let s = Summary::new("validate", summary::validation_criteria(&report));
        return finish(&s, &out_of(Some(&setup)));
    }

    let setup = match load_problem(&text) {
        Ok(s) => s,
        Err(e) => {
            let e = Error::from(e);
            eprintln!("error: {e}");
            let code = e.exit_code() as u8;
            if code == 2 {
                let _ = write_summary(&Summary::failed(cli.command.name(), Vec::new(), e.to_string()), &out_of(None));
            }
            return code;
        }
    };
    let ctx = Ctx {
        out: out_of(Some(&setup)),
        format: cli.format,
        stride: cli.stride.unwrap_or(setup.run.stride).max(1),
        setup,
    };
    let result = match cli.command {
        Command::Validate => unreachable!(),
        Command::Density => density(&ctx),
        Command::Flow => flow(&ctx),
        Command::Limit => limit(&ctx),
        Command::Layer => layer(&ctx),
        Command::SweepEps => sweep_eps(&ctx),
        Command::SweepDa => sweep_da(&ctx),
        Command::Kernel => kernel(&ctx),
    };
    let name = cli.command.name();
    match result {
        Ok((criteria, None)) => finish(&Summary::new(name, criteria), &ctx.out),
        Ok((criteria, Some(e))) => {
            eprintln!("error: {e}");
            let code = finish(&Summary::failed(name, criteria, e.to_string()), &ctx.out);
            if code == 0 { e.exit_code() as u8 } else { code.max(e.exit_code() as u8) }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code() as u8;
            let _ = write_summary(&Summary::failed(name, Vec::new(), e.to_string()), &ctx.out);
            code
        }
    }
}

fn write_summary(s: &Summary, out: &Path) -> Result<()> {
    let v = serde_json::to_value(s).expect("summary serializes");
    emit::write_text(out, "summary", Format::Json, &emit::json_text(&v)).map(|_| ())
}

fn finish(s: &Summary, out: &Path) -> u8 {
    for c in &s.criteria {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Err(e) = write_summary(s, out) {
        eprintln!("error: {e}");
        return 1;
    }
    if s.passed {
        0
    } else {
        2
    }
}

/// β/(β+ζ) when both rates are plain constants, the fixed point the
/// discrete steady initialization must hold.
fn steady_target(setup: &Setup) -> Option<f64> {
    let p = &setup.problem;
    if setup.run.init != InitMode::DiscreteSteady || !p.beta.is_constant() || !p.zeta.is_constant() {
        return None;
    }
    let b = p.beta.eval(0.0, 0.0, 0.0).ok()?;
    let z = p.zeta.eval(0.0, 0.0, 0.0).ok()?;
    Some(b / (b + z))
}

fn density(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.setup.problem;
    let g = Grids::new(p, &ctx.setup.numerics);
    let mut rho_out = TableWriter::create(&ctx.out, "density", ctx.format, &emit::DENSITY_HEADER)?;
    let mut s_out = TableWriter::create(&ctx.out, "moments", ctx.format, &emit::MOMENT_HEADER)?;
    let res = run_density_observed(p, &g, ctx.setup.run.init, |st, _| {
        if st.n < 0 || st.n as usize % ctx.stride == 0 || st.n as usize == g.n_steps {
            for row in emit::density_rows(&g, st) {
                rho_out.row(&row)?;
            }
            for row in emit::moment_rows(&g, st.n, &st.s) {
                s_out.row(&row)?;
            }
        }
        Ok(())
    });
    rho_out.finish()?;
    s_out.finish()?;
    match res {
        Ok(stats) => Ok((
            summary::density_criteria(&stats, p.bounds.mu0_min, steady_target(&ctx.setup)),
            None,
        )),
        Err(e) => Ok((Vec::new(), Some(e))),
    }
}

fn flow(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.setup.problem;
    let g = Grids::new(p, &ctx.setup.numerics);
    let opts = MinimizerOptions::from_numerics(&ctx.setup.numerics);
    let mut frames = Vec::new();
    let mut rows = Vec::new();
    let res = run_flow_observed(p, &ctx.setup.numerics, ctx.setup.run.init, &opts, |s| {
        if s.n % ctx.stride == 0 || s.n == g.n_steps {
            frames.push(FlowFrame {
                n: s.n,
                t: s.t,
                z: s.z.clone(),
                lambda: s.lambda.to_vec(),
            });
        }
        rows.push(*s.row);
        Ok(())
    });
    ctx.emit(&emit::flow_table(&frames, &g.space), "flow")?;
    ctx.emit(&emit::energy_table(&rows), "energy")?;
    match res {
        Ok(report) => {
            let mut criteria = summary::flow_criteria(&report);
            criteria.extend(summary::density_criteria(
                &report.density,
                p.bounds.mu0_min,
                steady_target(&ctx.setup),
            ));
            Ok((criteria, None))
        }
        Err(e) => Ok((Vec::new(), Some(e))),
    }
}

fn limit(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.setup.problem;
    let numerics = &ctx.setup.numerics;
    let times = flow_sample_times(p, numerics, ctx.stride);
    let traj = run_limit(p, numerics, &times)?;
    let space = SpaceGrid::new(numerics.nx);
    let dt = numerics.delta_t();
    let frames: Vec<FlowFrame> = traj
        .times
        .iter()
        .zip(&traj.frames)
        .map(|(&t, z)| {
            let zero = NodeField::zeros(z.nx(), z.d());
            FlowFrame {
                n: (t / dt).round() as usize,
                t,
                z: z.clone(),
                lambda: lagrange_multiplier(z, &zero, &space),
            }
        })
        .collect();
    ctx.emit(&emit::flow_table(&frames, &space), "limit")?;
    let g = Grids::new(p, numerics);
    let slices = limit_moment_series(p, &g, &times)?;
    ctx.emit(&emit::limit_density_table(&slices, &space), "limit_density")?;
    Ok((summary::limit_criteria(&traj.stats), None))
}

fn layer(ctx: &Ctx) -> Result<Outcome> {
    let (report, series) = initial_layer_report(&ctx.setup.problem, &ctx.setup.numerics, ctx.setup.run.layer_horizon)?;
    ctx.emit(&emit::layer_table(&series.points), "layer")?;
    Ok((summary::layer_criteria(&report), None))
}

fn sweep_options(ctx: &Ctx) -> SweepOptions {
    SweepOptions {
        stride: ctx.stride,
        ..SweepOptions::from_run(&ctx.setup.run)
    }
}

fn require_list(list: &[f64], key: &str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config(ConfigError::MissingKey {
            section: "run".into(),
            key: key.into(),
        }));
    }
    Ok(())
}

fn sweep_eps(ctx: &Ctx) -> Result<Outcome> {
    require_list(&ctx.setup.run.eps_list, "eps_list")?;
    let sweep = epsilon_sweep(&ctx.setup, &ctx.setup.run.eps_list, &sweep_options(ctx))?;
    emit::emit_convergence(&sweep.table, &ctx.out, "sweep_eps", ctx.format)?;
    let mut criteria = summary::eps_sweep_criteria(&sweep);
    criteria.extend(summary::limit_criteria(&sweep.limit));
    Ok((criteria, sweep.failure))
}

fn sweep_da(ctx: &Ctx) -> Result<Outcome> {
    require_list(&ctx.setup.run.da_list, "da_list")?;
    let mode = ctx.setup.run.init;
    let sweep = delta_a_refinement(&ctx.setup, &ctx.setup.run.da_list, mode)?;
    emit::emit_convergence(&sweep.table, &ctx.out, "sweep_da", ctx.format)?;
    Ok((summary::da_sweep_criteria(&sweep, mode), sweep.failure))
}

fn kernel(ctx: &Ctx) -> Result<Outcome> {
    require_list(&ctx.setup.run.eps_list, "eps_list")?;
    let run = &ctx.setup.run;
    let k = kernel_sweep(&ctx.setup, &run.eps_list, &run.psi, &sweep_options(ctx))?;
    let mut table = Table::new(&KERNEL_HEADER);
    for r in &k.rows {
        table.push(
            [r.epsilon, r.delta_a, r.delta_t, r.kernel, r.limit, r.gap, r.gap_ratio]
                .into_iter()
                .map(emit::Cell::Real)
                .collect(),
        );
    }
    ctx.emit(&table, "kernel")?;
    let criteria = summary::kernel_criteria(&k);
    Ok((criteria, k.failure))
}

