//! `tslab`: command-line driver for the teacher-student experiments.
//!
//! Exit status: 0 on success, 1 on invalid input or I/O failure, 2 on usage
//! errors (from the argument parser), 3 when a run misses its convergence
//! policy.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use tslab_core::critical::{ca_loss, count_ca_points, f_grid};
use tslab_core::flow::{classify, init_student, integrate};
use tslab_core::harness::{
    emit_plot_data, read_records, run_hessian_scan, run_one_neuron_table, run_phase_sweep, write_records, DRule,
    FlowRun, HessianSeries, PlotKind, Record, SweepConfig, CELLS_FILE, SUMMARY_FILE,
};
use tslab_core::kernel::mc_oracle;
use tslab_core::{ActivationKind, FlowConfig, KernelMethod, KernelSpec, TeacherFrame, TeacherNet};

const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "tslab", version, about = "Shallow teacher-student networks on Gaussian input")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a kernel backend with closed forms, Monte Carlo and the Stein rule.
    KernelCheck(KernelCheckArgs),
    /// One-neuron optimum per teacher width.
    OneNeuron(OneNeuronArgs),
    /// Loss and multiplicity of every copy-average partition.
    CaTable(CaTableArgs),
    /// Tabulate the one-neuron fixed-point function on an (r, u) grid.
    Fgrid(FgridArgs),
    /// Integrate one gradient flow.
    Flow(FlowArgs),
    /// Run a sweep of gradient flows from a config file.
    PhaseSweep(PhaseSweepArgs),
    /// Minimum Hessian eigenvalue at optimal copy-average points (erf).
    HessianScan(HessianScanArgs),
    /// Turn persisted records into plot-ready CSV.
    Emit(EmitArgs),
}

/// Integer list: `4`, `2,3,5` or an inclusive range `2..10`.
#[derive(Clone, Debug)]
struct IntList(Vec<usize>);

impl FromStr for IntList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
        let values = match s.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if lo > hi {
                    return Err(format!("empty range {s}"));
                }
                (lo..=hi).collect()
            }
            None => s.split(',').map(parse).collect::<std::result::Result<_, _>>()?,
        };
        Ok(IntList(values))
    }
}

fn kernel_arg(kind: ActivationKind, method: Option<KernelMethod>) -> Result<KernelSpec> {
    Ok(match method {
        Some(m) => KernelSpec::new(kind, m)?,
        None => KernelSpec::preferred(kind),
    })
}

#[derive(Args)]
struct KernelCheckArgs {
    #[arg(long, default_value = "erf")]
    activation: ActivationKind,
    /// Backend under test: analytic, quadrature:<nodes>, hermite:<nodes> or mc:<samples>[:seed].
    #[arg(long)]
    kernel: Option<KernelMethod>,
    /// Monte-Carlo samples per reference point.
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted deviation from the closed form.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn kernel_check(args: &KernelCheckArgs) -> Result<ExitCode> {
    let spec = kernel_arg(args.activation, args.kernel)?;
    let kind = args.activation;
    let rs = [0.25, 0.5, 1.0, 1.5, 2.0];
    let us: Vec<f64> = (-9..=9).map(|i| f64::from(i) / 10.0).collect();
    let mut ok = true;
    println!("kernel check: {kind} with {}", spec.method);

    if matches!(kind, ActivationKind::Erf | ActivationKind::Relu) {
        let exact = KernelSpec::analytic(kind)?;
        let mut worst: f64 = 0.0;
        for &r1 in &rs {
            for &r2 in &rs {
                for &u in &us {
                    worst = worst.max((spec.g(r1, r2, u)? - exact.g(r1, r2, u)?).abs());
                }
            }
        }
        ok &= worst <= args.tol;
        println!("  closed form: max |error| {worst:.3e} (tol {:.1e})", args.tol);
    }

    let mut z_max: f64 = 0.0;
    for (i, &(r1, r2, u)) in [(1.0, 1.0, 0.5), (0.5, 2.0, -0.3), (1.5, 0.8, 0.9)].iter().enumerate() {
        let est = mc_oracle(kind, r1, r2, u, args.samples, args.seed + i as u64)?;
        z_max = z_max.max((spec.g(r1, r2, u)? - est.mean).abs() / est.stderr);
    }
    ok &= z_max <= 4.0;
    println!("  monte carlo ({} samples): max |z| {z_max:.2}", args.samples);

    if !matches!(spec.method, KernelMethod::MonteCarlo { .. }) {
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for &r1 in &rs {
            for &u in &us {
                let fd = (spec.g(r1, 1.0, u + h)? - spec.g(r1, 1.0, u - h)?) / (2.0 * h);
                let d = spec.dg_du(r1, 1.0, u)?;
                worst = worst.max((d - fd).abs() / d.abs().max(1e-12));
            }
        }
        ok &= worst <= 1e-5;
        println!("  stein rule: max relative error {worst:.3e}");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Args)]
struct OneNeuronArgs {
    /// Comma-separated activations.
    #[arg(long, value_delimiter = ',', default_value = "erf,relu,tanh,sigmoid,softplus")]
    activation: Vec<ActivationKind>,
    #[arg(long, default_value = "2..10")]
    k: IntList,
    /// Kernel backend for the fixed-point solver.
    #[arg(long, default_value = "quadrature:48")]
    kernel: KernelMethod,
    /// JSONL file for the rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.8}"))
}

fn one_neuron(args: &OneNeuronArgs) -> Result<ExitCode> {
    let rows = run_one_neuron_table(&args.activation, &args.k.0, args.kernel);
    println!("{:<12} {:>3} {:>12} {:>12} {:>12} {:>12} {:>10}", "kind", "k", "r", "a", "loss", "grad", "bounds");
    let mut failures = 0;
    for row in &rows {
        let bounds = match (row.norm_bound_holds, row.weight_bound_holds) {
            (Some(a), Some(b)) => (a && b).to_string(),
            _ => "-".into(),
        };
        println!(
            "{:<12} {:>3} {:>12} {:>12} {:>12} {:>12} {:>10}{}",
            row.kind.to_string(),
            row.k,
            opt_num(row.r),
            opt_num(row.a),
            opt_num(row.loss),
            row.grad_norm.map_or_else(|| "-".into(), |g| format!("{g:.2e}")),
            bounds,
            row.error.as_ref().map_or_else(String::new, |e| format!("  error: {e}"))
        );
        failures += usize::from(row.error.is_some());
    }
    if let Some(out) = &args.out {
        let records: Vec<Record> = rows.into_iter().map(Record::OneNeuron).collect();
        write_records(out, &records)?;
    }
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Args)]
struct CaTableArgs {
    /// Student widths.
    #[arg(long, default_value = "1..3")]
    n: IntList,
    #[arg(long)]
    k: usize,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn partitions(parts: usize, budget: usize, max_part: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in (1..=max_part.min(budget)).rev() {
        if budget - p < parts - 1 {
            continue;
        }
        for mut rest in partitions(parts - 1, budget - p, p) {
            rest.insert(0, p);
            out.push(rest);
        }
    }
    out
}

fn ca_table(args: &CaTableArgs) -> Result<ExitCode> {
    let mut text = String::from("n,partition,covered,loss,count\n");
    for &n in &args.n.0 {
        for p in partitions(n, args.k, args.k) {
            let label = p.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
            let covered: usize = p.iter().sum();
            writeln!(text, "{n},{label},{covered},{},{}", ca_loss(&p, args.k)?, count_ca_points(&p, args.k)?)?;
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct FgridArgs {
    #[arg(long, default_value = "erf")]
    activation: ActivationKind,
    #[arg(long)]
    kernel: Option<KernelMethod>,
    /// Number of r values, equally spaced on (0, r_max].
    #[arg(long, default_value_t = 100)]
    r_points: usize,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
    /// Number of u values, equally spaced on (0, 1).
    #[arg(long, default_value_t = 19)]
    u_points: usize,
    /// JSONL file for the grid record.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fgrid(args: &FgridArgs) -> Result<ExitCode> {
    if args.r_points == 0 || args.u_points == 0 {
        bail!("grid sizes must be positive");
    }
    let spec = kernel_arg(args.activation, args.kernel)?;
    let r: Vec<f64> = (1..=args.r_points).map(|i| args.r_max * i as f64 / args.r_points as f64).collect();
    let u: Vec<f64> = (1..=args.u_points).map(|j| j as f64 / (args.u_points + 1) as f64).collect();
    let grid = f_grid(&spec, &r, &u)?;
    for (j, uj) in u.iter().enumerate() {
        let changes = grid.sign_changes(j);
        let shown: Vec<String> = changes.iter().map(|(a, b)| format!("({a:.4}, {b:.4})")).collect();
        println!("u = {uj:.4}: {}", if shown.is_empty() { "no sign change".into() } else { shown.join(" ") });
    }
    if let Some(out) = &args.out {
        write_records(out, &[Record::Fgrid(grid)])?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long, default_value = "erf")]
    activation: ActivationKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    /// Input dimension; defaults to k + 1.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kernel: Option<KernelMethod>,
    /// TOML file with integrator settings (the `[flow]` table of a sweep config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Finish with damped Newton steps near the end.
    #[arg(long)]
    polish: bool,
    #[arg(long)]
    max_steps: Option<usize>,
    /// JSONL file for the run record.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn flow(args: &FlowArgs) -> Result<ExitCode> {
    let mut cfg: FlowConfig = match &args.config {
        Some(path) => load_toml(path)?,
        None => FlowConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.max_steps {
        cfg.max_steps = m;
    }
    cfg.newton_polish |= args.polish;
    let d = args.d.unwrap_or(args.k + 1);
    let kind = args.activation;
    let spec = kernel_arg(kind, args.kernel)?;
    let teacher = TeacherNet::unit_orthonormal(args.k, d, TeacherFrame::CanonicalBasis, kind)?;
    let s0 = init_student(args.n, d, kind, &cfg)?;
    let mut rec = integrate(&s0, &teacher, &spec, &cfg)?;
    if rec.converged {
        rec.label = Some(classify(&rec, &teacher, &Default::default())?);
    }
    println!(
        "status {:?} after {} steps (t = {:.3}): loss {:.10}, gradient {:.2e}{}{}",
        rec.status,
        rec.steps,
        rec.final_time,
        rec.final_loss,
        rec.final_grad_norm,
        if rec.polished { ", polished" } else { "" },
        rec.label.map_or_else(String::new, |l| format!(", label {l}"))
    );
    let converged = rec.converged;
    if let Some(out) = &args.out {
        let run = FlowRun { n: args.n, k: args.k, d, seed: cfg.seed, kernel: spec, result: rec };
        write_records(out, &[Record::Flow(Box::new(run))])?;
    }
    Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_CONVERGED) })
}

#[derive(Args)]
struct PhaseSweepArgs {
    /// Sweep config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_path` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with the convergence-failure status if any cell did not converge.
    #[arg(long)]
    require_converged: bool,
}

fn phase_sweep(args: &PhaseSweepArgs) -> Result<ExitCode> {
    let mut cfg = SweepConfig::load(&args.config)?;
    if args.out.is_some() {
        cfg.output_path.clone_from(&args.out);
    }
    info!("running {} cells", cfg.cells().len());
    let outcome = run_phase_sweep(&cfg)?;
    println!(
        "{:>3} {:>3} {:>5} {:>9} {:>8} {:>8} {:>8} {:>12} {:>12}",
        "n", "k", "seeds", "converged", "opt_ca", "pnc", "other", "mean_gap", "min_loss"
    );
    for s in &outcome.summary {
        println!(
            "{:>3} {:>3} {:>5} {:>9} {:>8.2} {:>8.2} {:>8.2} {:>12} {:>12.8}",
            s.n,
            s.k,
            s.seeds,
            s.converged,
            s.frac_opt_ca,
            s.frac_perturbed_n_copy,
            s.frac_other,
            s.mean_gap.map_or_else(|| "-".into(), |g| format!("{g:.2e}")),
            s.min_loss
        );
    }
    if let Some(dir) = &cfg.output_path {
        println!("records: {}", dir.join(CELLS_FILE).display());
        println!("summary: {}", dir.join(SUMMARY_FILE).display());
    }
    let all_converged = outcome.cells.iter().all(|c| c.converged);
    Ok(if all_converged || !args.require_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    })
}

#[derive(Args)]
struct HessianScanArgs {
    #[arg(long, default_value = "2..14")]
    n: IntList,
    /// Use k = n + offset.
    #[arg(long, conflicts_with = "ratio")]
    offset: Option<usize>,
    /// Use k = ratio * n.
    #[arg(long)]
    ratio: Option<usize>,
    /// Fixed input dimension; defaults to k + 1.
    #[arg(long)]
    d: Option<usize>,
    /// JSONL file for the rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn hessian_scan(args: &HessianScanArgs) -> Result<ExitCode> {
    let series = match (args.offset, args.ratio) {
        (_, Some(r)) => HessianSeries::Ratio(r),
        (Some(o), None) => HessianSeries::Offset(o),
        (None, None) => HessianSeries::Offset(1),
    };
    let d_rule = args.d.map_or(DRule::KPlus1, DRule::Fixed);
    let rows = run_hessian_scan(&args.n.0, series, d_rule)?;
    println!("{:>3} {:>3} {:>3} {:>14} {:>10}", "n", "k", "d", "min_eig", "asym");
    for r in &rows {
        println!("{:>3} {:>3} {:>3} {:>14.6e} {:>10.1e}", r.n, r.k, r.d, r.min_eigenvalue, r.asymmetry);
    }
    if let Some(out) = &args.out {
        let records: Vec<Record> = rows.into_iter().map(Record::Hessian).collect();
        write_records(out, &records)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct EmitArgs {
    /// JSONL records to read.
    #[arg(long)]
    input: PathBuf,
    /// phase, trajectory, fgrid, one_neuron or hessian.
    #[arg(long)]
    kind: String,
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
}

fn emit(args: &EmitArgs) -> Result<ExitCode> {
    let kind: PlotKind = args.kind.parse()?;
    let records = read_records(&args.input)?;
    let rows = emit_plot_data(&records, kind, &args.out)?;
    println!("wrote {rows} {kind} rows to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::KernelCheck(a) => kernel_check(a),
        Command::OneNeuron(a) => one_neuron(a),
        Command::CaTable(a) => ca_table(a),
        Command::Fgrid(a) => fgrid(a),
        Command::Flow(a) => flow(a),
        Command::PhaseSweep(a) => phase_sweep(a),
        Command::HessianScan(a) => hessian_scan(a),
        Command::Emit(a) => emit(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::FAILURE
        }
    }
}

fn chain(e: &anyhow::Error) -> String {
    e.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ")
}
