//! Experiment front end: coefficient verification, convergence and
//! work-precision studies, and long-horizon pattern runs with snapshot
//! artifacts. Every file is written atomically (temp file + rename) and
//! carries a provenance header; ladder entries may run on a small worker
//! pool capped by `KRONEXP_THREADS`, with output order fixed by the
//! ladder regardless of scheduling.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure,
//! 4 I/O error.

use clap::{Args, Parser, Subcommand};
use kronexp::integrators::{
    error_inf, integrate, real_variant_for, reference_solution_with, Method, ProblemSpec,
    RunOptions, RunReport, Snapshot,
};
use kronexp::models::{
    dominant_modes, fitzhugh_nagumo_3d, schnakenberg_2d, GridSpec, ModelParams,
};
use kronexp::splitting::{dump_coefficients_csv, exposed_schemes, order_condition_residuals};
use kronexp::tensor::Tensor;
use kronexp::{Error, SplitVariant, DEFAULT_ORACLE_CAP};
use std::cell::RefCell;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

const RESIDUAL_GATE: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "kronexp", version, about = "Exponential integrators with directional φ-splittings on Kronecker-sum structured problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check every shipped splitting scheme against its order conditions.
    VerifyCoefficients {
        /// Add this offset to one weight per scheme first (negative control).
        #[arg(long)]
        perturb: Option<f64>,
        /// Also dump all coefficients to this CSV (30 significant digits).
        #[arg(long, value_name = "FILE")]
        dump: Option<PathBuf>,
    },
    /// Error-vs-steps study against a fine reference; writes convergence.csv.
    Convergence(ExperimentArgs),
    /// Error, wall time, and operation counts per ladder entry; writes workprecision.csv.
    Workprecision(ExperimentArgs),
    /// Long-horizon run emitting field snapshots and a mode report.
    Pattern(ExperimentArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Benchmark model: schnakenberg2d or fhn3d.
    #[arg(long, default_value = "schnakenberg2d")]
    model: String,
    /// Grid points per direction (defaults: 64 in 2-d, 32 in 3-d; paper
    /// scale raises them to 150 / 64).
    #[arg(long)]
    n: Option<usize>,
    /// Final time (defaults: 2 for schnakenberg2d, 150 for fhn3d).
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Comma-separated step-count ladder, e.g. 100,200,400.
    #[arg(long)]
    steps: Option<String>,
    /// Comma-separated methods out of: etd2rkds, exprk3ds_real,
    /// exprk3ds_cplx, etd2rk_dense, exprk3_dense. Pattern runs take one.
    #[arg(long, default_value = "exprk3ds_real")]
    method: String,
    /// PRNG seed for the initial data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Emit a snapshot and a progress line every this many steps (pattern).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Use the publication-size grids instead of desk-scale defaults.
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    /// Key-value parameter file; its entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalBlowup { .. } | Error::NonFinite => {
                Failure::Numerical(e.to_string())
            }
            Error::Io(inner) => Failure::Io(inner.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::VerifyCoefficients { perturb, dump } => cmd_verify_coefficients(perturb, dump),
        Cmd::Convergence(args) => cmd_convergence(&args),
        Cmd::Workprecision(args) => cmd_workprecision(&args),
        Cmd::Pattern(args) => cmd_pattern(&args),
    };
    if let Err(failure) = outcome {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.code());
    }
}

fn cmd_verify_coefficients(perturb: Option<f64>, dump: Option<PathBuf>) -> Result<(), Failure> {
    let mut csv = format!("# version={}\n", env!("CARGO_PKG_VERSION")).into_bytes();
    csv.extend_from_slice(b"variant,branch,ell,d,term,inner_ell,coeff,mu,re,im\n");
    let mut worst = 0.0f64;
    for mut scheme in exposed_schemes() {
        if let Some(eps) = perturb {
            scheme.terms[0].eta += eps;
        }
        let residual = order_condition_residuals(&scheme)
            .into_iter()
            .fold(0.0f64, f64::max);
        worst = worst.max(residual);
        let variant = scheme.variant.map(|v| v.name()).unwrap_or("second-order");
        println!(
            "{variant:>16} branch={:<5} ell={} d={}: max residual {residual:.3e} {}",
            format!("{:?}", scheme.branch).to_lowercase(),
            scheme.ell,
            scheme.d,
            if residual <= RESIDUAL_GATE { "ok" } else { "FAIL" }
        );
        if dump.is_some() {
            dump_coefficients_csv(&scheme, &mut csv)?;
        }
    }
    if let Some(path) = dump {
        write_atomic(&path, &csv)?;
        println!("coefficients written to {}", path.display());
    }
    if worst <= RESIDUAL_GATE {
        println!("max residual {worst:.3e} <= {RESIDUAL_GATE:.0e}");
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "max residual {worst:.3e} exceeds {RESIDUAL_GATE:.0e}"
        )))
    }
}

/// Everything derived from the experiment flags: the problem, its grid,
/// and the resolved run plan.
struct Experiment {
    model: &'static str,
    n: usize,
    t_end: f64,
    params: ModelParams,
    grid: GridSpec,
    problem: ProblemSpec,
    methods: Vec<(String, Method)>,
    ladder: Vec<usize>,
    out: PathBuf,
}

impl Experiment {
    fn provenance(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|(name, _)| name.as_str()).collect();
        format!(
            "# model={} n={} T={} seed={} methods={} version={}\n",
            self.model,
            self.n,
            self.t_end,
            self.params.seed,
            methods.join(","),
            env!("CARGO_PKG_VERSION")
        )
    }
}

fn prepare(args: &ExperimentArgs, default_steps: &[usize]) -> Result<Experiment, Failure> {
    let (model, d): (&'static str, usize) = match args.model.as_str() {
        "schnakenberg2d" => ("schnakenberg2d", 2),
        "fhn3d" => ("fhn3d", 3),
        other => return Err(invalid(format!("unknown model \"{other}\""))),
    };
    let n = args.n.unwrap_or(match (model, args.paper_scale) {
        ("schnakenberg2d", false) => 64,
        ("schnakenberg2d", true) => 150,
        (_, false) => 32,
        (_, true) => 64,
    });
    let t_end = args.t_end.unwrap_or(if d == 2 { 2.0 } else { 150.0 });
    if !(t_end > 0.0) {
        return Err(invalid(format!("final time {t_end} must be positive")));
    }

    let mut params = if d == 2 {
        ModelParams::schnakenberg()
    } else {
        ModelParams::fitzhugh_nagumo()
    };
    params.seed = args.seed;
    if let Some(path) = &args.config {
        apply_config(&mut params, path)?;
    }

    let mut problem = if d == 2 {
        schnakenberg_2d(n, &params)?
    } else {
        fitzhugh_nagumo_3d(n, &params)?
    };
    problem.t_end = t_end;
    let grid = if d == 2 {
        GridSpec::new(2, n, vec![1.0, 1.0])?
    } else {
        GridSpec::new(3, n, vec![std::f64::consts::PI; 3])?
    };

    let mut methods = Vec::new();
    for name in args.method.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let method = match name {
            "etd2rkds" => Method::Etd2rkDs,
            "exprk3ds_real" => Method::Exprk3Ds(real_variant_for(d)),
            "exprk3ds_cplx" => Method::Exprk3Ds(SplitVariant::TwoTermComplex),
            "etd2rk_dense" => Method::Etd2rkDense,
            "exprk3_dense" => Method::Exprk3Dense,
            other => return Err(invalid(format!("unknown method \"{other}\""))),
        };
        if matches!(method, Method::Etd2rkDense | Method::Exprk3Dense)
            && n.pow(d as u32) > DEFAULT_ORACLE_CAP
        {
            return Err(invalid(format!(
                "{name} assembles a {}x{0} matrix, above the {DEFAULT_ORACLE_CAP} oracle cap",
                n.pow(d as u32)
            )));
        }
        methods.push((name.to_string(), method));
    }
    if methods.is_empty() {
        return Err(invalid("no methods requested"));
    }

    let ladder = match &args.steps {
        None => default_steps.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let steps: usize = part
                    .parse()
                    .map_err(|_| invalid(format!("bad step count \"{part}\"")))?;
                if steps == 0 {
                    return Err(invalid("step counts must be >= 1"));
                }
                out.push(steps);
            }
            out
        }
    };
    if ladder.is_empty() {
        return Err(invalid("empty step ladder"));
    }

    Ok(Experiment {
        model,
        n,
        t_end,
        params,
        grid,
        problem,
        methods,
        ladder,
        out: args.out.clone(),
    })
}

fn apply_config(params: &mut ModelParams, path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
        let value: f64 = value.trim().parse().map_err(|_| {
            invalid(format!("{}:{}: bad number \"{}\"", path.display(), lineno + 1, value.trim()))
        })?;
        params
            .set(key.trim(), value)
            .map_err(|e| invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
    }
    Ok(())
}

/// Runs `job` over the ladder indices on up to `KRONEXP_THREADS` workers
/// (default: the machine's parallelism), returning results in ladder
/// order so artifacts never depend on scheduling.
fn run_indexed<R: Send>(count: usize, job: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let workers = std::env::var("KRONEXP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(usize::from).unwrap_or(1)
        })
        .clamp(1, count.max(1));
    let slots: Vec<Mutex<Option<R>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                *slots[i].lock().unwrap() = Some(job(i));
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

struct LadderRow {
    method: String,
    steps: usize,
    report: Result<(RunReport, f64), Error>,
}

/// Integrates every (method, steps) pair against one shared reference
/// computed with the third-order real-coefficient method at 8x the
/// finest ladder entry.
fn run_ladder(exp: &Experiment) -> Result<Vec<LadderRow>, Failure> {
    let finest = *exp.ladder.iter().max().expect("nonempty ladder");
    let reference = reference_solution_with(
        &exp.problem,
        Method::Exprk3Ds(real_variant_for(exp.grid.d)),
        8,
        finest,
    )?;

    let cases: Vec<(String, Method, usize)> = exp
        .methods
        .iter()
        .flat_map(|(name, method)| {
            exp.ladder.iter().map(move |&s| (name.clone(), *method, s))
        })
        .collect();
    let rows = run_indexed(cases.len(), |i| {
        let (name, method, steps) = &cases[i];
        let report = integrate(&exp.problem, *steps, *method, RunOptions::default())
            .map(|r| {
                let err = error_inf(&r.final_states, &reference);
                (r, err)
            });
        LadderRow {
            method: name.clone(),
            steps: *steps,
            report,
        }
    });
    Ok(rows)
}

/// Per-method least-squares order fit over the rows that finished.
fn fitted_slopes(rows: &[LadderRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for row in rows {
        if out.iter().any(|(m, _)| *m == row.method) {
            continue;
        }
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == row.method)
            .filter_map(|r| {
                r.report
                    .as_ref()
                    .ok()
                    .filter(|(_, err)| err.is_finite() && *err > 0.0)
                    .map(|(_, err)| ((r.steps as f64).ln(), err.ln()))
            })
            .collect();
        let slope = if pts.len() < 2 {
            f64::NAN
        } else {
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            -(n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        out.push((row.method.clone(), slope));
    }
    out
}

fn cmd_convergence(args: &ExperimentArgs) -> Result<(), Failure> {
    let exp = prepare(args, &[100, 200, 400])?;
    let rows = run_ladder(&exp)?;
    let slopes = fitted_slopes(&rows);

    let mut csv = exp.provenance().into_bytes();
    csv.extend_from_slice(b"method,steps,tau,err_inf,slope\n");
    let mut failed = 0usize;
    for row in &rows {
        let slope = slopes
            .iter()
            .find(|(m, _)| *m == row.method)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN);
        let tau = exp.t_end / row.steps as f64;
        match &row.report {
            Ok((_, err)) => {
                csv.extend_from_slice(
                    format!(
                        "{},{},{:.12e},{:.12e},{:.6}\n",
                        row.method, row.steps, tau, err, slope
                    )
                    .as_bytes(),
                );
            }
            Err(e) => {
                failed += 1;
                eprintln!("{} at {} steps failed: {e}", row.method, row.steps);
                csv.extend_from_slice(
                    format!("{},{},{:.12e},nan,nan\n", row.method, row.steps, tau).as_bytes(),
                );
            }
        }
    }
    let path = exp.out.join("convergence.csv");
    write_atomic(&path, &csv)?;
    for (method, slope) in &slopes {
        println!("{method}: fitted order {slope:.3}");
    }
    println!("wrote {}", path.display());
    if failed > 0 {
        return Err(Failure::Numerical(format!(
            "{failed} ladder entr{} failed; see {}",
            if failed == 1 { "y" } else { "ies" },
            path.display()
        )));
    }
    Ok(())
}

fn cmd_workprecision(args: &ExperimentArgs) -> Result<(), Failure> {
    let exp = prepare(args, &[100, 200, 400])?;
    let rows = run_ladder(&exp)?;

    let mut csv = exp.provenance().into_bytes();
    csv.extend_from_slice(b"method,steps,error,wall_time,tucker_ops\n");
    let mut failed = 0usize;
    for row in &rows {
        match &row.report {
            Ok((report, err)) => {
                csv.extend_from_slice(
                    format!(
                        "{},{},{:.12e},{:.6},{}\n",
                        row.method, row.steps, err, report.wall_time, report.tucker_ops
                    )
                    .as_bytes(),
                );
            }
            Err(e) => {
                failed += 1;
                eprintln!("{} at {} steps failed: {e}", row.method, row.steps);
                csv.extend_from_slice(
                    format!("{},{},nan,nan,0\n", row.method, row.steps).as_bytes(),
                );
            }
        }
    }
    let path = exp.out.join("workprecision.csv");
    write_atomic(&path, &csv)?;
    println!("wrote {}", path.display());
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} ladder entries failed")));
    }
    Ok(())
}

fn cmd_pattern(args: &ExperimentArgs) -> Result<(), Failure> {
    let default_steps = if args.model == "fhn3d" { 10000 } else { 4000 };
    let exp = prepare(args, &[default_steps])?;
    if exp.methods.len() != 1 {
        return Err(invalid("pattern runs take exactly one method"));
    }
    let steps = *exp.ladder.last().expect("nonempty ladder");
    let (name, method) = &exp.methods[0];

    // Snapshot I/O errors happen inside the hook; carry the first one out.
    let io_failure: RefCell<Option<Failure>> = RefCell::new(None);
    let hook = |snap: &Snapshot| {
        if io_failure.borrow().is_some() {
            return;
        }
        println!(
            "step={} t={:.6} tucker_ops={} kronsum_actions={}",
            snap.step, snap.t, snap.counts.tucker, snap.counts.kronsum
        );
        if snap.step < steps {
            let tag = format!("u_{:06}", snap.step);
            if let Err(f) = write_field(&exp, &snap.states[0], &tag) {
                *io_failure.borrow_mut() = Some(f);
            }
        }
    };
    let opts = RunOptions {
        snapshot_every: args.snapshot_every,
        hook: if args.snapshot_every.is_some() {
            Some(Box::new(hook))
        } else {
            None
        },
    };

    let report = integrate(&exp.problem, steps, *method, opts)?;
    if let Some(f) = io_failure.into_inner() {
        return Err(f);
    }

    write_field(&exp, &report.final_states[0], "pattern_u")?;
    let modes = dominant_modes(&report.final_states[0], &exp.grid)?;
    let mut txt = exp.provenance().into_bytes();
    for m in &modes {
        let idx: Vec<String> = m.indices.iter().map(|k| k.to_string()).collect();
        txt.extend_from_slice(format!("({}) {:.6e}\n", idx.join(","), m.magnitude).as_bytes());
    }
    let modes_path = exp.out.join("modes.txt");
    write_atomic(&modes_path, &txt)?;

    let top: Vec<String> = modes
        .iter()
        .take(3)
        .map(|m| {
            let idx: Vec<String> = m.indices.iter().map(|k| k.to_string()).collect();
            format!("({})", idx.join(","))
        })
        .collect();
    println!(
        "{name}: {steps} steps, digest {}, top modes {}",
        &report.digest()[..16],
        if top.is_empty() { "none".into() } else { top.join(" ") }
    );
    println!("wrote {} and field files in {}", modes_path.display(), exp.out.display());
    Ok(())
}

/// Writes one scalar field as CSV plus an 8-bit PGM (linear min-max
/// scaling). 3-d fields are cut at the plane x₃ ≈ 1.55.
fn write_field(exp: &Experiment, field: &Tensor<f64>, tag: &str) -> Result<(), Failure> {
    let plane: Tensor<f64>;
    let view: &Tensor<f64> = if exp.grid.d == 3 {
        let i3 = ((1.55 / exp.grid.h(3)).round() as usize).min(exp.n - 1);
        plane = Tensor::from_fn(&[exp.n, exp.n], |idx| field.get(&[idx[0], idx[1], i3]))?;
        &plane
    } else {
        field
    };

    let mut csv = exp.provenance().into_bytes();
    view.write_csv(&mut csv)?;
    write_atomic(&exp.out.join(format!("{tag}.csv")), &csv)?;

    let (lo, hi) = view
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut pgm = format!("P5\n{} {}\n255\n", exp.n, exp.n).into_bytes();
    for row in 0..exp.n {
        for col in 0..exp.n {
            let v = view.get(&[col, row]);
            let byte = if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            pgm.push(byte);
        }
    }
    write_atomic(&exp.out.join(format!("{tag}.pgm")), &pgm)?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(())
}
