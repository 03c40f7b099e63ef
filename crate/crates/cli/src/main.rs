//! `pruning-amr`: build adaptive meshes from INR weight files.
//!
//! Exit codes: 0 on success, 1 when flags or inputs fail validation, 2 when
//! the computation or an output write fails.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use inr_amr::driver::neuron_count_map;
use inr_amr::export::{export_neuron_map, export_vtk, output_file_name};
use inr_amr::metrics::{read_report_csv, write_report_csv, IterationRecord};
use inr_amr::trainer::{fit, Architecture, FitSpec, FourierSpec, Target};
use inr_amr::{load_inr, run_campaign, run_time_slices, ActivationKind, Campaign, DomainBox, MeshTree, Mlp, Mode, RunConfig};
use serde_json::json;

const ECHO_FILE: &str = "config.echo";

#[derive(Parser, Debug)]
#[command(name = "pruning-amr", version, about = "Adaptive rectilinear meshes from implicit neural representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one refinement campaign and write the final mesh and a report.
    Run(RunArgs),
    /// Run a campaign on each time slice of a 4D network.
    SliceRun(SliceArgs),
    /// Write kept-neuron counts on a uniform mesh as cell data.
    NeuronMap(MapArgs),
    /// Fit a small network to a built-in target.
    Fit(FitArgs),
    /// Pretty-print a report CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct NetFlags {
    /// Weight file (JSON).
    #[arg(long)]
    inr: PathBuf,
    #[arg(long)]
    output_component: Option<usize>,
    /// Worker threads for the decision phase.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct CampaignFlags {
    #[command(flatten)]
    net: NetFlags,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    /// Error threshold (pruning mode).
    #[arg(long = "T")]
    t: Option<f64>,
    /// Proportion threshold (pruning mode).
    #[arg(long = "P")]
    p: Option<f64>,
    /// Interpolation-error threshold (basic mode).
    #[arg(long)]
    tau: Option<f64>,
    /// ID tolerance (pruning mode).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    n_err: Option<usize>,
    #[arg(long)]
    n_id: Option<usize>,
    #[arg(long)]
    n_total_err: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    initial_uniform: Option<u32>,
    #[arg(long)]
    dof_budget: Option<usize>,
    /// Write zero wall times so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    campaign: CampaignFlags,
    /// VTK file for the final mesh.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report CSV (defaults to the VTK path with a .csv extension).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SliceArgs {
    #[command(flatten)]
    campaign: CampaignFlags,
    /// Comma-separated values of the last input coordinate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    time_slices: Vec<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[command(flatten)]
    net: NetFlags,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long)]
    n_id: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Levels of uniform refinement of the mesh.
    #[arg(long, default_value_t = 3)]
    initial_uniform: u32,
    #[arg(long, default_value = "neuron_map.vtk")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// One of corner_osc, constant, multilinear, moving_blob, radial_tanh.
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value = "relu")]
    activation: String,
    /// Number of Fourier features; omit for raw coordinates.
    #[arg(long)]
    fourier_features: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    fourier_scale: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 4096)]
    holdout: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_final: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra training samples in a sub-box, as `LO:HI:FRACTION` with
    /// comma-separated corners. Repeatable.
    #[arg(long)]
    focus: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV (defaults to the weight path with a .log.csv suffix).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report CSV written by `run` or `slice-run`.
    path: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn runtime<E: Display>(context: impl Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: inr_amr::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::SliceRun(a) => cmd_slice_run(a),
        Command::NeuronMap(a) => cmd_neuron_map(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

/// Mode-specific flag rules. Returns the first problem found.
fn check_mode_flags(c: &CampaignFlags) -> Outcome<()> {
    let given = |name: &'static str, set: bool| if set { Some(name) } else { None };
    let pruning_only = [
        given("--T", c.t.is_some()),
        given("--P", c.p.is_some()),
        given("--eps", c.eps.is_some()),
        given("--n-id", c.n_id.is_some()),
    ];
    let basic_only = [given("--tau", c.tau.is_some())];
    let mode_flag = format!("--mode {}", c.mode.name());
    let conflict = |flag: &str| invalid(format!("{flag} conflicts with {mode_flag}"));
    match c.mode {
        Mode::Pruning => {
            if c.t.is_none() {
                return Err(invalid(format!("{mode_flag} requires --T")));
            }
            if c.p.is_none() {
                return Err(invalid(format!("{mode_flag} requires --P")));
            }
            if let Some(f) = basic_only.iter().flatten().next() {
                return Err(conflict(f));
            }
        }
        Mode::Basic => {
            if c.tau.is_none() {
                return Err(invalid(format!("{mode_flag} requires --tau")));
            }
            if let Some(f) = pruning_only.iter().flatten().next() {
                return Err(conflict(f));
            }
        }
        Mode::Uniform => {
            if let Some(f) = pruning_only.iter().chain(&basic_only).flatten().next() {
                return Err(conflict(f));
            }
            if c.n_err.is_some() {
                return Err(conflict("--n-err"));
            }
        }
    }
    Ok(())
}

fn set_threads(threads: Option<usize>) -> Outcome<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(invalid("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime("cannot start worker pool")),
    }
}

fn load_net(flags: &NetFlags) -> Outcome<Mlp> {
    let net = load_inr(&flags.inr).map_err(|e| invalid(format!("cannot load --inr {}: {e}", flags.inr.display())))?;
    match flags.output_component {
        None => Ok(net),
        Some(c) => net
            .with_output_component(c)
            .map_err(|e| invalid(format!("--output-component {c}: {e}"))),
    }
}

fn resolve_config(c: &CampaignFlags, net: &Mlp, time_slices: Option<Vec<f64>>) -> Outcome<RunConfig> {
    let d = RunConfig::for_net(net, c.mode);
    let cfg = RunConfig {
        mode: c.mode,
        error_threshold: c.t.unwrap_or(d.error_threshold),
        proportion_threshold: c.p.unwrap_or(d.proportion_threshold),
        tau: c.tau.unwrap_or(d.tau),
        eps: c.eps.unwrap_or(d.eps),
        max_iterations: c.kmax.unwrap_or(d.max_iterations),
        n_err: c.n_err.unwrap_or(d.n_err),
        n_id: c.n_id.unwrap_or(d.n_id),
        n_total_err: c.n_total_err.unwrap_or(d.n_total_err),
        seed: c.seed.unwrap_or(d.seed),
        initial_uniform_levels: c.initial_uniform.unwrap_or(d.initial_uniform_levels),
        time_slices,
        dof_budget: c.dof_budget.or(d.dof_budget),
    };
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(cfg)
}

/// The command line that reproduces `cfg` with every default spelled out.
fn resolved_command(sub: &str, c: &CampaignFlags, net: &Mlp, cfg: &RunConfig) -> String {
    let mut parts = vec![
        "pruning-amr".to_string(),
        sub.to_string(),
        format!("--inr {}", c.net.inr.display()),
        format!("--mode {}", cfg.mode.name()),
    ];
    match cfg.mode {
        Mode::Pruning => {
            parts.push(format!("--T {} --P {}", cfg.error_threshold, cfg.proportion_threshold));
            parts.push(format!("--eps {} --n-id {}", cfg.eps, cfg.n_id));
        }
        Mode::Basic => parts.push(format!("--tau {}", cfg.tau)),
        Mode::Uniform => {}
    }
    if cfg.mode != Mode::Uniform {
        parts.push(format!("--n-err {}", cfg.n_err));
    }
    parts.push(format!(
        "--kmax {} --n-total-err {} --seed {} --initial-uniform {} --output-component {}",
        cfg.max_iterations,
        cfg.n_total_err,
        cfg.seed,
        cfg.initial_uniform_levels,
        net.output_component()
    ));
    if let Some(b) = cfg.dof_budget {
        parts.push(format!("--dof-budget {b}"));
    }
    if let Some(ts) = &cfg.time_slices {
        let list: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
        parts.push(format!("--time-slices={}", list.join(",")));
    }
    if c.no_timing {
        parts.push("--no-timing".to_string());
    }
    parts.join(" ")
}

fn write_echo(dir: &Path, echo: serde_json::Value) -> Outcome<()> {
    let path = dir.join(ECHO_FILE);
    let text = serde_json::to_string_pretty(&echo).map_err(runtime("cannot encode configuration"))?;
    fs::write(&path, text + "\n").map_err(runtime(format!("cannot write {}", path.display())))
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn run_stem(inr: &Path) -> String {
    inr.file_stem().map_or("run".to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_report(path: &Path, records: &[IterationRecord], timing: bool) -> Outcome<()> {
    let mut buf = Vec::new();
    write_report_csv(&mut buf, records, timing).map_err(runtime("cannot format report"))?;
    fs::write(path, buf).map_err(runtime(format!("cannot write {}", path.display())))
}

fn print_progress(label: &str, c: &Campaign) {
    for r in &c.report {
        let rmse = if r.rmse.is_finite() { format!("{:.4e}", r.rmse) } else { r.rmse.to_string() };
        println!("{label}iteration {:>2}  dofs {:>8}  leaves {:>8}  rmse {rmse}", r.iteration, r.dofs, r.leaf_count);
    }
}

fn cmd_run(a: RunArgs) -> Outcome<()> {
    let c = &a.campaign;
    check_mode_flags(c)?;
    if let (Some(o), Some(r)) = (&a.out, &a.report) {
        if o == r {
            return Err(invalid(format!("--out and --report both name {}", o.display())));
        }
    }
    set_threads(c.net.threads)?;
    let net = load_net(&c.net)?;
    let cfg = resolve_config(c, &net, None)?;
    let stem = run_stem(&c.net.inr);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(output_file_name(&stem, cfg.mode.name(), cfg.max_iterations, None)));
    let report = a.report.clone().unwrap_or_else(|| out.with_extension("csv"));
    let dir = parent_dir(&out);
    fs::create_dir_all(dir).map_err(runtime(format!("cannot create {}", dir.display())))?;
    write_echo(
        dir,
        json!({
            "command": resolved_command("run", c, &net, &cfg)
                + &format!(" --out {} --report {}", out.display(), report.display()),
            "inr": c.net.inr,
            "output_component": net.output_component(),
            "threads": c.net.threads,
            "include_timing": !c.no_timing,
            "out": out,
            "report": report,
            "config": cfg,
        }),
    )?;

    let start = Instant::now();
    let campaign = run_campaign(&net, &cfg).map_err(runtime("campaign failed"))?;
    print_progress("", &campaign);
    export_vtk(&campaign.mesh, &campaign.vertex_values, &out).map_err(runtime(format!("cannot write {}", out.display())))?;
    write_report(&report, &campaign.report, !c.no_timing)?;
    println!(
        "wrote {} and {} ({:.2}s)",
        out.display(),
        report.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_slice_run(a: SliceArgs) -> Outcome<()> {
    let c = &a.campaign;
    check_mode_flags(c)?;
    set_threads(c.net.threads)?;
    let net = load_net(&c.net)?;
    if net.input_dim() < 3 {
        return Err(invalid(format!(
            "--time-slices needs a network with at least 3 inputs, {} has {}",
            c.net.inr.display(),
            net.input_dim()
        )));
    }
    let cfg = resolve_config(c, &net, Some(a.time_slices.clone()))?;
    let axis = net.input_dim() - 1;
    let (lo, hi) = (net.domain().lo()[axis], net.domain().hi()[axis]);
    if let Some(t) = a.time_slices.iter().find(|t| **t < lo || **t > hi) {
        return Err(invalid(format!("--time-slices value {t} lies outside [{lo}, {hi}]")));
    }
    fs::create_dir_all(&a.out).map_err(runtime(format!("cannot create {}", a.out.display())))?;
    let stem = run_stem(&c.net.inr);
    write_echo(
        &a.out,
        json!({
            "command": resolved_command("slice-run", c, &net, &cfg) + &format!(" --out {}", a.out.display()),
            "inr": c.net.inr,
            "output_component": net.output_component(),
            "threads": c.net.threads,
            "include_timing": !c.no_timing,
            "out": a.out,
            "config": cfg,
        }),
    )?;

    let slices = run_time_slices(&net, &cfg).map_err(runtime("slice campaign failed"))?;
    for s in &slices {
        let iterations = s.campaign.report.len();
        let name = output_file_name(&stem, cfg.mode.name(), iterations, Some((axis, s.t)));
        let vtk = a.out.join(&name);
        print_progress(&format!("t={}  ", s.t), &s.campaign);
        export_vtk(&s.campaign.mesh, &s.campaign.vertex_values, &vtk)
            .map_err(runtime(format!("cannot write {}", vtk.display())))?;
        write_report(&vtk.with_extension("csv"), &s.campaign.report, !c.no_timing)?;
        println!("wrote {}", vtk.display());
    }
    Ok(())
}

fn cmd_neuron_map(a: MapArgs) -> Outcome<()> {
    set_threads(a.net.threads)?;
    if !(a.eps > 0.0) {
        return Err(invalid(format!("--eps must be positive, got {}", a.eps)));
    }
    if a.n_id == Some(0) {
        return Err(invalid("--n-id must be at least 1"));
    }
    let net = load_net(&a.net)?;
    let n_id = a.n_id.unwrap_or(net.max_hidden_width().max(1));
    let dir = parent_dir(&a.out);
    fs::create_dir_all(dir).map_err(runtime(format!("cannot create {}", dir.display())))?;
    write_echo(
        dir,
        json!({
            "command": format!(
                "pruning-amr neuron-map --inr {} --eps {} --n-id {n_id} --seed {} --initial-uniform {} --output-component {} --out {}",
                a.net.inr.display(), a.eps, a.seed, a.initial_uniform, net.output_component(), a.out.display()
            ),
            "inr": a.net.inr,
            "output_component": net.output_component(),
            "threads": a.net.threads,
            "eps": a.eps,
            "n_id": n_id,
            "seed": a.seed,
            "levels": a.initial_uniform,
            "out": a.out,
        }),
    )?;

    let mut mesh = MeshTree::new(net.domain().clone());
    for _ in 0..a.initial_uniform {
        mesh.refine_uniform().map_err(runtime("cannot refine mesh"))?;
    }
    let map = neuron_count_map(&net, &mesh, a.eps, n_id, a.seed).map_err(runtime("neuron map failed"))?;
    let counts: Vec<usize> = map.iter().map(|m| m.1).collect();
    export_neuron_map(&mesh, &counts, &a.out).map_err(runtime(format!("cannot write {}", a.out.display())))?;
    let (min, max) = (counts.iter().min().unwrap_or(&0), counts.iter().max().unwrap_or(&0));
    println!("{} leaves, kept neurons {min}..{max}; wrote {}", counts.len(), a.out.display());
    Ok(())
}

fn parse_corner(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_focus(s: &str) -> Outcome<(DomainBox, f64)> {
    let bad = || invalid(format!("--focus `{s}`: expected LO:HI:FRACTION, e.g. 0,0:0.25,0.25:0.5"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, frac] = parts[..] else { return Err(bad()) };
    let (lo, hi) = (parse_corner(lo).ok_or_else(bad)?, parse_corner(hi).ok_or_else(bad)?);
    let frac: f64 = frac.trim().parse().map_err(|_| bad())?;
    let b = DomainBox::new(lo, hi).map_err(|e| invalid(format!("--focus `{s}`: {e}")))?;
    Ok((b, frac))
}

fn cmd_fit(a: FitArgs) -> Outcome<()> {
    set_threads(a.threads)?;
    let target: Target = a.target.parse().map_err(|e| invalid(format!("--target: {e}")))?;
    let activation: ActivationKind = a
        .activation
        .parse()
        .map_err(|e| invalid(format!("--activation: {e}")))?;
    let focus = a.focus.iter().map(|f| parse_focus(f)).collect::<Outcome<Vec<_>>>()?;
    let spec = FitSpec {
        sample_count: a.samples,
        holdout_count: a.holdout,
        epochs: a.epochs,
        learning_rate: a.lr,
        final_learning_rate: a.lr_final,
        seed: a.seed,
        focus,
        ..FitSpec::new(
            target,
            Architecture {
                depth: a.depth,
                width: a.width,
                activation,
                fourier: a.fourier_features.map(|features| FourierSpec { features, scale: a.fourier_scale }),
            },
        )
    };
    let log = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.csv"));
    let dir = parent_dir(&a.out);
    fs::create_dir_all(dir).map_err(runtime(format!("cannot create {}", dir.display())))?;
    let mut command = format!(
        "pruning-amr fit --target {} --depth {} --width {} --activation {} --epochs {} --samples {} --holdout {} \
         --lr {} --lr-final {} --seed {}",
        a.target, a.depth, a.width, activation, a.epochs, a.samples, a.holdout, a.lr, a.lr_final, a.seed
    );
    if let Some(n) = a.fourier_features {
        command += &format!(" --fourier-features {n} --fourier-scale {}", a.fourier_scale);
    }
    for f in &a.focus {
        command += &format!(" --focus {f}");
    }
    command += &format!(" --out {} --log {}", a.out.display(), log.display());
    write_echo(
        dir,
        json!({
            "command": command,
            "target": a.target,
            "architecture": {
                "depth": a.depth,
                "width": a.width,
                "activation": activation.tag(),
                "fourier_features": a.fourier_features,
                "fourier_scale": a.fourier_scale,
            },
            "epochs": a.epochs,
            "samples": a.samples,
            "holdout": a.holdout,
            "learning_rate": a.lr,
            "final_learning_rate": a.lr_final,
            "seed": a.seed,
            "focus": a.focus,
            "threads": a.threads,
            "out": a.out,
            "log": log,
        }),
    )?;

    let result = fit(&spec).map_err(|e| match e {
        inr_amr::Error::InvalidConfig(m) => invalid(m),
        other => Failure::Runtime(format!("fit failed: {other}")),
    })?;
    result.net.save(&a.out).map_err(runtime(format!("cannot write {}", a.out.display())))?;
    let mut buf = Vec::new();
    result.write_log(&mut buf).map_err(runtime("cannot format log"))?;
    fs::write(&log, buf).map_err(runtime(format!("cannot write {}", log.display())))?;
    println!(
        "held-out rmse {:.4e} -> {:.4e}; wrote {} and {}",
        result.initial_rmse,
        result.final_rmse,
        a.out.display(),
        log.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Outcome<()> {
    let text = fs::read_to_string(&a.path).map_err(|e| invalid(format!("cannot read {}: {e}", a.path.display())))?;
    let rows = read_report_csv(&text).map_err(|e| invalid(format!("{}: {e}", a.path.display())))?;
    println!("{:>9} {:>10} {:>10} {:>14} {:>10}", "iteration", "dofs", "leaves", "rmse", "time [s]");
    for r in &rows {
        println!(
            "{:>9} {:>10} {:>10} {:>14.6e} {:>10.3}",
            r.iteration, r.dofs, r.leaf_count, r.rmse, r.wall_time
        );
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        println!(
            "{} iterations, dofs {} -> {}, rmse {:.4e} -> {:.4e}",
            rows.len(),
            first.dofs,
            last.dofs,
            first.rmse,
            last.rmse
        );
    }
    Ok(())
}
