//! Batch command-line interface: simulate | estimate | fields | graphon |
//! experiment | validate. Data goes to files or stdout; diagnostics go to
//! stderr. Exit codes: 0 success, 1 user error, 2 internal error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{
    build_experiment, build_kernels, build_system, build_theta, read_config, ConfigError, ExperimentKind, ThetaConfig,
};
use crate::csvio::{format_f64, sha256_file_hex, write_csv, Cell, RunManifest};
use crate::estimators::{beta_hat, fields_on_grid, mu_hat, pi_hat, Cutoffs, EvalGrid};
use crate::experiments::{
    run_density_convergence, run_finite_graph_oracle, run_graphon_recovery, run_homogeneous_oracle,
    run_minimax_rate, run_variance_scaling, ExperimentReport,
};
use crate::graphon::g_hat_pipeline;
use crate::kernels::{validate_kernels_with, Bandwidths};
use crate::model::validate_spec;
use crate::simulator::{load_trajectories, save_trajectories, simulate, TimeGrid};

const USAGE: &str = "\
gmfe - graphon mean-field simulation and estimation

USAGE:
  gmfe simulate  --config <file> --n <int> --steps <int> --seed <int> --out <path>
  gmfe estimate  --traj <path> --at <t,u,x> [--at ...] --h <h1,h2,h3> [--kappa2 <v>]
  gmfe fields    --traj <path> --grid <t=lo:hi:n,u=lo:hi:n,x=lo:hi:n> --h <h1,h2,h3>
                 [--kappa2 <v>] [--r <v>] --out <csv>
  gmfe graphon   --traj <path> --pairs <file> --theta <config> --out <csv>
  gmfe experiment <name> --config <file> --out <dir>
      names: density_convergence | minimax_rate | variance_scaling |
             homogeneous_oracle | finite_graph_oracle | graphon_recovery
  gmfe validate  --config <file> [--samples <int>] [--tol <v>]

Every file-producing command writes a `<output>.manifest.json` (experiments
write `meta.json` in the output directory) recording the command line, input
digests, tool version, and master seed. Thread count is controlled by the
RAYON_NUM_THREADS environment variable only.
";

enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn user(e: impl std::fmt::Display) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(format!("io error: {e}"))
    }
}

/// Route a command line (without the binary name) to its subcommand.
pub fn dispatch(args: &[String]) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        println!("{USAGE}");
        return if args.is_empty() { 1 } else { 0 };
    }
    let result = match args[0].as_str() {
        "simulate" => cmd_simulate(args),
        "estimate" => cmd_estimate(args),
        "fields" => cmd_fields(args),
        "graphon" => cmd_graphon(args),
        "experiment" => cmd_experiment(args),
        "validate" => cmd_validate(args),
        other => Err(CliError::User(format!("unknown subcommand '{other}'\n\n{USAGE}"))),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            2
        }
    }
}

struct Flags {
    values: HashMap<String, Vec<String>>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut values: HashMap<String, Vec<String>> = HashMap::new();
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            if let Some(name) = a.strip_prefix("--") {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| CliError::User(format!("flag --{name} needs a value")))?;
                values.entry(name.to_string()).or_default().push(v.clone());
                i += 2;
            } else {
                return Err(CliError::User(format!("unexpected positional argument '{a}'\n\n{USAGE}")));
            }
        }
        Ok(Self { values })
    }

    fn one(&self, name: &str) -> Result<&str, CliError> {
        match self.values.get(name).map(|v| v.as_slice()) {
            Some([v]) => Ok(v),
            Some(_) => Err(CliError::User(format!("flag --{name} given more than once"))),
            None => Err(CliError::User(format!("missing required flag --{name}\n\n{USAGE}"))),
        }
    }

    fn opt(&self, name: &str) -> Result<Option<&str>, CliError> {
        match self.values.get(name).map(|v| v.as_slice()) {
            Some([v]) => Ok(Some(v)),
            Some(_) => Err(CliError::User(format!("flag --{name} given more than once"))),
            None => Ok(None),
        }
    }

    fn many(&self, name: &str) -> Vec<String> {
        self.values.get(name).cloned().unwrap_or_default()
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<(), CliError> {
        for key in self.values.keys() {
            if !known.contains(&key.as_str()) {
                return Err(CliError::User(format!("unknown flag --{key}\n\n{USAGE}")));
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::User(format!("cannot parse {what} from '{s}': {e}")))
}

/// "h1,h2,h3" -> Bandwidths.
pub fn parse_bandwidths(s: &str) -> Result<Bandwidths, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected h1,h2,h3 but got '{s}'"));
    }
    let vals: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| format!("bad bandwidth in '{s}': {e}"))?;
    Bandwidths::new(vals[0], vals[1], vals[2]).map_err(|e| e.to_string())
}

/// "t,u,x1[,x2,...]" -> (t, u, xs).
pub fn parse_at(s: &str) -> Result<(f64, f64, Vec<f64>), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() < 3 {
        return Err(format!("expected t,u,x... but got '{s}'"));
    }
    let vals: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| format!("bad coordinate in '{s}': {e}"))?;
    Ok((vals[0], vals[1], vals[2..].to_vec()))
}

/// "t=lo:hi:n,u=lo:hi:n,x=lo:hi:n" -> three axis triples.
pub fn parse_grid_spec(s: &str) -> Result<[(f64, f64, usize); 3], String> {
    let mut t = None;
    let mut u = None;
    let mut x = None;
    for part in s.split(',') {
        let (name, rest) = part.split_once('=').ok_or_else(|| format!("grid part '{part}' is not name=lo:hi:count"))?;
        let fields: Vec<&str> = rest.split(':').collect();
        if fields.len() != 3 {
            return Err(format!("grid part '{part}' needs lo:hi:count"));
        }
        let lo: f64 = fields[0].trim().parse().map_err(|e| format!("bad '{part}': {e}"))?;
        let hi: f64 = fields[1].trim().parse().map_err(|e| format!("bad '{part}': {e}"))?;
        let count: usize = fields[2].trim().parse().map_err(|e| format!("bad '{part}': {e}"))?;
        if count == 0 {
            return Err(format!("grid part '{part}' needs count >= 1"));
        }
        match name.trim() {
            "t" => t = Some((lo, hi, count)),
            "u" => u = Some((lo, hi, count)),
            "x" => x = Some((lo, hi, count)),
            other => return Err(format!("unknown grid axis '{other}' (t | u | x)")),
        }
    }
    match (t, u, x) {
        (Some(t), Some(u), Some(x)) => Ok([t, u, x]),
        _ => Err("grid spec must define all of t, u, x".into()),
    }
}

/// Lines of "u0,v0" with optional header and # comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(format!("line {}: expected 'u0,v0', got '{line}'", lineno + 1));
        }
        match (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
            (Ok(u), Ok(v)) => out.push((u, v)),
            _ if lineno == 0 => continue, // header row
            _ => return Err(format!("line {}: cannot parse '{line}'", lineno + 1)),
        }
    }
    if out.is_empty() {
        return Err("pairs file contains no (u0, v0) rows".into());
    }
    Ok(out)
}

fn cmd_simulate(args: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let flags = Flags::parse(&args[1..])?;
    flags.reject_unknown(&["config", "n", "steps", "seed", "out"])?;
    let config_path = flags.one("config")?.to_string();
    let n: usize = parse_num(flags.one("n")?, "--n")?;
    let steps: usize = parse_num(flags.one("steps")?, "--steps")?;
    let seed: u64 = parse_num(flags.one("seed")?, "--seed")?;
    let out = PathBuf::from(flags.one("out")?);

    let cfg = read_config(&config_path)?;
    let sys_cfg = cfg.system.as_ref().ok_or_else(|| CliError::User("config has no [system] section".into()))?;
    let spec = build_system(sys_cfg)?;
    let grid = TimeGrid::new(spec.t_horizon, steps).map_err(CliError::user)?;
    let traj = simulate(&spec, n, grid, seed).map_err(|e| CliError::Internal(e.to_string()))?;
    save_trajectories(&traj, &out).map_err(|e| CliError::Internal(e.to_string()))?;

    let mut manifest = RunManifest::new(args);
    manifest.config_digest = Some(sha256_file_hex(&config_path)?);
    manifest.trajectory_digests.push(sha256_file_hex(&out)?);
    manifest.master_seed = Some(seed);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.outputs.push(out.display().to_string());
    manifest.write(manifest_path(&out))?;
    eprintln!("wrote {} ({} particles, {} steps)", out.display(), n, steps);
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn warn_h1(h: &Bandwidths, dt: f64) {
    if h.h1_too_coarse_for(dt) {
        eprintln!(
            "warning: h1 = {} is below 10 dt = {}; the stochastic-integral estimator may be under-resolved",
            h.h1,
            10.0 * dt
        );
    }
}

fn cmd_estimate(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(&args[1..])?;
    flags.reject_unknown(&["traj", "at", "h", "kappa2"])?;
    let traj = load_trajectories(flags.one("traj")?).map_err(CliError::user)?;
    let h = parse_bandwidths(flags.one("h")?).map_err(CliError::User)?;
    let kappa2: f64 = match flags.opt("kappa2")? {
        Some(v) => parse_num(v, "--kappa2")?,
        None => 1e-3,
    };
    let ats = flags.many("at");
    if ats.is_empty() {
        return Err(CliError::User("need at least one --at t,u,x".into()));
    }
    warn_h1(&h, traj.grid.dt());
    let triple = crate::kernels::KernelTriple::biweight();

    let mut header = vec!["t".to_string(), "u".to_string()];
    for c in 0..traj.d {
        header.push(format!("x{}", c + 1));
    }
    header.push("mu".into());
    for c in 0..traj.d {
        header.push(format!("pi{}", c + 1));
    }
    for c in 0..traj.d {
        header.push(format!("beta{}", c + 1));
    }
    println!("{}", header.join(","));
    for at in &ats {
        let (t0, u0, xs) = parse_at(at).map_err(CliError::User)?;
        if xs.len() != traj.d {
            return Err(CliError::User(format!("--at expects {} state coordinates, got {}", traj.d, xs.len())));
        }
        let mu = mu_hat(&traj, &triple, t0, u0, &xs, &h).map_err(CliError::user)?;
        let pi = pi_hat(&traj, &triple, t0, u0, &xs, &h).map_err(CliError::user)?;
        let beta = beta_hat(&traj, &triple, t0, u0, &xs, &h, kappa2).map_err(CliError::user)?;
        let mut row = vec![format_f64(t0), format_f64(u0)];
        row.extend(xs.iter().map(|&v| format_f64(v)));
        row.push(format_f64(mu));
        row.extend(pi.iter().map(|&v| format_f64(v)));
        row.extend(beta.iter().map(|&v| format_f64(v)));
        println!("{}", row.join(","));
    }
    Ok(())
}

fn cmd_fields(args: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let flags = Flags::parse(&args[1..])?;
    flags.reject_unknown(&["traj", "grid", "h", "kappa2", "r", "out"])?;
    let traj_path = flags.one("traj")?.to_string();
    let traj = load_trajectories(&traj_path).map_err(CliError::user)?;
    let h = parse_bandwidths(flags.one("h")?).map_err(CliError::User)?;
    let [t, u, x] = parse_grid_spec(flags.one("grid")?).map_err(CliError::User)?;
    let kappa2: f64 = match flags.opt("kappa2")? {
        Some(v) => parse_num(v, "--kappa2")?,
        None => 1e-3,
    };
    let r: f64 = match flags.opt("r")? {
        Some(v) => parse_num(v, "--r")?,
        None => x.0.abs().max(x.1.abs()),
    };
    let out = PathBuf::from(flags.one("out")?);
    warn_h1(&h, traj.grid.dt());

    let grid = EvalGrid::uniform(t, u, x, traj.d).map_err(CliError::user)?;
    let cutoffs = Cutoffs::new(1.0, 1.0, kappa2, r, 1.0).map_err(CliError::user)?;
    let triple = crate::kernels::KernelTriple::biweight();
    let fields = fields_on_grid(&traj, &triple, &grid, &h, &cutoffs).map_err(CliError::user)?;

    let mut header: Vec<String> = vec!["t".into(), "u".into()];
    for c in 0..traj.d {
        header.push(format!("x{}", c + 1));
    }
    header.push("mu".into());
    for c in 0..traj.d {
        header.push(format!("pi{}", c + 1));
    }
    for c in 0..traj.d {
        header.push(format!("beta{}", c + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(grid.n_nodes());
    let mut xbuf = vec![0.0; traj.d];
    for (a, &tv) in grid.t_nodes.iter().enumerate() {
        for (b, &uv) in grid.u_nodes.iter().enumerate() {
            for c in 0..grid.n_x() {
                grid.x_node(c, &mut xbuf);
                let i3 = fields.idx3(a, b, c);
                let mut row = vec![Cell::F(tv), Cell::F(uv)];
                row.extend(xbuf.iter().map(|&v| Cell::F(v)));
                row.push(Cell::F(fields.mu[i3]));
                for comp in 0..traj.d {
                    row.push(Cell::F(fields.pi[i3 * traj.d + comp]));
                }
                for comp in 0..traj.d {
                    row.push(Cell::F(fields.beta[i3 * traj.d + comp]));
                }
                rows.push(row);
            }
        }
    }
    write_csv(&out, &header_refs, &rows)?;

    let mut manifest = RunManifest::new(args);
    manifest.trajectory_digests.push(sha256_file_hex(&traj_path)?);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.outputs.push(out.display().to_string());
    manifest.write(manifest_path(&out))?;
    eprintln!("wrote {} ({} nodes)", out.display(), grid.n_nodes());
    Ok(())
}

fn cmd_graphon(args: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let flags = Flags::parse(&args[1..])?;
    flags.reject_unknown(&["traj", "pairs", "theta", "out"])?;
    let traj_path = flags.one("traj")?.to_string();
    let pairs_path = flags.one("pairs")?.to_string();
    let theta_path = flags.one("theta")?.to_string();
    let out = PathBuf::from(flags.one("out")?);

    let traj = load_trajectories(&traj_path).map_err(CliError::user)?;
    let pairs_text = std::fs::read_to_string(&pairs_path)
        .map_err(|e| CliError::User(format!("cannot read pairs file {pairs_path}: {e}")))?;
    let pairs = parse_pairs(&pairs_text).map_err(CliError::User)?;
    let cfg = read_config(&theta_path)?;
    let theta_cfg = cfg.theta.clone().unwrap_or(ThetaConfig::default());
    let theta = build_theta(&theta_cfg, cfg.system.as_ref(), traj.n, traj.grid.t_horizon)?;
    let triple = build_kernels(cfg.kernels.as_ref())?;
    warn_h1(&theta.h, traj.grid.dt());
    if let Some(sys) = cfg.system.as_ref() {
        if let Ok(spec) = build_system(sys) {
            if let Some(msg) = theta.cut.kappa0_advisory(theta.g0, spec.drift.f.l2_norm(spec.d)) {
                eprintln!("warning: {msg}");
            }
        }
    }

    let pipeline = g_hat_pipeline(&traj, &triple, &theta).map_err(CliError::user)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for &(u0, v0) in &pairs {
        let r = pipeline.evaluate(u0, v0).map_err(CliError::user)?;
        rows.push(vec![
            Cell::F(u0),
            Cell::F(v0),
            Cell::F(r.g_hat),
            Cell::F(r.a_num),
            Cell::F(r.a_den_raw),
            Cell::F(r.masked_fraction),
        ]);
    }
    write_csv(&out, &["u0", "v0", "g_hat", "a_hat_num", "a_hat_den", "masked_fraction"], &rows)?;

    let mut manifest = RunManifest::new(args);
    manifest.config_digest = Some(sha256_file_hex(&theta_path)?);
    manifest.trajectory_digests.push(sha256_file_hex(&traj_path)?);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.outputs.push(out.display().to_string());
    manifest.write(manifest_path(&out))?;
    eprintln!("wrote {} ({} pairs)", out.display(), pairs.len());
    Ok(())
}

fn cmd_experiment(args: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    if args.len() < 2 || args[1].starts_with("--") {
        return Err(CliError::User(format!("experiment needs a name\n\n{USAGE}")));
    }
    let name = args[1].clone();
    let flags = Flags::parse(&args[2..])?;
    flags.reject_unknown(&["config", "out"])?;
    let config_path = flags.one("config")?.to_string();
    let out_dir = PathBuf::from(flags.one("out")?);

    let mut cfg = read_config(&config_path)?;
    match cfg.experiment.as_mut() {
        Some(e) => {
            if e.name != name {
                return Err(CliError::User(format!(
                    "experiment name '{name}' does not match config [experiment].name = '{}'",
                    e.name
                )));
            }
        }
        None => return Err(CliError::User("config has no [experiment] section".into())),
    }
    let kind = build_experiment(&cfg)?;
    let report = match kind {
        ExperimentKind::DensityConvergence(c) => run_density_convergence(&c),
        ExperimentKind::MinimaxRate(c) => run_minimax_rate(&c),
        ExperimentKind::VarianceScaling(c) => run_variance_scaling(&c),
        ExperimentKind::Homogeneous(c) => run_homogeneous_oracle(&c),
        ExperimentKind::FiniteGraph(c) => run_finite_graph_oracle(&c),
        ExperimentKind::Recovery(c) => run_graphon_recovery(&c),
    }
    .map_err(CliError::user)?;

    std::fs::create_dir_all(&out_dir)?;
    write_report(&out_dir, &report)?;

    let mut manifest = RunManifest::new(args);
    manifest.config_digest = Some(sha256_file_hex(&config_path)?);
    manifest.master_seed = cfg.experiment.as_ref().map(|e| e.master_seed);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    for f in ["report.csv", "aggregate.csv", "slope.txt"] {
        manifest.outputs.push(out_dir.join(f).display().to_string());
    }
    manifest.write(out_dir.join("meta.json"))?;
    eprintln!("experiment '{name}' complete; results in {}", out_dir.display());
    Ok(())
}

/// report.csv (raw cells), aggregate.csv, slope.txt.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> std::io::Result<()> {
    let raw_header: Vec<&str> = report.raw_header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<Cell>> = report.raw.iter().map(|r| r.iter().map(|&v| Cell::F(v)).collect()).collect();
    write_csv(dir.join("report.csv"), &raw_header, &rows)?;

    let agg_header: Vec<&str> = report.agg_header.iter().map(String::as_str).collect();
    let agg_rows: Vec<Vec<Cell>> = report.agg.iter().map(|r| r.iter().map(|&v| Cell::F(v)).collect()).collect();
    write_csv(dir.join("aggregate.csv"), &agg_header, &agg_rows)?;

    let mut slope_text = String::new();
    match &report.slope {
        Some(s) => {
            slope_text.push_str(&format!("slope {}\n", format_f64(s.slope)));
            slope_text.push_str(&format!("intercept {}\n", format_f64(s.intercept)));
            slope_text.push_str(&format!("half_width {}\n", format_f64(s.half_width)));
            match s.target {
                Some(t) => slope_text.push_str(&format!("target {}\n", format_f64(t))),
                None => slope_text.push_str("target none\n"),
            }
            let resid: Vec<String> = s.residuals.iter().map(|&r| format_f64(r)).collect();
            slope_text.push_str(&format!("residuals {}\n", resid.join(" ")));
        }
        None => slope_text.push_str("slope absent\n"),
    }
    for note in &report.notes {
        slope_text.push_str(&format!("note {note}\n"));
    }
    std::fs::write(dir.join("slope.txt"), slope_text)
}

fn cmd_validate(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(&args[1..])?;
    flags.reject_unknown(&["config", "samples", "tol"])?;
    let cfg = read_config(flags.one("config")?)?;
    let samples: usize = match flags.opt("samples")? {
        Some(v) => parse_num(v, "--samples")?,
        None => 2000,
    };
    let tol: f64 = match flags.opt("tol")? {
        Some(v) => parse_num(v, "--tol")?,
        None => 1e-6,
    };
    let sys_cfg = cfg.system.as_ref().ok_or_else(|| CliError::User("config has no [system] section".into()))?;
    let spec = build_system(sys_cfg)?;
    let report = validate_spec(&spec, samples, tol);
    println!("# coefficient conditions");
    print!("{report}");
    let triple = build_kernels(cfg.kernels.as_ref())?;
    let kreport = validate_kernels_with(&triple, spec.d, 1e-8, 1 << 12);
    println!("# kernel conditions");
    print!("{kreport}");
    Ok(())
}
