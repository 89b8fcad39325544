//! Command-line front end.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_config, parse_methods, RunConfig};
use crate::error::{Error, Result};
use crate::sequence::SequenceModel;
use crate::sim::{classify_trace, sequence_spectrum, sim_verdict, simulate, SequenceSpectrum, SimTrace};
use crate::stability::{
    critical, eigen_loci, sample_fn, sweep, verdict, Locus, Method, Scenario, Stability, StabilityVerdict,
};
use crate::tf::{CRational, C64};

#[derive(Debug, Parser)]
#[command(name = "vscstab", version, about = "Sequence-impedance stability analysis of grid-tied converters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (INI).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Lowest contour frequency, Hz (overrides [analysis] fmin).
    #[arg(long, global = true)]
    pub fmin: Option<f64>,
    /// Contour truncation frequency, Hz (overrides [analysis] fmax).
    #[arg(long, global = true)]
    pub fmax: Option<f64>,
    /// Log-spaced samples per half axis before refinement.
    #[arg(long, global = true)]
    pub npoints: Option<usize>,
    /// ap, gnc, gasin, sim or all (comma-separated).
    #[arg(long, global = true)]
    pub method: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Frequency responses of every model transfer function.
    Impedance,
    /// AP and GNC loci.
    Locus,
    /// One verdict per method.
    Verdict,
    /// Verdict table over the configured sweep.
    Sweep,
    /// Time-domain trace and sequence spectrum.
    Simulate,
    /// All four methods on one configuration plus an agreement row.
    Compare,
}

/// Formats with 12 significant digits; absent values are empty fields.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.11e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub const LOCUS_HEADER: &str = "f_hz,re,im,curve";
pub const VERDICT_HEADER: &str = "param,value,method,stable,winding_p,winding_n,iop_hz,damping_pu";
pub const SPECTRUM_HEADER: &str = "osc_freq_hz,i_p_pu,i_n_pu,f_u";
pub const TRACE_HEADER: &str = "t,i_d,i_q,theta_pll,u_g_mag";

fn push_locus(buf: &mut String, l: &Locus) {
    for (f, v) in l.freqs.iter().zip(&l.values) {
        let _ = writeln!(buf, "{},{},{},{}", num(*f), num(v.re), num(v.im), l.label);
    }
}

pub fn verdict_row(param: &str, value: f64, v: &StabilityVerdict) -> String {
    format!(
        "{param},{},{},{},{},{},{},{}",
        num(value),
        v.method,
        v.stable,
        v.winding_p,
        v.winding_n,
        opt(v.iop_hz),
        opt(v.damping)
    )
}

pub fn trace_csv(tr: &SimTrace) -> String {
    let mut buf = String::with_capacity(tr.len() * 80);
    buf.push_str(TRACE_HEADER);
    buf.push('\n');
    for k in 0..tr.len() {
        let _ = writeln!(
            buf,
            "{},{},{},{},{}",
            num(tr.t[k]),
            num(tr.i_d[k]),
            num(tr.i_q[k]),
            num(tr.theta_pll[k]),
            num(tr.u_g_mag[k])
        );
    }
    buf
}

pub fn spectrum_csv(s: &SequenceSpectrum) -> String {
    format!("{SPECTRUM_HEADER}\n{},{},{},{}\n", num(s.osc_freq), num(s.i_p_mag), num(s.i_n_mag), num(s.f_u))
}

fn write(out: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let p = out.join(name);
    std::fs::write(&p, body)?;
    Ok(p)
}

/// Parameter reported in single-configuration verdict rows.
fn base_param(s: &Scenario) -> (&'static str, f64) {
    match s.design {
        Some(d) => ("pll_bw", d.pll_bw),
        None => ("kp_pll", s.params.ctrl.kp_pll),
    }
}

fn run_methods(cfg: &RunConfig, scenario: &Scenario, methods: &[Method]) -> Result<Vec<StabilityVerdict>> {
    let model = scenario.model()?;
    methods
        .iter()
        .map(|&m| match m {
            Method::Sim => sim_verdict(&scenario.params, &cfg.sim, cfg.sim_window, cfg.spectrum_window),
            _ => verdict(&model, m, &cfg.grid),
        })
        .collect()
}

fn impedance(cfg: &RunConfig, out: &Path) -> Result<String> {
    let m = cfg.scenario.model()?;
    let curves: Vec<(&str, &CRational)> = vec![
        ("z_sigma", &m.z_sigma),
        ("h_i", &m.h_i),
        ("h_pll", &m.h_pll),
        ("g_pll", &m.g_pll),
        ("c_pll", &m.c_pll),
        ("z_grid_p", &m.z_grid_p),
        ("z_grid_n", &m.z_grid_n),
        ("d_pll", &m.d_pll),
        ("z_c_p", &m.z_c_p),
        ("z_c_n", &m.z_c_n),
        ("r", &m.r),
        ("gamma", &m.gamma),
        ("z_loop_p", &m.z_loop_p),
        ("z_loop_n", &m.z_loop_n),
        ("z_source_pp", &m.z_source.pp),
        ("z_source_pn", &m.z_source.pn),
        ("z_source_np", &m.z_source.np),
        ("z_source_nn", &m.z_source.nn),
    ];
    let freqs = log_freqs(cfg);
    let mut buf = format!("{LOCUS_HEADER}\n");
    for (name, x) in curves {
        for &f in &freqs {
            if let Ok(v) = x.eval(C64::new(0.0, 2.0 * PI * f)) {
                let _ = writeln!(buf, "{},{},{},{name}", num(f), num(v.re), num(v.im));
            }
        }
    }
    let p = write(out, "impedance.csv", &buf)?;
    Ok(format!("wrote {}", p.display()))
}

fn log_freqs(cfg: &RunConfig) -> Vec<f64> {
    let g = &cfg.grid;
    let (a, b) = (g.f_min.ln(), g.f_max.ln());
    (0..g.n_points).map(|k| (a + (b - a) * k as f64 / (g.n_points - 1) as f64).exp()).collect()
}

fn loci(cfg: &RunConfig, out: &Path) -> Result<String> {
    let m: SequenceModel = cfg.scenario.model()?;
    let origin = C64::new(0.0, 0.0);
    let ap_p = sample_fn(|s| m.z_loop_p.eval(s), "ap_p", origin, &cfg.grid)?;
    let ap_n = sample_fn(|s| m.z_loop_n.eval(s), "ap_n", origin, &cfg.grid)?;
    let (mut g1, mut g2) = eigen_loci(&m, &cfg.grid)?;
    g1.label = "gnc_1".into();
    g2.label = "gnc_2".into();
    let mut buf = format!("{LOCUS_HEADER}\n");
    for l in [&ap_p, &ap_n, &g1, &g2] {
        push_locus(&mut buf, l);
    }
    let p = write(out, "loci.csv", &buf)?;
    Ok(format!("wrote {}", p.display()))
}

fn verdicts(cfg: &RunConfig, out: &Path) -> Result<(String, bool)> {
    let vs = run_methods(cfg, &cfg.scenario, &cfg.methods)?;
    let (param, value) = base_param(&cfg.scenario);
    let mut buf = format!("{VERDICT_HEADER}\n");
    let mut summary = String::new();
    for v in &vs {
        let row = verdict_row(param, value, v);
        let _ = writeln!(buf, "{row}");
        let _ = writeln!(summary, "{row}");
    }
    let p = write(out, "verdict.csv", &buf)?;
    let _ = write!(summary, "wrote {}", p.display());
    Ok((summary, vs.iter().any(|v| v.stable == Stability::Inconclusive)))
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).clamp(1, items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (xs, out) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (x, slot) in xs.iter().zip(out.iter_mut()) {
                    *slot = Some(f(x));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot is filled")).collect()
}

fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<(String, bool)> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::Config {
        line: 0,
        key: "sweep".into(),
        msg: "the sweep command needs a [sweep] section".into(),
    })?;
    let freq: Vec<Method> = cfg.methods.iter().copied().filter(|m| *m != Method::Sim).collect();
    let rows = sweep(&cfg.scenario, spec.param, &spec.values, &freq, &cfg.grid)?;
    let sims: Vec<Option<StabilityVerdict>> = if cfg.methods.contains(&Method::Sim) {
        par_map(&spec.values, |&v| -> Result<StabilityVerdict> {
            let s = cfg.scenario.with(spec.param, v)?;
            sim_verdict(&s.params, &cfg.sim, cfg.sim_window, cfg.spectrum_window)
        })
        .into_iter()
        .map(|r| r.map(Some))
        .collect::<Result<_>>()?
    } else {
        vec![None; spec.values.len()]
    };
    let mut buf = format!("{VERDICT_HEADER}\n");
    let mut inconclusive = false;
    for (row, sim) in rows.iter().zip(&sims) {
        for v in row.verdicts.iter().chain(sim.iter()) {
            inconclusive |= v.stable == Stability::Inconclusive;
            let _ = writeln!(buf, "{}", verdict_row(spec.param.name(), row.value, v));
        }
    }
    let p = write(out, "sweep.csv", &buf)?;
    let mut summary = format!("{} rows; wrote {}", rows.len(), p.display());
    if let Some((lo, hi, rtol)) = spec.critical {
        let c = critical(&cfg.scenario, spec.param, lo, hi, &cfg.grid, rtol)?;
        let p = write(out, "critical.csv", &format!("param,critical\n{},{}\n", spec.param.name(), num(c)))?;
        let _ = write!(summary, "\ncritical {} = {}; wrote {}", spec.param.name(), num(c), p.display());
    }
    Ok((summary, inconclusive))
}

fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let p = &cfg.scenario.params;
    let tr = simulate(p, &p.operating_point()?, &cfg.sim)?;
    let tp = write(out, "trace.csv", &trace_csv(&tr))?;
    let class = classify_trace(&tr, cfg.sim_window)?;
    let spec = sequence_spectrum(&tr, cfg.spectrum_window)?;
    let sp = write(out, "spectrum.csv", &spectrum_csv(&spec))?;
    Ok(format!(
        "{:?} sigma={} f_osc={} f_u={}; wrote {} and {}",
        class.kind,
        num(class.sigma),
        num(spec.osc_freq),
        num(spec.f_u),
        tp.display(),
        sp.display()
    ))
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<(String, bool)> {
    let all = [Method::Ap, Method::Gnc, Method::Gasin, Method::Sim];
    let vs = run_methods(cfg, &cfg.scenario, &all)?;
    let (param, value) = base_param(&cfg.scenario);
    let mut buf = format!("{VERDICT_HEADER}\n");
    for v in &vs {
        let _ = writeln!(buf, "{}", verdict_row(param, value, v));
    }
    let vp = write(out, "compare_verdicts.csv", &buf)?;
    let agree = vs.iter().all(|v| v.stable == vs[0].stable);
    let row =
        format!("{param},{},{},{},{},{},{agree}", num(value), vs[0].stable, vs[1].stable, vs[2].stable, vs[3].stable);
    let cp = write(out, "compare.csv", &format!("param,value,ap,gnc,gasin,sim,agree\n{row}\n"))?;
    Ok((
        format!("{row}\nwrote {} and {}", cp.display(), vp.display()),
        vs.iter().any(|v| v.stable == Stability::Inconclusive),
    ))
}

/// Applies command-line overrides to a parsed configuration.
pub fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<()> {
    if let Some(f) = cli.fmin {
        cfg.grid.f_min = f;
    }
    if let Some(f) = cli.fmax {
        cfg.grid.f_max = f;
    }
    if let Some(n) = cli.npoints {
        cfg.grid.n_points = n;
    }
    cfg.grid.validate()?;
    if let Some(m) = &cli.method {
        cfg.methods =
            parse_methods(m).ok_or(Error::Parameter { name: "method", msg: format!("unknown method list `{m}`") })?;
    }
    Ok(())
}

/// Runs one command; returns the summary and whether a verdict was inconclusive.
pub fn execute(cli: &Cli) -> Result<(String, bool)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        line: 0,
        key: "--config".into(),
        msg: "missing --config <path>".into(),
    })?;
    let mut cfg = parse_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Config { line: 0, key: "--config".into(), msg: format!("{}: {io}", path.display()) },
        other => other,
    })?;
    apply_overrides(&mut cfg, cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Impedance => impedance(&cfg, out).map(|s| (s, false)),
        Command::Locus => loci(&cfg, out).map(|s| (s, false)),
        Command::Verdict => verdicts(&cfg, out),
        Command::Sweep => sweep_cmd(&cfg, out),
        Command::Simulate => simulate_cmd(&cfg, out).map(|s| (s, false)),
        Command::Compare => compare(&cfg, out),
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::Parameter { .. } => "parameter",
        Error::Inconclusive(_) => "inconclusive",
        Error::Io(_) => "io",
        _ => "numerical",
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok((summary, inconclusive)) => {
            println!("{summary}");
            if inconclusive {
                4
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error kind={} exit={}: {}", kind(&e), e.exit_code(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
