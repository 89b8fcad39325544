//! INI-style run configuration.
//!
//! ```text
//! [circuit]
//! scr = 3
//!
//! [control]
//! cc_bw = 200
//! pll_bw = 13
//! ```
//!
//! Sections: `base`, `circuit`, `control`, `operating`, `analysis`, `sweep`,
//! `sim`. Comments start with `#` or `;`. Unknown sections or keys, duplicate
//! keys and unparsable values are errors that name the key and line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{design_gains, BaseQuantities, CircuitParams, ControllerParams, SystemParams};
use crate::sim::{PerturbKind, SimConfig};
use crate::stability::{Design, GridSettings, Method, Scenario, SweepParam};
use crate::tf::C64;

const SECTIONS: &[(&str, &[&str])] = &[
    ("base", &["s_base", "v_base", "f_base"]),
    ("circuit", &["r_f", "l_f", "r_t", "l_t", "r_s", "l_s", "scr"]),
    ("control", &["cc_bw", "pll_bw", "pll_damping", "kp_cc", "ki_cc", "kp_pll", "ki_pll"]),
    ("operating", &["i_ref", "i_ref_q", "u_s"]),
    ("analysis", &["fmin", "fmax", "npoints", "marginal_eps", "methods"]),
    (
        "sweep",
        &["param", "values", "start", "stop", "count", "critical", "critical_lo", "critical_hi", "critical_rtol"],
    ),
    (
        "sim",
        &[
            "dt",
            "t_end",
            "perturb_time",
            "perturb_kind",
            "perturb_size",
            "record_decimation",
            "window",
            "spectrum_window",
        ],
    ),
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Clone, Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn config_err(line: usize, key: &str, msg: impl Into<String>) -> Error {
    Error::Config { line, key: key.to_string(), msg: msg.into() }
}

fn strip_comment(s: &str) -> &str {
    match s.find(['#', ';']) {
        Some(k) => &s[..k],
        None => s,
    }
}

fn parse_ini(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = strip_comment(raw).trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| config_err(line, s, "unterminated section header"))?
                .trim()
                .to_string();
            if !SECTIONS.iter().any(|(n, _)| *n == name) {
                return Err(config_err(line, &name, "unknown section"));
            }
            if out.contains_key(&name) {
                return Err(config_err(line, &name, "duplicate section"));
            }
            out.insert(name.clone(), Section { line, entries: BTreeMap::new() });
            current = Some(name);
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| config_err(line, s, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        let name = current.as_ref().ok_or_else(|| config_err(line, key, "key outside any section"))?;
        let allowed = SECTIONS.iter().find(|(n, _)| n == name).map(|(_, keys)| *keys).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(config_err(line, key, format!("unknown key in [{name}]; allowed: {}", allowed.join(", "))));
        }
        if value.is_empty() {
            return Err(config_err(line, key, "empty value"));
        }
        let sec = out.get_mut(name).expect("section inserted at its header");
        if sec.entries.contains_key(key) {
            return Err(config_err(line, key, "duplicate key"));
        }
        sec.entries.insert(key.to_string(), Entry { value: value.to_string(), line });
    }
    Ok(out)
}

struct Reader<'a> {
    sections: &'a BTreeMap<String, Section>,
}

impl Reader<'_> {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.entries.get(key))
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.entry(section, key).is_some()
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).map(|s| s.line).unwrap_or(0)
    }

    fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| config_err(e.line, key, format!("`{}` is not a finite number", e.value))),
        }
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(section, key)?.unwrap_or(default))
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse::<usize>()
                .map_err(|_| config_err(e.line, key, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    fn line(&self, section: &str, key: &str) -> usize {
        self.entry(section, key).map(|e| e.line).unwrap_or_else(|| self.section_line(section))
    }

    /// Re-labels parameter errors with the key's line.
    fn check(&self, section: &str, key: &str, r: Result<()>) -> Result<()> {
        r.map_err(|e| match e {
            Error::Parameter { msg, .. } => config_err(self.line(section, key), key, msg),
            other => other,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Bisection bracket and relative tolerance.
    pub critical: Option<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub grid: GridSettings,
    pub methods: Vec<Method>,
    pub sweep: Option<SweepSpec>,
    pub sim: SimConfig,
    /// Window for growth-rate classification, seconds.
    pub sim_window: f64,
    /// Upper bound on the spectral analysis window, seconds.
    pub spectrum_window: f64,
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_methods(s: &str) -> Option<Vec<Method>> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim) {
        let ms: &[Method] = match tok.to_ascii_lowercase().as_str() {
            "ap" => &[Method::Ap],
            "gnc" => &[Method::Gnc],
            "gasin" => &[Method::Gasin],
            "sim" => &[Method::Sim],
            "all" => &[Method::Ap, Method::Gnc, Method::Gasin, Method::Sim],
            _ => return None,
        };
        for m in ms {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    Some(out)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let sections = parse_ini(text)?;
    let r = Reader { sections: &sections };

    let base = BaseQuantities {
        s_base: r.f64_or("base", "s_base", 2e6)?,
        v_base: r.f64_or("base", "v_base", 690.0)?,
        f_base: r.f64_or("base", "f_base", 50.0)?,
    };
    r.check("base", "f_base", base.validate())?;

    let l_s = match (r.f64("circuit", "l_s")?, r.f64("circuit", "scr")?) {
        (Some(_), Some(_)) => {
            return Err(config_err(r.line("circuit", "scr"), "scr", "give either l_s or scr, not both"));
        }
        (Some(l), None) => l,
        (None, Some(scr)) if scr > 0.0 => 1.0 / scr,
        (None, Some(scr)) => {
            return Err(config_err(r.line("circuit", "scr"), "scr", format!("must be positive, got {scr}")))
        }
        (None, None) => {
            return Err(config_err(r.section_line("circuit"), "l_s", "[circuit] needs one of l_s or scr"));
        }
    };
    let circuit = CircuitParams {
        r_filter: r.f64_or("circuit", "r_f", 0.0)?,
        l_filter: r.f64_or("circuit", "l_f", 0.1)?,
        r_t: r.f64_or("circuit", "r_t", 0.0)?,
        l_t: r.f64_or("circuit", "l_t", 0.1)?,
        r_s: r.f64_or("circuit", "r_s", 0.0)?,
        l_s,
    };
    r.check("circuit", "l_s", circuit.validate())?;

    let u_s = r.f64_or("operating", "u_s", 1.0)?;
    let i_ref = C64::new(r.f64_or("operating", "i_ref", 0.5)?, r.f64_or("operating", "i_ref_q", 0.0)?);

    const BW: [&str; 2] = ["cc_bw", "pll_bw"];
    const GAINS: [&str; 4] = ["kp_cc", "ki_cc", "kp_pll", "ki_pll"];
    let has_bw = BW.iter().any(|k| r.has("control", k)) || r.has("control", "pll_damping");
    let has_gains = GAINS.iter().any(|k| r.has("control", k));
    let required = "[control] needs either cc_bw and pll_bw (pll_damping optional) or kp_cc, ki_cc, kp_pll and ki_pll";
    let (ctrl, design) = match (has_bw, has_gains) {
        (true, true) => {
            let k = GAINS.iter().find(|k| r.has("control", k)).expect("a gain key is present");
            return Err(config_err(r.line("control", k), k, "bandwidth targets and explicit gains are exclusive"));
        }
        (false, false) => return Err(config_err(r.section_line("control"), "control", required)),
        (true, false) => {
            for k in BW {
                if !r.has("control", k) {
                    return Err(config_err(r.section_line("control"), k, required));
                }
            }
            let d = Design {
                cc_bw: r.f64_or("control", "cc_bw", 0.0)?,
                pll_bw: r.f64_or("control", "pll_bw", 0.0)?,
                pll_damping: r.f64_or("control", "pll_damping", 0.707)?,
            };
            let ctrl = design_gains(d.cc_bw, d.pll_bw, d.pll_damping, &circuit, u_s).map_err(|e| match e {
                Error::Parameter { name, msg } => config_err(r.line("control", name), name, msg),
                other => other,
            })?;
            (ctrl, Some(d))
        }
        (false, true) => {
            for k in GAINS {
                if !r.has("control", k) {
                    return Err(config_err(r.section_line("control"), k, required));
                }
            }
            let ctrl = ControllerParams {
                kp_cc: r.f64_or("control", "kp_cc", 0.0)?,
                ki_cc: r.f64_or("control", "ki_cc", 0.0)?,
                kp_pll: r.f64_or("control", "kp_pll", 0.0)?,
                ki_pll: r.f64_or("control", "ki_pll", 0.0)?,
                u_s_mag: u_s,
            };
            r.check("control", "kp_cc", ctrl.validate())?;
            (ctrl, None)
        }
    };
    let params = SystemParams { base, circuit, ctrl, i_ref };
    params.operating_point().map_err(|e| config_err(r.section_line("operating"), "i_ref", e.to_string()))?;

    let grid = GridSettings {
        f_min: r.f64_or("analysis", "fmin", 0.1)?,
        f_max: r.f64_or("analysis", "fmax", 1000.0)?,
        n_points: r.usize_or("analysis", "npoints", 2000)?,
        marginal_eps: r.f64_or("analysis", "marginal_eps", 1e-3)?,
        ..GridSettings::default()
    };
    r.check("analysis", "fmin", grid.validate())?;
    let methods = match r.entry("analysis", "methods") {
        None => vec![Method::Ap, Method::Gnc, Method::Gasin],
        Some(e) => parse_methods(&e.value).ok_or_else(|| {
            config_err(e.line, "methods", format!("`{}`: expected ap, gnc, gasin, sim or all", e.value))
        })?,
    };

    let sweep = if sections.contains_key("sweep") { Some(parse_sweep(&r)?) } else { None };

    let sim = SimConfig {
        dt: r.f64_or("sim", "dt", 5e-5)?,
        t_end: r.f64_or("sim", "t_end", 2.0)?,
        perturb_time: r.f64_or("sim", "perturb_time", 0.05)?,
        perturb_kind: match r.entry("sim", "perturb_kind") {
            None => PerturbKind::GridVoltage,
            Some(e) => PerturbKind::parse(&e.value)
                .ok_or_else(|| config_err(e.line, "perturb_kind", "expected grid-voltage or current-ref"))?,
        },
        perturb_size: r.f64_or("sim", "perturb_size", 0.01)?,
        record_decimation: r.usize_or("sim", "record_decimation", 4)?,
    };
    sim.validate().map_err(|e| match e {
        Error::Parameter { name, msg } => config_err(r.line("sim", name), name, msg),
        other => other,
    })?;
    let sim_window = r.f64_or("sim", "window", 0.05)?;
    let spectrum_window = r.f64_or("sim", "spectrum_window", 0.5)?;
    for (k, v) in [("window", sim_window), ("spectrum_window", spectrum_window)] {
        if !(v > 0.0 && v < sim.t_end) {
            return Err(config_err(r.line("sim", k), k, format!("need 0 < {k} < t_end, got {v}")));
        }
    }

    Ok(RunConfig { scenario: Scenario { params, design }, grid, methods, sweep, sim, sim_window, spectrum_window })
}

fn parse_sweep(r: &Reader) -> Result<SweepSpec> {
    let e =
        r.entry("sweep", "param").ok_or_else(|| config_err(r.section_line("sweep"), "param", "[sweep] needs param"))?;
    let param = SweepParam::parse(&e.value).ok_or_else(|| {
        config_err(e.line, "param", format!("`{}`: expected pll_bw, scr, resistance or cc_bw", e.value))
    })?;
    let range = ["start", "stop", "count"].iter().any(|k| r.has("sweep", k));
    let values = match (r.entry("sweep", "values"), range) {
        (Some(_), true) => {
            return Err(config_err(r.line("sweep", "values"), "values", "give either values or start/stop/count"));
        }
        (Some(e), false) => e
            .value
            .split(',')
            .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                config_err(e.line, "values", format!("`{}` is not a comma-separated number list", e.value))
            })?,
        (None, true) => {
            for k in ["start", "stop", "count"] {
                if !r.has("sweep", k) {
                    return Err(config_err(r.section_line("sweep"), k, "start, stop and count go together"));
                }
            }
            let (a, b) = (r.f64_or("sweep", "start", 0.0)?, r.f64_or("sweep", "stop", 0.0)?);
            let n = r.usize_or("sweep", "count", 0)?;
            if n < 2 {
                return Err(config_err(r.line("sweep", "count"), "count", "need at least 2"));
            }
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
        }
        (None, false) => {
            return Err(config_err(r.section_line("sweep"), "values", "[sweep] needs values or start/stop/count"))
        }
    };
    if values.is_empty() {
        return Err(config_err(r.line("sweep", "values"), "values", "no sweep values"));
    }
    let critical = match r.entry("sweep", "critical") {
        None => None,
        Some(e) => match e.value.as_str() {
            "false" | "no" | "0" => None,
            "true" | "yes" | "1" => {
                let lo = r
                    .f64("sweep", "critical_lo")?
                    .unwrap_or_else(|| values.iter().copied().fold(f64::INFINITY, f64::min));
                let hi = r
                    .f64("sweep", "critical_hi")?
                    .unwrap_or_else(|| values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                let rtol = r.f64_or("sweep", "critical_rtol", 1e-4)?;
                if !(lo < hi) || !(rtol > 0.0) {
                    return Err(config_err(
                        e.line,
                        "critical",
                        format!("need critical_lo < critical_hi and rtol > 0, got {lo}, {hi}, {rtol}"),
                    ));
                }
                Some((lo, hi, rtol))
            }
            other => return Err(config_err(e.line, "critical", format!("`{other}` is not a boolean"))),
        },
    };
    Ok(SweepSpec { param, values, critical })
}
