//! The `simulate` and `placebo` subcommands.
//!
//! An experiment file holds `key = value` lines; `#` starts a comment. A
//! value list such as `g1 = 2, 4, 8` sweeps that key, and several swept
//! keys give every combination. Keys:
//!
//! `preset`, `g`, `n`, `n_per_cluster`, `gamma`, `g1`, `g1_fraction`, `phi`,
//! `k`, `pi`, `beta1`, `beta_slopes`, `beta_k`, `layout` (`within` or
//! `invariant`), `seed`, `reps`, `boot_reps`, `alpha`, `weights`
//! (`auto`, `rademacher`, `webb`), `methods`.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use clusterjack_core::simulation::RegressorLayout;
use clusterjack_core::{
    run_placebo, run_rejection_experiment, DgpConfig, ExperimentOptions, ExperimentResult, Intercept, Method,
    PlaceboKind, PlaceboSpec, WeightDistribution,
};

use crate::args::{Format, PlaceboArgs, PlaceboKindArg, SimulateArgs, Weights};
use crate::error::{CliError, Result};
use crate::model::load;

/// Parsed experiment file: each key maps to one or more raw values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentFile {
    entries: BTreeMap<String, Vec<String>>,
}

const KEYS: [&str; 19] = [
    "preset",
    "g",
    "n",
    "n_per_cluster",
    "gamma",
    "g1",
    "g1_fraction",
    "phi",
    "k",
    "pi",
    "beta1",
    "beta_slopes",
    "beta_k",
    "layout",
    "seed",
    "reps",
    "boot_reps",
    "alpha",
    "weights",
];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| usage(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) && key != "methods" {
                return Err(usage(format!("line {}: unknown key `{key}`", no + 1)));
            }
            let values: Vec<String> = value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(usage(format!("line {}: `{key}` has no value", no + 1)));
            }
            if entries.insert(key.clone(), values).is_some() {
                return Err(usage(format!("line {}: `{key}` given twice", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    fn set(&mut self, key: &str, values: &[&str]) {
        self.entries.insert(key.into(), values.iter().map(|s| s.to_string()).collect());
    }

    fn get(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    fn scalar<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some([v]) => v.parse().map(Some).map_err(|_| usage(format!("`{key}`: cannot parse `{v}`"))),
            Some(_) => Err(usage(format!("`{key}` takes a single value"))),
        }
    }
}

/// Desk-scale experiment grids. Each sweeps one design parameter;
/// anything else set in the file overrides the preset.
pub fn preset(name: &str) -> Result<ExperimentFile> {
    let mut f = ExperimentFile::default();
    let tests = "CV1-normal,CV1-t,CV3-t,CV3L-t,WCLR-C,WCLR-S,WCLU-C,WCLU-S,WCR-C,WCR-S,WCU-C,WCU-S";
    let intervals = "CI-CV1,CI-CV3,CI-CV3L,CI-WCLU-C-stud,CI-WCLU-S-stud,CI-WCLU-C-se,CI-WCLU-S-se";
    let list = |s: &'static str| s.split(',').collect::<Vec<_>>();
    f.set("reps", &["1000"]);
    f.set("boot_reps", &["199"]);
    f.set("methods", &list(tests));
    match name.to_ascii_lowercase().as_str() {
        "canonical" => {}
        "fig1" | "fig2" => {
            f.set("g", &["12", "18", "24", "30", "36", "42", "48", "60", "72"]);
            f.set("n_per_cluster", &["500"]);
            f.set("g1_fraction", &["0.3333333333333333"]);
            if name.eq_ignore_ascii_case("fig2") {
                f.set("methods", &list(intervals));
            }
        }
        "figi" | "fig3" => {
            f.set("g", &["50"]);
            f.set("n", &["25000"]);
            f.set("gamma", &["0"]);
            f.set("phi", &["0"]);
            f.set("pi", &["0.5"]);
            f.set("g1", &["20", "25", "30"]);
        }
        "fig4" => f.set("g1", &["2", "4", "6", "8", "10", "12"]),
        "fig5" => f.set("pi", &["0.03", "0.05", "0.1", "0.2", "0.31", "0.4", "0.5"]),
        "fig6" => f.set("gamma", &["0", "1", "2", "3", "4"]),
        "fig7" => f.set("phi", &["0", "0.1", "0.2", "0.3", "0.4", "0.5"]),
        "fig8" => f.set("k", &["2", "4", "6", "8", "10", "12", "14", "16", "18", "20"]),
        "fig9" => {
            f.set("beta_k", &["0", "1", "2", "3", "4"]);
            f.set("methods", &list(intervals));
        }
        other => return Err(usage(format!("unknown preset `{other}`"))),
    }
    Ok(f)
}

/// One experiment point.
#[derive(Debug, Clone)]
pub struct Point {
    pub dgp: DgpConfig,
    pub options: ExperimentOptions,
}

fn weights_of(s: &str) -> Result<Option<WeightDistribution>> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(None),
        "rademacher" => Ok(Some(WeightDistribution::Rademacher)),
        "webb" => Ok(Some(WeightDistribution::Webb)),
        other => Err(usage(format!("unknown weights `{other}`"))),
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|m| m.parse::<Method>().map_err(|_| usage(format!("unknown method `{m}`")))).collect()
}

const SWEEPABLE: [&str; 11] = ["g", "n", "n_per_cluster", "gamma", "g1", "g1_fraction", "phi", "k", "pi", "beta_slopes", "beta_k"];

/// Expands a file (merged over its preset) into experiment points.
pub fn expand(file: &ExperimentFile) -> Result<Vec<Point>> {
    let mut merged = match file.scalar::<String>("preset")? {
        Some(name) => preset(&name)?,
        None => preset("canonical")?,
    };
    // A key set in the file displaces the preset's value for its alternative.
    const PAIRS: [(&str, &str); 3] = [("pi", "beta1"), ("n", "n_per_cluster"), ("g1", "g1_fraction")];
    for (a, b) in PAIRS {
        if file.get(a).is_some() && file.get(b).is_some() {
            return Err(usage(format!("give either `{a}` or `{b}`, not both")));
        }
    }
    for (k, v) in &file.entries {
        if k == "preset" {
            continue;
        }
        for (a, b) in PAIRS {
            if k == a {
                merged.entries.remove(b);
            } else if k == b {
                merged.entries.remove(a);
            }
        }
        merged.entries.insert(k.clone(), v.clone());
    }
    let f = &merged;
    for (k, v) in &f.entries {
        if v.len() > 1 && !SWEEPABLE.contains(&k.as_str()) && k != "methods" {
            return Err(usage(format!("`{k}` cannot be swept")));
        }
    }
    let reps: usize = f.scalar("reps")?.unwrap_or(1000);
    let boot_reps: usize = f.scalar("boot_reps")?.unwrap_or(199);
    let methods = parse_methods(f.get("methods").unwrap_or_default())?;
    let mut options = ExperimentOptions::new(methods, reps, boot_reps);
    options.level = f.scalar("alpha")?.unwrap_or(0.05);
    if let Some(w) = f.scalar::<String>("weights")? {
        options.weights = weights_of(&w)?;
    }
    let mut base = DgpConfig::canonical();
    if let Some(s) = f.scalar("seed")? {
        base.seed = s;
    }
    if let Some(beta1) = f.scalar("beta1")? {
        base.intercept = Intercept::Value(beta1);
    }
    if let Some(layout) = f.scalar::<String>("layout")? {
        base.layout = match layout.to_ascii_lowercase().as_str() {
            "within" => RegressorLayout::WithinCluster,
            "invariant" => RegressorLayout::ClusterInvariant,
            other => return Err(usage(format!("unknown layout `{other}`"))),
        };
    }

    // Cartesian product over the swept keys, first key varying slowest.
    let axes: Vec<(&str, &[String])> = SWEEPABLE.iter().filter_map(|&k| f.get(k).map(|v| (k, v))).collect();
    let mut combos: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((*key, v.as_str()));
                    c
                })
            })
            .collect();
    }

    let mut points = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut d = base.clone();
        let (mut per_cluster, mut fraction) = (None, None);
        for (key, raw) in combo {
            let num = |raw: &str| raw.parse::<f64>().map_err(|_| usage(format!("`{key}`: cannot parse `{raw}`")));
            let int = |raw: &str| raw.parse::<usize>().map_err(|_| usage(format!("`{key}`: `{raw}` is not a count")));
            match key {
                "g" => d.g = int(raw)?,
                "n" => d.n = int(raw)?,
                "n_per_cluster" => per_cluster = Some(int(raw)?),
                "gamma" => d.gamma = num(raw)?,
                "g1" => d.g1 = int(raw)?,
                "g1_fraction" => fraction = Some(num(raw)?),
                "phi" => d.phi = num(raw)?,
                "k" => d.k = int(raw)?,
                "pi" => d.intercept = Intercept::Target(num(raw)?),
                "beta_slopes" => d.beta_slopes = num(raw)?,
                "beta_k" => d.beta_k = num(raw)?,
                _ => unreachable!("only sweepable keys reach here"),
            }
        }
        if let Some(m) = per_cluster {
            d.n = m * d.g;
        }
        if let Some(q) = fraction {
            d.g1 = (q * d.g as f64).round() as usize;
        }
        points.push(Point { dgp: d, options: options.clone() });
    }
    Ok(points)
}

pub fn run_simulate(args: &SimulateArgs) -> Result<String> {
    let mut file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            ExperimentFile::parse(&text)?
        }
        None => ExperimentFile::default(),
    };
    if let Some(p) = &args.preset {
        if file.get("preset").is_some() {
            return Err(usage("preset given both on the command line and in the config"));
        }
        file.set("preset", &[p.as_str()]);
    }
    let mut points = expand(&file)?;
    for p in &mut points {
        if let Some(r) = args.reps {
            p.options.reps = r;
        }
        if let Some(b) = args.boot_reps {
            p.options.boot_reps = b;
        }
        if let Some(s) = args.seed {
            p.dgp.seed = s;
        }
        if !args.methods.is_empty() {
            p.options.methods = parse_methods(&args.methods)?;
        }
        if p.options.reps == 0 {
            return Err(usage("the number of replications must be at least 1"));
        }
    }
    let results = points
        .iter()
        .map(|p| run_rejection_experiment(&p.dgp, &p.options))
        .collect::<clusterjack_core::Result<Vec<_>>>()?;
    Ok(render(&results, args.format))
}

pub fn run_placebo_cmd(args: &PlaceboArgs) -> Result<String> {
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let model = load(&args.model)?;
    let kind = match args.kind {
        PlaceboKindArg::Binary => {
            let treated = args.treated.ok_or_else(|| usage("--treated is required for the binary placebo"))?;
            PlaceboKind::Binary { treated }
        }
        PlaceboKindArg::Ar1 => {
            let periods = match &args.period {
                Some(col) => Some(model.table.numeric(col)?),
                None => None,
            };
            PlaceboKind::Ar1 { rho: args.rho, periods }
        }
    };
    let methods = if args.methods.is_empty() {
        vec![Method::Cv1T, Method::Cv3T, Method::Cv3LT, Method::WclrC, Method::WclrS, Method::WcluC, Method::WcluS]
    } else {
        parse_methods(&args.methods)?
    };
    let mut options = ExperimentOptions::new(methods, args.reps, args.boot_reps);
    options.level = args.alpha;
    options.solve_mode = model.solve_mode;
    options.weights = match args.weights {
        Weights::Auto => None,
        Weights::Rademacher => Some(WeightDistribution::Rademacher),
        Weights::Webb => Some(WeightDistribution::Webb),
    };
    let result = run_placebo(&model.data, &PlaceboSpec { kind, seed: args.seed }, &options)?;
    Ok(render(&[result], args.format))
}

fn render(results: &[ExperimentResult], format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Delimited => {
            writeln!(s, "{}", ExperimentResult::delimited_header()).unwrap();
            for r in results {
                s.push_str(&r.to_delimited());
            }
        }
        Format::Table => {
            for r in results {
                writeln!(s, "{}", r.label).unwrap();
                writeln!(s, "R = {} ({} valid), B = {}, alpha = {}", r.reps, r.valid, r.boot_reps, r.level).unwrap();
                writeln!(s, "{:>16} | {:>9} {:>9} {:>8}", "method", "kind", "frequency", "MC se").unwrap();
                writeln!(s, "{}+{}", "-".repeat(17), "-".repeat(30)).unwrap();
                for &m in &r.methods {
                    let kind = if m.is_interval() { "coverage" } else { "rejection" };
                    writeln!(s, "{:>16} | {:>9} {:>9.4} {:>8.4}", m.name(), kind, r.frequency(m), r.mc_se(m)).unwrap();
                }
                if r.skipped() > 0 {
                    let reasons: Vec<String> = r.skips.iter().map(|(k, v)| format!("{k} {v}")).collect();
                    writeln!(s, "skipped: {}", reasons.join(", ")).unwrap();
                }
                writeln!(s).unwrap();
            }
        }
    }
    s
}
