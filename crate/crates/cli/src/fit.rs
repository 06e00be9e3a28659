//! The `fit` subcommand: estimates, variability profile, bootstrap tables.

use std::fmt::Write;

use clusterjack_core::crve::{cv3_from_estimates, two_sided_p};
use clusterjack_core::{
    ci_studentized, ci_symmetric, cluster_size_profile, cv1, cv3l, delete_one_linearized, fit_mle, fit_restricted,
    jackknife_estimates, run_bootstrap, transform_scores_restricted, transform_scores_unrestricted, BootstrapConfig,
    BootstrapResult, Center, DofStyle, FitOptions, FitResult, LinkFamily, Profile, Restriction, ScoreContributions,
    WeightDistribution,
};

use crate::args::{Dist, FitArgs, Format, Weights};
use crate::error::{CliError, Result};
use crate::model::{load, Model};

pub const DEFAULT_REPS: usize = 999;

#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub label: &'static str,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootRow {
    pub label: &'static str,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootTable {
    /// `WCLR` or `WCLU`.
    pub name: &'static str,
    pub rows: Vec<BootRow>,
    pub reps: usize,
    pub enumeration: bool,
    pub degenerate: usize,
    pub weights: WeightDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub label: &'static str,
    pub coef: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub outcome: String,
    pub regressor: String,
    pub cluster: String,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub dof: Option<usize>,
    pub level: f64,
    pub rows: Vec<CoefRow>,
    /// Labels of clusters whose delete-one subsample was separated.
    pub dropped: Vec<String>,
    pub variability: Vec<(&'static str, Profile)>,
    pub restricted: Option<BootTable>,
    pub unrestricted: Option<(BootTable, Vec<IntervalRow>)>,
}

enum BootMode {
    None,
    Restricted,
    Unrestricted,
}

pub fn run_fit(args: &FitArgs) -> Result<String> {
    let report = fit_report(args)?;
    Ok(match args.format {
        Format::Table => render_table(&report),
        Format::Delimited => render_delimited(&report),
    })
}

pub fn fit_report(args: &FitArgs) -> Result<FitReport> {
    if args.reps == Some(0) {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} outside (0, 1)", args.level)));
    }
    let mode = if args.nonull {
        BootMode::Unrestricted
    } else if args.bootstrap || args.reps.is_some() {
        BootMode::Restricted
    } else {
        BootMode::None
    };
    let Model { data, solve_mode, .. } = load(&args.model)?;
    let opts = FitOptions { solve_mode, ..FitOptions::default() };
    let design = data.design();
    let g = design.n_clusters();
    let j = data.column_index(&args.model.regressors[0]).expect("first regressor is in the design");
    let dof = match args.dist {
        Dist::T => Some(g - 1),
        Dist::Normal => None,
    };

    let fit = fit_mle(design, LinkFamily::Logit, &opts)?;
    let coef = fit.beta.get(j);
    let row = |label, se: f64| -> Result<CoefRow> {
        let ci = ci_symmetric(coef, se, args.level, dof)?;
        let t = coef / se;
        Ok(CoefRow { label, coef, se, t, p: two_sided_p(t, dof), lower: ci.lower, upper: ci.upper })
    };

    let se1 = cv1(&fit, DofStyle::Full)?.se(j);
    let mut rows = vec![row("CV1", se1)?];
    let steps = delete_one_linearized(&fit)?;
    let lin: Vec<f64> = (0..g).map(|c| coef + steps[(c, j)]).collect();
    let mut variability = vec![
        ("Ng", cluster_size_profile(&data)),
        ("Lin beta no g", Profile::of(&lin)),
    ];
    let mut dropped = Vec::new();
    if args.jackknife {
        let jack = jackknife_estimates(design, &fit, &opts)?;
        let v3 = cv3_from_estimates(&fit.beta.values, &jack, Center::Mle);
        rows.push(row("CV3", v3.se(j))?);
        let exact: Vec<f64> = jack.kept().map(|(_, b)| b[j]).collect();
        variability.push(("beta no g", Profile::of(&exact)));
        dropped = jack.dropped.iter().map(|&c| data.cluster_labels()[c].clone()).collect();
    }
    rows.push(row("CV3L", cv3l(&fit)?.se(j))?);

    let weights = match args.weights {
        Weights::Auto => WeightDistribution::auto(g),
        Weights::Rademacher => WeightDistribution::Rademacher,
        Weights::Webb => WeightDistribution::Webb,
    };
    let reps = args.reps.unwrap_or(DEFAULT_REPS);
    let t1 = coef / se1;
    let mut a = fit.beta.values.clone();
    a.fill(0.0);
    a[j] = 1.0;
    let boot = |c: &ScoreContributions, stream: u64| -> Result<BootstrapResult> {
        Ok(run_bootstrap(c, &a, t1, &BootstrapConfig { reps, weights, seed: args.seed, stream })?)
    };
    let table = |name, classic: &BootstrapResult, score: &BootstrapResult| {
        let brow = |label, r: &BootstrapResult| BootRow { label, coef, se: se1, t: t1, p: r.p_sym };
        BootTable {
            name,
            rows: vec![brow("CLASSIC", classic), brow("SCORE", score)],
            reps: classic.reps,
            enumeration: classic.enumeration,
            degenerate: classic.degenerate + score.degenerate,
            weights,
        }
    };

    let mut restricted = None;
    let mut unrestricted = None;
    match mode {
        BootMode::None => {}
        BootMode::Restricted => {
            let rfit = fit_restricted(design, LinkFamily::Logit, Restriction::zero(j), &opts)?;
            let c = boot(&ScoreContributions::classic(&rfit), 0)?;
            let s = boot(&transform_scores_restricted(&rfit)?, 1)?;
            restricted = Some(table("WCLR", &c, &s));
        }
        BootMode::Unrestricted => {
            let c = boot(&ScoreContributions::classic(&fit), 2)?;
            let s = boot(&transform_scores_unrestricted(&fit)?, 3)?;
            let intervals = wclu_intervals(&fit, j, se1, dof, args.level, &c, &s)?;
            unrestricted = Some((table("WCLU", &c, &s), intervals));
        }
    }

    Ok(FitReport {
        outcome: args.model.outcome.clone(),
        regressor: args.model.regressors[0].clone(),
        cluster: args.model.cluster.clone(),
        n_obs: data.n_obs(),
        n_clusters: g,
        dof,
        level: args.level,
        rows,
        dropped,
        variability,
        restricted,
        unrestricted,
    })
}

/// Studentized intervals with the CV1 standard error and symmetric ones with
/// the bootstrap standard error, for the classic and score bootstraps.
fn wclu_intervals(
    fit: &FitResult,
    j: usize,
    se1: f64,
    dof: Option<usize>,
    level: f64,
    classic: &BootstrapResult,
    score: &BootstrapResult,
) -> Result<Vec<IntervalRow>> {
    let coef = fit.beta.get(j);
    let mut out = Vec::with_capacity(4);
    for (r, stud, wb) in [(classic, "CLASSIC-CV1-se", "CLASSIC-WB-se"), (score, "SCORE-CV1-se", "SCORE-WB-se")] {
        let ci = ci_studentized(coef, se1, &r.t_star, level)?;
        out.push(IntervalRow { label: stud, coef, se: se1, lower: ci.lower, upper: ci.upper });
        let se = r.boot_se()?;
        let ci = ci_symmetric(coef, se, level, dof)?;
        out.push(IntervalRow { label: wb, coef, se, lower: ci.lower, upper: ci.upper });
    }
    Ok(out)
}

fn weights_name(w: WeightDistribution) -> &'static str {
    match w {
        WeightDistribution::Rademacher => "Rademacher",
        WeightDistribution::Webb => "Webb",
    }
}

fn reference_name(dof: Option<usize>) -> String {
    dof.map_or_else(|| "N(0,1)".to_string(), |d| format!("t({d})"))
}

pub fn render_table(r: &FitReport) -> String {
    let mut s = String::new();
    let pct = r.level * 100.0;
    writeln!(s, "Jackknife cluster statistics for binary response models.").unwrap();
    writeln!(s, "Estimates for {} when clustered by {}.", r.regressor, r.cluster).unwrap();
    writeln!(s, "There are {} observations within {} {} clusters.", r.n_obs, r.n_clusters, r.cluster).unwrap();
    writeln!(s, "Logistic Regression Output\n").unwrap();
    writeln!(s, "  s.e. |      Coeff   Sd. Err.   t-stat  P value    CI-lower    CI-upper").unwrap();
    writeln!(s, "-------+{}", "-".repeat(64)).unwrap();
    for x in &r.rows {
        writeln!(
            s,
            "{:>6} | {:>10.6} {:>10.6} {:>8.4} {:>8.4} {:>11.6} {:>11.6}",
            x.label, x.coef, x.se, x.t, x.p, x.lower, x.upper
        )
        .unwrap();
    }
    writeln!(s, "{}", "-".repeat(72)).unwrap();
    writeln!(s, "P values and {pct}% intervals use {}.", reference_name(r.dof)).unwrap();
    if !r.dropped.is_empty() {
        writeln!(s, "CV3 omits separated delete-one subsamples for clusters: {}.", r.dropped.join(", ")).unwrap();
    }

    writeln!(s, "\nCluster Variability\n").unwrap();
    let mut head = " Statistic |       Ng".to_string();
    for (name, _) in &r.variability[1..] {
        write!(head, " {name:>16}").unwrap();
    }
    let width = head.len();
    writeln!(s, "{head}").unwrap();
    writeln!(s, "-----------+{}", "-".repeat(width - 12)).unwrap();
    let stat = |p: &Profile, name: &str| match name {
        "min" => p.min,
        "q1" => p.q1,
        "median" => p.median,
        "mean" => p.mean,
        "q3" => p.q3,
        "max" => p.max,
        _ => p.coefvar,
    };
    for name in ["min", "q1", "median", "mean", "q3", "max", "coefvar"] {
        if name == "coefvar" {
            writeln!(s, "-----------+{}", "-".repeat(width - 12)).unwrap();
        }
        write!(s, "{name:>10} | {:>8.2}", stat(&r.variability[0].1, name)).unwrap();
        for (_, p) in &r.variability[1..] {
            write!(s, " {:>16.6}", stat(p, name)).unwrap();
        }
        writeln!(s).unwrap();
    }

    if let Some(b) = &r.restricted {
        writeln!(s, "\nRestricted Bootstrapped Linearized Regression Output\n").unwrap();
        boot_table(&mut s, b);
    }
    if let Some((b, intervals)) = &r.unrestricted {
        writeln!(s, "\nUnrestricted Bootstrapped Linearized Regression Output\n").unwrap();
        boot_table(&mut s, b);
        writeln!(s, "\nUnrestricted Bootstrapped Confidence Intervals ({pct}%)\n").unwrap();
        writeln!(s, "          WCLU |      Coeff    std.er.      WCLU CI-low       WCLU CI-up").unwrap();
        writeln!(s, "---------------+{}", "-".repeat(56)).unwrap();
        for (i, x) in intervals.iter().enumerate() {
            if i == 2 {
                writeln!(s, "---------------+{}", "-".repeat(56)).unwrap();
            }
            writeln!(s, "{:>14} | {:>10.6} {:>10.6} {:>16.4} {:>16.4}", x.label, x.coef, x.se, x.lower, x.upper).unwrap();
        }
        writeln!(s, "{}", "-".repeat(72)).unwrap();
    }
    s
}

fn boot_table(s: &mut String, b: &BootTable) {
    writeln!(s, "{:>10} |      Coeff   Sd. Err.   t-stat  P value", b.name).unwrap();
    writeln!(s, "-----------+{}", "-".repeat(40)).unwrap();
    for x in &b.rows {
        writeln!(s, "{:>10} | {:>10.6} {:>10.6} {:>8.4} {:>8.4}", x.label, x.coef, x.se, x.t, x.p).unwrap();
    }
    writeln!(s, "{}", "-".repeat(52)).unwrap();
    if b.enumeration {
        writeln!(s, "P-values calculated by enumerating all {} Rademacher weight vectors.", b.reps).unwrap();
    } else {
        writeln!(s, "P-values calculated with {} replications and {} weights.", b.reps, weights_name(b.weights)).unwrap();
    }
    if b.degenerate > 0 {
        writeln!(s, "{} degenerate bootstrap statistics were excluded.", b.degenerate).unwrap();
    }
}

/// Long format `block,row,column,value`; values use the shortest
/// representation that parses back to the same number.
pub fn render_delimited(r: &FitReport) -> String {
    let mut s = String::from("block,row,column,value\n");
    let mut put = |block: &str, row: &str, col: &str, v: String| writeln!(s, "{block},{row},{col},{v}").unwrap();
    put("meta", "", "outcome", r.outcome.clone());
    put("meta", "", "regressor", r.regressor.clone());
    put("meta", "", "cluster", r.cluster.clone());
    put("meta", "", "n_obs", r.n_obs.to_string());
    put("meta", "", "n_clusters", r.n_clusters.to_string());
    put("meta", "", "reference", reference_name(r.dof));
    put("meta", "", "level", r.level.to_string());
    for x in &r.rows {
        for (col, v) in [("coef", x.coef), ("se", x.se), ("t", x.t), ("p", x.p), ("ci_lower", x.lower), ("ci_upper", x.upper)] {
            put("estimates", x.label, col, v.to_string());
        }
    }
    for c in &r.dropped {
        put("estimates", "CV3", "dropped_cluster", c.clone());
    }
    for (name, p) in &r.variability {
        for (col, v) in [
            ("min", p.min),
            ("q1", p.q1),
            ("median", p.median),
            ("mean", p.mean),
            ("q3", p.q3),
            ("max", p.max),
            ("coefvar", p.coefvar),
        ] {
            put("variability", name, col, v.to_string());
        }
    }
    let tables = r.restricted.iter().chain(r.unrestricted.as_ref().map(|(b, _)| b));
    for b in tables {
        for x in &b.rows {
            let row = format!("{}-{}", b.name, x.label);
            for (col, v) in [("coef", x.coef), ("se", x.se), ("t", x.t), ("p", x.p)] {
                put("bootstrap", &row, col, v.to_string());
            }
            put("bootstrap", &row, "reps", b.reps.to_string());
            put("bootstrap", &row, "weights", weights_name(b.weights).to_string());
        }
    }
    if let Some((_, intervals)) = &r.unrestricted {
        for x in intervals {
            for (col, v) in [("coef", x.coef), ("se", x.se), ("ci_lower", x.lower), ("ci_upper", x.upper)] {
                put("intervals", x.label, col, v.to_string());
            }
        }
    }
    s
}
