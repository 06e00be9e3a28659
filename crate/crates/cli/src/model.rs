//! Turns CSV columns into the estimation dataset.

use clusterjack_core::{
    build_dataset, expand_fixed_effects, prepend_constant, ColumnTable, Dataset, FixedEffectSpec, SolveMode,
};

use crate::args::ModelArgs;
use crate::error::{CliError, Result};
use crate::filter::Filter;
use crate::input::read_table;

pub struct Model {
    /// Input rows after the sample restriction.
    pub table: ColumnTable,
    pub data: Dataset,
    /// Pseudo-inverse solves whenever fixed effects are present.
    pub solve_mode: SolveMode,
}

pub fn load(args: &ModelArgs) -> Result<Model> {
    let mut table = read_table(&args.input)?;
    if let Some(expr) = &args.sample {
        let keep = Filter::parse(expr)?.mask(&table)?;
        table = table.filter_rows(&keep);
    }
    let data = build(&table, args)?;
    let solve_mode = if args.fevar.is_empty() { SolveMode::Exact } else { SolveMode::Pseudo };
    Ok(Model { table, data, solve_mode })
}

/// Regressors plus a constant, or plus fixed-effect dummies when `fevar` is
/// given. The first fixed effect replaces the constant with one dummy per
/// level; later ones drop their first level.
pub fn build(table: &ColumnTable, args: &ModelArgs) -> Result<Dataset> {
    if args.regressors.is_empty() {
        return Err(CliError::Usage("at least one regressor is required".into()));
    }
    if let Some(dup) = args.regressors.iter().enumerate().find(|(i, r)| args.regressors[..*i].contains(r)) {
        return Err(CliError::Usage(format!("regressor `{}` listed twice", dup.1)));
    }
    let names: Vec<&str> = args.regressors.iter().map(String::as_str).collect();
    let mut d = prepend_constant(&build_dataset(table, &args.outcome, &names, &args.cluster)?)?;
    for (i, fe) in args.fevar.iter().enumerate() {
        let spec = FixedEffectSpec::from_column(table, fe)?;
        if i == 0 {
            d = expand_fixed_effects(&d, &spec)?;
            continue;
        }
        for (l, level) in spec.levels.iter().enumerate().skip(1) {
            let values: Vec<f64> = d.row_order().iter().map(|&r| f64::from(spec.codes[r] == l)).collect();
            d = d.with_column(&format!("{fe}_{level}"), &values)?;
        }
    }
    Ok(d)
}
