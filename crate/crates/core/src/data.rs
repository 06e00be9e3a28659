//! Data containers: raw columns, validated clustered datasets, and the
//! collapsed design that every estimator works on.

use std::cmp::Ordering;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Values of one input column. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell rendered as a label, used for cluster and fixed-effect levels.
    fn label(&self, row: usize) -> Option<String> {
        match self {
            ColumnData::Numeric(v) => v[row].filter(|x| !x.is_nan()).map(|x| format!("{x}")),
            ColumnData::Text(v) => v[row].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// A set of equally long named columns, as read from a delimited file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnTable {
    columns: Vec<Column>,
}

impl ColumnTable {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if let Some(first) = columns.first() {
            let n = first.data.len();
            if let Some(bad) = columns.iter().find(|c| c.data.len() != n) {
                return Err(Error::Invalid(format!(
                    "column `{}` has {} rows, expected {n}",
                    bad.name,
                    bad.data.len()
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn get(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Numeric column with every cell present and finite.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        match &self.get(name)?.data {
            ColumnData::Numeric(v) => v
                .iter()
                .enumerate()
                .map(|(row, x)| match x {
                    Some(x) if x.is_finite() => Ok(*x),
                    _ => Err(Error::MissingValue { column: name.to_string(), row }),
                })
                .collect(),
            ColumnData::Text(_) => Err(Error::NonNumericColumn(name.to_string())),
        }
    }

    /// Keeps the rows where `keep` is true.
    pub fn filter_rows(&self, keep: &[bool]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: match &c.data {
                    ColumnData::Numeric(v) => ColumnData::Numeric(pick(v, keep)),
                    ColumnData::Text(v) => ColumnData::Text(pick(v, keep)),
                },
            })
            .collect();
        Self { columns }
    }

    pub fn push(&mut self, column: Column) -> Result<()> {
        if !self.columns.is_empty() && column.data.len() != self.n_rows() {
            return Err(Error::Invalid(format!("column `{}` has the wrong length", column.name)));
        }
        self.columns.push(column);
        Ok(())
    }
}

fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x.clone()).collect()
}

/// Dense level coding of a label column. Numeric labels sort numerically,
/// text labels lexicographically.
fn encode_levels(column: &Column) -> Result<(Vec<usize>, Vec<String>)> {
    let n = column.data.len();
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        labels.push(
            column
                .data
                .label(row)
                .ok_or_else(|| Error::MissingValue { column: column.name.clone(), row })?,
        );
    }
    let mut levels: Vec<String> = labels.clone();
    match &column.data {
        ColumnData::Numeric(_) => levels.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            x.partial_cmp(&y).unwrap_or(Ordering::Equal)
        }),
        ColumnData::Text(_) => levels.sort(),
    }
    levels.dedup();
    let codes = labels
        .iter()
        .map(|l| levels.binary_search_by(|probe| cmp_label(&column.data, probe, l)).unwrap())
        .collect();
    Ok((codes, levels))
}

fn cmp_label(data: &ColumnData, a: &str, b: &str) -> Ordering {
    match data {
        ColumnData::Numeric(_) => {
            let (x, y): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            x.partial_cmp(&y).unwrap_or(Ordering::Equal)
        }
        ColumnData::Text(_) => a.cmp(b),
    }
}

/// Estimated coefficients with their column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub values: DVector<f64>,
    pub labels: Vec<String>,
}

impl CoefVector {
    pub fn new(values: DVector<f64>, labels: Vec<String>) -> Self {
        assert_eq!(values.len(), labels.len(), "one label per coefficient");
        Self { values, labels }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }
}

/// A single linear restriction `beta[index] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Restriction {
    pub index: usize,
    pub value: f64,
}

impl Restriction {
    pub fn new(index: usize, value: f64) -> Self {
        Self { index, value }
    }

    /// `beta[index] = 0`.
    pub fn zero(index: usize) -> Self {
        Self { index, value: 0.0 }
    }

    pub fn check(&self, k: usize) -> Result<()> {
        if self.index >= k {
            return Err(Error::Invalid(format!("restriction index {} out of range for k = {k}", self.index)));
        }
        Ok(())
    }

    /// Selection vector `e_index` of length `k`.
    pub fn direction(&self, k: usize) -> DVector<f64> {
        let mut a = DVector::zeros(k);
        a[self.index] = 1.0;
        a
    }
}

/// `R beta = r` with `R` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRestrictions {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearRestrictions {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() || matrix.nrows() == 0 {
            return Err(Error::Invalid("R and r have inconsistent shapes".into()));
        }
        let rank = matrix.clone().svd(false, false).rank(1e-12 * matrix.amax().max(1.0));
        if rank < matrix.nrows() {
            return Err(Error::Invalid("R must have full row rank".into()));
        }
        Ok(Self { matrix, rhs })
    }
}

impl From<Restriction> for LinearRestrictions {
    fn from(r: Restriction) -> Self {
        // k is unknown here; callers widen via `for_k`.
        let mut matrix = DMatrix::zeros(1, r.index + 1);
        matrix[(0, r.index)] = 1.0;
        Self { matrix, rhs: DVector::from_element(1, r.value) }
    }
}

impl LinearRestrictions {
    /// Pads `R` with zero columns up to `k`.
    pub fn for_k(mut self, k: usize) -> Result<Self> {
        match self.matrix.ncols().cmp(&k) {
            Ordering::Less => {
                let r = self.matrix.nrows();
                let mut m = DMatrix::zeros(r, k);
                m.view_mut((0, 0), (r, self.matrix.ncols())).copy_from(&self.matrix);
                self.matrix = m;
                Ok(self)
            }
            Ordering::Equal => Ok(self),
            Ordering::Greater => Err(Error::Invalid("R has more columns than coefficients".into())),
        }
    }
}

/// A categorical variable to be expanded into dummies.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectSpec {
    pub name: String,
    pub levels: Vec<String>,
    /// Level index of each row, in the original (input) row order.
    pub codes: Vec<usize>,
}

impl FixedEffectSpec {
    pub fn from_column(table: &ColumnTable, name: &str) -> Result<Self> {
        let (codes, levels) = encode_levels(table.get(name)?)?;
        if levels.len() < 2 {
            return Err(Error::TooFewLevels(name.to_string()));
        }
        Ok(Self { name: name.to_string(), levels, codes })
    }
}

/// Observations sharing a cluster and an identical regressor row, stored once
/// with their counts. All estimators work on this representation; it gives
/// the same scores, information blocks and likelihood as the raw rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    k: usize,
    rows: Vec<f64>,
    trials: Vec<f64>,
    successes: Vec<f64>,
    bounds: Vec<usize>,
    n_obs: usize,
    names: Vec<String>,
}

/// One distinct regressor row of a cluster with its counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedRow {
    pub x: Vec<f64>,
    pub trials: f64,
    pub successes: f64,
}

impl Design {
    /// Builds a design from per-cluster row groups; identical rows within a
    /// cluster are merged.
    pub fn from_clusters(names: Vec<String>, clusters: Vec<Vec<GroupedRow>>) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::Invalid("no regressors".into()));
        }
        let mut design = Design {
            k,
            rows: Vec::new(),
            trials: Vec::new(),
            successes: Vec::new(),
            bounds: vec![0],
            n_obs: 0,
            names,
        };
        for mut groups in clusters {
            for g in &mut groups {
                if g.x.len() != k {
                    return Err(Error::Invalid("row length differs from the number of regressors".into()));
                }
                for v in &mut g.x {
                    if *v == 0.0 {
                        *v = 0.0; // fold -0.0
                    }
                }
            }
            groups.sort_by(|a, b| cmp_rows(&a.x, &b.x));
            let start = design.trials.len();
            for g in groups {
                if g.trials <= 0.0 {
                    continue;
                }
                let last = design.trials.len();
                if last > start && design.rows[(last - 1) * k..last * k] == g.x[..] {
                    design.trials[last - 1] += g.trials;
                    design.successes[last - 1] += g.successes;
                } else {
                    design.rows.extend_from_slice(&g.x);
                    design.trials.push(g.trials);
                    design.successes.push(g.successes);
                }
                design.n_obs += g.trials as usize;
            }
            if design.trials.len() == start {
                return Err(Error::EmptyCluster(design.bounds.len() - 1));
            }
            design.bounds.push(design.trials.len());
        }
        Ok(design)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_clusters(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Number of distinct (cluster, row) groups.
    pub fn n_groups(&self) -> usize {
        self.trials.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    pub fn trials(&self, i: usize) -> f64 {
        self.trials[i]
    }

    pub fn successes(&self, i: usize) -> f64 {
        self.successes[i]
    }

    pub fn failures(&self, i: usize) -> f64 {
        self.trials[i] - self.successes[i]
    }

    pub fn cluster_groups(&self, g: usize) -> Range<usize> {
        self.bounds[g]..self.bounds[g + 1]
    }

    pub fn cluster_size(&self, g: usize) -> usize {
        self.cluster_groups(g).map(|i| self.trials[i]).sum::<f64>() as usize
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        (0..self.n_clusters()).map(|g| self.cluster_size(g)).collect()
    }

    /// Sample mean of the outcome, optionally omitting one cluster.
    pub fn mean_y(&self, omit: Option<usize>) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for g in (0..self.n_clusters()).filter(|&g| Some(g) != omit) {
            for i in self.cluster_groups(g) {
                s += self.successes[i];
                n += self.trials[i];
            }
        }
        s / n
    }

    /// Index of a column whose values are all exactly one.
    pub fn constant_column(&self) -> Option<usize> {
        (0..self.k).find(|&j| (0..self.n_groups()).all(|i| self.row(i)[j] == 1.0))
    }

    /// Columns identically zero once `omit` is removed.
    pub fn zero_columns(&self, omit: Option<usize>) -> Vec<usize> {
        (0..self.k)
            .filter(|&j| {
                (0..self.n_clusters())
                    .filter(|&g| Some(g) != omit)
                    .all(|g| self.cluster_groups(g).all(|i| self.row(i)[j] == 0.0))
            })
            .collect()
    }

    /// Appends one column that is constant within each cluster.
    pub fn with_cluster_column(&self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_clusters() {
            return Err(Error::Invalid("one value per cluster required".into()));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let clusters = (0..self.n_clusters())
            .map(|g| {
                self.cluster_groups(g)
                    .map(|i| {
                        let mut x = self.row(i).to_vec();
                        x.push(values[g]);
                        GroupedRow { x, trials: self.trials[i], successes: self.successes[i] }
                    })
                    .collect()
            })
            .collect();
        Design::from_clusters(names, clusters)
    }

    /// Dense `n_groups x k` regressor matrix, mostly for tests and oracles.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_groups(), self.k, &self.rows)
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// A validated clustered binary-response dataset. Rows are stably sorted by
/// cluster; clusters are coded densely as `0..G` internally.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    names: Vec<String>,
    cluster: Vec<usize>,
    cluster_labels: Vec<String>,
    cluster_sizes: Vec<usize>,
    row_order: Vec<usize>,
    outcome_name: String,
    cluster_name: String,
    design: Design,
}

impl Dataset {
    /// Builds a dataset from raw parts. `x` is row-major `N x k`; `cluster`
    /// holds codes `0..labels.len()`.
    pub fn from_parts(
        outcome_name: &str,
        y: Vec<f64>,
        names: Vec<String>,
        x: Vec<f64>,
        cluster_name: &str,
        cluster: Vec<usize>,
        cluster_labels: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        let k = names.len();
        if x.len() != n * k || cluster.len() != n {
            return Err(Error::Invalid("inconsistent dataset dimensions".into()));
        }
        if k == 0 || n <= k {
            return Err(Error::TooFewObservations { n, k });
        }
        for (row, &v) in y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryOutcome { column: outcome_name.into(), row, value: v });
            }
        }
        if let Some(row) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { column: names[row % k].clone(), row: row / k });
        }
        let n_clusters = cluster_labels.len();
        let mut cluster_sizes = vec![0usize; n_clusters];
        for &c in &cluster {
            if c >= n_clusters {
                return Err(Error::Invalid(format!("cluster code {c} out of range")));
            }
            cluster_sizes[c] += 1;
        }
        if n_clusters < 2 {
            return Err(Error::SingleCluster(cluster_name.into()));
        }
        if let Some(g) = cluster_sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(g));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| cluster[i]); // stable
        let y_sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let mut x_sorted = Vec::with_capacity(n * k);
        for &i in &order {
            x_sorted.extend_from_slice(&x[i * k..(i + 1) * k]);
        }
        let cluster_sorted: Vec<usize> = order.iter().map(|&i| cluster[i]).collect();

        let mut groups: Vec<Vec<GroupedRow>> = vec![Vec::new(); n_clusters];
        for (i, &g) in cluster_sorted.iter().enumerate() {
            groups[g].push(GroupedRow {
                x: x_sorted[i * k..(i + 1) * k].to_vec(),
                trials: 1.0,
                successes: y_sorted[i],
            });
        }
        let design = Design::from_clusters(names.clone(), groups)?;

        Ok(Self {
            y: y_sorted,
            x: x_sorted,
            names,
            cluster: cluster_sorted,
            cluster_labels,
            cluster_sizes,
            row_order: order,
            outcome_name: outcome_name.into(),
            cluster_name: cluster_name.into(),
            design,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.x[i * k..(i + 1) * k]
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_obs(), self.k(), &self.x)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Dense cluster code (0-based) of each sorted row.
    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    /// Original input row of each sorted row.
    pub fn row_order(&self) -> &[usize] {
        &self.row_order
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn cluster_name(&self) -> &str {
        &self.cluster_name
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rebuilds the dataset with one extra regressor, given in sorted row order.
    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<Self> {
        let k = self.k();
        let n = self.n_obs();
        if values.len() != n {
            return Err(Error::Invalid("new column has the wrong length".into()));
        }
        let mut x = Vec::with_capacity(n * (k + 1));
        for i in 0..n {
            x.extend_from_slice(self.row(i));
            x.push(values[i]);
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let mut d = Dataset::from_parts(
            &self.outcome_name,
            self.y.clone(),
            names,
            x,
            &self.cluster_name,
            self.cluster.clone(),
            self.cluster_labels.clone(),
        )?;
        // Rows were already sorted; keep the mapping back to the input.
        d.row_order = d.row_order.iter().map(|&i| self.row_order[i]).collect();
        Ok(d)
    }
}

/// Builds a dataset from named columns. Regressors must be numeric; the
/// cluster column may hold numbers or strings.
pub fn build_dataset(
    table: &ColumnTable,
    outcome: &str,
    regressors: &[&str],
    cluster: &str,
) -> Result<Dataset> {
    let y = table.numeric(outcome)?;
    if let Some((row, &value)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryOutcome { column: outcome.into(), row, value });
    }
    let cols = regressors.iter().map(|r| table.numeric(r)).collect::<Result<Vec<_>>>()?;
    let (codes, labels) = encode_levels(table.get(cluster)?)?;
    if labels.len() < 2 {
        return Err(Error::SingleCluster(cluster.into()));
    }
    let n = y.len();
    let mut x = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        x.extend(cols.iter().map(|c| c[i]));
    }
    Dataset::from_parts(
        outcome,
        y,
        regressors.iter().map(|s| s.to_string()).collect(),
        x,
        cluster,
        codes,
        labels,
    )
}

/// Adds a constant column named `_cons` in front of the regressors.
pub fn prepend_constant(d: &Dataset) -> Result<Dataset> {
    let k = d.k();
    let n = d.n_obs();
    let mut x = Vec::with_capacity(n * (k + 1));
    for i in 0..n {
        x.push(1.0);
        x.extend_from_slice(d.row(i));
    }
    let mut names = vec!["_cons".to_string()];
    names.extend(d.names.iter().cloned());
    let mut out = Dataset::from_parts(
        &d.outcome_name,
        d.y.clone(),
        names,
        x,
        &d.cluster_name,
        d.cluster.clone(),
        d.cluster_labels.clone(),
    )?;
    out.row_order = d.row_order.clone();
    Ok(out)
}

/// Replaces the constant column with one dummy per fixed-effect level.
pub fn expand_fixed_effects(d: &Dataset, fe: &FixedEffectSpec) -> Result<Dataset> {
    if fe.levels.len() < 2 {
        return Err(Error::TooFewLevels(fe.name.clone()));
    }
    let constant = d.design.constant_column().ok_or(Error::NoConstantColumn)?;
    let k = d.k();
    let n = d.n_obs();
    if fe.codes.len() != n {
        return Err(Error::Invalid("fixed-effect codes do not match the dataset".into()));
    }
    let mut counts = vec![0usize; fe.levels.len()];
    for &c in &fe.codes {
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Invalid(format!("fixed-effect `{}` has an empty level", fe.name)));
    }
    let k_new = k - 1 + fe.levels.len();
    let mut x = Vec::with_capacity(n * k_new);
    for i in 0..n {
        let row = d.row(i);
        x.extend(row.iter().enumerate().filter(|&(j, _)| j != constant).map(|(_, v)| *v));
        let level = fe.codes[d.row_order[i]];
        x.extend((0..fe.levels.len()).map(|l| if l == level { 1.0 } else { 0.0 }));
    }
    let mut names: Vec<String> =
        d.names.iter().enumerate().filter(|&(j, _)| j != constant).map(|(_, s)| s.clone()).collect();
    names.extend(fe.levels.iter().map(|l| format!("{}_{l}", fe.name)));
    let mut out = Dataset::from_parts(
        &d.outcome_name,
        d.y.clone(),
        names,
        x,
        &d.cluster_name,
        d.cluster.clone(),
        d.cluster_labels.clone(),
    )?;
    out.row_order = d.row_order.clone();
    Ok(out)
}

/// Summary statistics used in the cluster-variability report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    /// Sample standard deviation over the mean.
    pub coefvar: f64,
}

impl Profile {
    /// Percentiles follow the "summarize, detail" rule: with `P = n p`, take
    /// the average of order statistics `P` and `P + 1` when `P` is integral,
    /// otherwise order statistic `ceil(P)`.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "profile of an empty set");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let pct = |p: f64| {
            let pos = n as f64 * p;
            let fl = pos.floor();
            if (pos - fl).abs() < 1e-12 && fl >= 1.0 && (fl as usize) < n {
                0.5 * (v[fl as usize - 1] + v[fl as usize])
            } else {
                v[(pos.ceil() as usize).clamp(1, n) - 1]
            }
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            min: v[0],
            q1: pct(0.25),
            median: pct(0.5),
            mean,
            q3: pct(0.75),
            max: v[n - 1],
            coefvar: sd / mean,
        }
    }
}

/// Profile of the cluster sizes `N_g`.
pub fn cluster_size_profile(d: &Dataset) -> Profile {
    let sizes: Vec<f64> = d.cluster_sizes.iter().map(|&s| s as f64).collect();
    Profile::of(&sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(y: Vec<f64>, x: Vec<f64>, cl: Vec<&str>) -> ColumnTable {
        ColumnTable::new(vec![
            Column { name: "y".into(), data: ColumnData::Numeric(y.into_iter().map(Some).collect()) },
            Column { name: "x".into(), data: ColumnData::Numeric(x.into_iter().map(Some).collect()) },
            Column {
                name: "c".into(),
                data: ColumnData::Text(cl.into_iter().map(|s| Some(s.to_string())).collect()),
            },
        ])
        .unwrap()
    }

    #[test]
    fn six_rows_three_clusters() {
        let t = table(
            vec![0., 1., 1., 0., 1., 0.],
            vec![1., 2., 3., 4., 5., 6.],
            vec!["B", "A", "C", "A", "B", "C"],
        );
        let d = build_dataset(&t, "y", &["x"], "c").unwrap();
        assert_eq!(d.n_clusters(), 3);
        assert_eq!(d.cluster_sizes(), &[2, 2, 2]);
        assert_eq!(d.cluster_labels(), &["A", "B", "C"]);
        // stable within cluster: A rows are inputs 1 and 3
        assert_eq!(&d.row_order()[..2], &[1, 3]);
        assert_eq!(d.row(0), &[2.0]);
    }

    #[test]
    fn rejects_non_binary_outcome() {
        let t = table(vec![0., 2., 1., 0.], vec![1., 2., 3., 4.], vec!["a", "a", "b", "b"]);
        assert!(matches!(
            build_dataset(&t, "y", &["x"], "c"),
            Err(Error::NonBinaryOutcome { row: 1, .. })
        ));
    }

    #[test]
    fn rejects_single_cluster() {
        let t = table(vec![0., 1., 1., 0.], vec![1., 2., 3., 4.], vec!["a"; 4]);
        assert!(matches!(build_dataset(&t, "y", &["x"], "c"), Err(Error::SingleCluster(_))));
    }

    #[test]
    fn rejects_missing_cells_and_columns() {
        let mut t = table(vec![0., 1., 1., 0.], vec![1., 2., 3., 4.], vec!["a", "a", "b", "b"]);
        assert!(matches!(build_dataset(&t, "y", &["z"], "c"), Err(Error::MissingColumn(_))));
        t.push(Column {
            name: "z".into(),
            data: ColumnData::Numeric(vec![Some(1.0), None, Some(2.0), Some(f64::NAN)]),
        })
        .unwrap();
        assert!(matches!(
            build_dataset(&t, "y", &["z"], "c"),
            Err(Error::MissingValue { row: 1, .. })
        ));
    }

    #[test]
    fn numeric_cluster_labels_sort_numerically() {
        let t = ColumnTable::new(vec![
            Column {
                name: "y".into(),
                data: ColumnData::Numeric(vec![Some(0.), Some(1.), Some(0.), Some(1.)]),
            },
            Column {
                name: "c".into(),
                data: ColumnData::Numeric(vec![Some(10.), Some(9.), Some(10.), Some(9.)]),
            },
        ])
        .unwrap();
        let d = build_dataset(&t, "y", &[], "c");
        // k = 0 is rejected, but label coding is what we check here
        assert!(d.is_err());
        let (codes, levels) = encode_levels(t.get("c").unwrap()).unwrap();
        assert_eq!(levels, vec!["9", "10"]);
        assert_eq!(codes, vec![1, 0, 1, 0]);
    }

    fn with_constant(y: Vec<f64>, x: Vec<f64>, cl: Vec<usize>) -> Dataset {
        let n = y.len();
        let mut rows = Vec::new();
        for xi in &x {
            rows.push(1.0);
            rows.push(*xi);
        }
        let g = cl.iter().max().unwrap() + 1;
        let _ = n;
        Dataset::from_parts(
            "y",
            y,
            vec!["_cons".into(), "x".into()],
            rows,
            "c",
            cl,
            (0..g).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_level_fixed_effect_dummies() {
        let d = with_constant(vec![0., 1., 1., 0., 1.], vec![0.5, 1.0, 2.0, 3.0, 1.5], vec![0, 0, 1, 1, 1]);
        let fe = FixedEffectSpec { name: "f".into(), levels: vec!["1".into(), "2".into()], codes: vec![0, 0, 1, 1, 1] };
        let e = expand_fixed_effects(&d, &fe).unwrap();
        assert_eq!(e.k(), 3);
        assert_eq!(e.names(), &["x", "f_1", "f_2"]);
        let col = |j: usize| (0..5).map(|i| e.row(i)[j]).collect::<Vec<_>>();
        assert_eq!(col(1), vec![1., 1., 0., 0., 0.]);
        assert_eq!(col(2), vec![0., 0., 1., 1., 1.]);
    }

    #[test]
    fn three_level_fe_grows_k() {
        // k = 4 with constant, 3 levels -> 6
        let n = 9;
        let mut x = Vec::new();
        for i in 0..n {
            x.extend_from_slice(&[1.0, i as f64, (i * i) as f64 % 5.0, (i % 2) as f64]);
        }
        let d = Dataset::from_parts(
            "y",
            (0..n).map(|i| (i % 2) as f64).collect(),
            vec!["_cons".into(), "a".into(), "b".into(), "c".into()],
            x,
            "cl",
            (0..n).map(|i| i / 3).collect(),
            vec!["0".into(), "1".into(), "2".into()],
        )
        .unwrap();
        let fe = FixedEffectSpec {
            name: "cl".into(),
            levels: vec!["0".into(), "1".into(), "2".into()],
            codes: (0..n).map(|i| i / 3).collect(),
        };
        let e = expand_fixed_effects(&d, &fe).unwrap();
        assert_eq!(e.k(), 6);
        // FE identical to the cluster: each dummy is nonzero in exactly one cluster
        for l in 0..3 {
            let nz: std::collections::BTreeSet<usize> =
                (0..n).filter(|&i| e.row(i)[3 + l] != 0.0).map(|i| e.cluster()[i]).collect();
            assert_eq!(nz.into_iter().collect::<Vec<_>>(), vec![l]);
        }
    }

    #[test]
    fn fe_without_constant_fails() {
        let d = Dataset::from_parts(
            "y",
            vec![0., 1., 1., 0.],
            vec!["x".into()],
            vec![1., 2., 3., 4.],
            "c",
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let fe = FixedEffectSpec { name: "f".into(), levels: vec!["a".into(), "b".into()], codes: vec![0, 0, 1, 1] };
        assert_eq!(expand_fixed_effects(&d, &fe), Err(Error::NoConstantColumn));
    }

    #[test]
    fn profile_values() {
        let p = Profile::of(&[500.0; 24]);
        assert_eq!(p.coefvar, 0.0);
        let p = Profile::of(&[1.0, 3.0]);
        assert_eq!(p.mean, 2.0);
        assert!((p.coefvar - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let p = Profile::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((p.min, p.q1, p.median, p.q3, p.max), (1.0, 1.5, 2.5, 3.5, 4.0));
        let p = Profile::of(&[5.0, 1.0, 3.0]);
        assert_eq!((p.q1, p.median, p.q3), (1.0, 3.0, 5.0));
    }

    #[test]
    fn design_collapses_duplicates() {
        let d = with_constant(
            vec![0., 1., 1., 0., 1., 1.],
            vec![1.0, 1.0, 2.0, 1.0, 1.0, 1.0],
            vec![0, 0, 0, 1, 1, 1],
        );
        let des = d.design();
        assert_eq!(des.n_groups(), 3);
        assert_eq!(des.n_obs(), 6);
        assert_eq!(des.cluster_sizes(), vec![3, 3]);
        let g0 = des.cluster_groups(0);
        assert_eq!(g0.len(), 2);
        assert_eq!(des.trials(g0.start), 2.0);
        assert_eq!(des.successes(g0.start), 1.0);
        assert_eq!(des.constant_column(), Some(0));
        assert!((des.mean_y(None) - 4.0 / 6.0).abs() < 1e-15);
    }
}
