//! Sample restrictions such as `female==1 & age>=30 | union!=0`.
//!
//! Comparisons (`==`, `!=`, `<`, `<=`, `>`, `>=`) of one column against a
//! literal, joined by `&` and `|`; `&` binds tighter. A literal is a number
//! or a quoted string. Missing cells satisfy no comparison.

use clusterjack_core::{ColumnData, ColumnTable};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
enum Literal {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Comparison {
    column: String,
    op: Op,
    value: Literal,
}

/// Disjunction of conjunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    terms: Vec<Vec<Comparison>>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("sample expression: {}", msg.into()))
}

impl Filter {
    pub fn parse(expr: &str) -> Result<Self> {
        let terms = expr
            .split('|')
            .map(|conj| conj.split('&').map(parse_comparison).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    /// Row mask; errors if a column is missing or a literal has the wrong type.
    pub fn mask(&self, table: &ColumnTable) -> Result<Vec<bool>> {
        let n = table.n_rows();
        let mut keep = vec![false; n];
        for conj in &self.terms {
            let mut all = vec![true; n];
            for c in conj {
                let data = &table.get(&c.column).map_err(|e| bad(e.to_string()))?.data;
                for (row, a) in all.iter_mut().enumerate() {
                    *a = *a && c.holds(data, row)?;
                }
            }
            for (k, a) in keep.iter_mut().zip(all) {
                *k |= a;
            }
        }
        Ok(keep)
    }
}

impl Comparison {
    fn holds(&self, data: &ColumnData, row: usize) -> Result<bool> {
        let ord = match (data, &self.value) {
            (ColumnData::Numeric(v), Literal::Number(x)) => match v[row] {
                Some(y) if !y.is_nan() => y.partial_cmp(x),
                _ => return Ok(false),
            },
            (ColumnData::Text(v), Literal::Text(x)) => match &v[row] {
                Some(y) => Some(y.as_str().cmp(x.as_str())),
                None => return Ok(false),
            },
            // Text literal against a numeric column, or the reverse.
            _ => return Err(bad(format!("type mismatch for column `{}`", self.column))),
        };
        let Some(ord) = ord else { return Ok(false) };
        Ok(match self.op {
            Op::Eq => ord.is_eq(),
            Op::Ne => ord.is_ne(),
            Op::Lt => ord.is_lt(),
            Op::Le => ord.is_le(),
            Op::Gt => ord.is_gt(),
            Op::Ge => ord.is_ge(),
        })
    }
}

fn parse_comparison(s: &str) -> Result<Comparison> {
    let s = s.trim();
    // Two-character operators first so `<=` is not read as `<`.
    const OPS: [(&str, Op); 6] = [("==", Op::Eq), ("!=", Op::Ne), ("<=", Op::Le), (">=", Op::Ge), ("<", Op::Lt), (">", Op::Gt)];
    let (pos, tok, op) = OPS
        .iter()
        .filter_map(|&(tok, op)| s.find(tok).map(|p| (p, tok, op)))
        .min_by_key(|&(p, tok, _)| (p, std::cmp::Reverse(tok.len())))
        .ok_or_else(|| bad(format!("no comparison operator in `{s}`")))?;
    let column = s[..pos].trim();
    let rhs = s[pos + tok.len()..].trim();
    if column.is_empty() || rhs.is_empty() {
        return Err(bad(format!("incomplete comparison `{s}`")));
    }
    if column.contains(|c: char| c.is_whitespace() || "=!<>\"'".contains(c)) {
        return Err(bad(format!("invalid column name `{column}`")));
    }
    let value = if let Some(inner) = rhs.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
        Literal::Text(inner.to_string())
    } else {
        Literal::Number(rhs.parse().map_err(|_| bad(format!("`{rhs}` is not a number or quoted string")))?)
    };
    Ok(Comparison { column: column.to_string(), op, value })
}
