use std::fmt;

use serde::{Deserialize, Serialize};

use super::CoxFitResult;
use crate::numerics::normal_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub coef: f64,
    pub exp_coef: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

impl SummaryRow {
    pub fn from_coef_se(name: impl Into<String>, coef: f64, se: f64) -> Self {
        let z = if se > 0.0 { coef / se } else { 0.0 };
        Self { name: name.into(), coef, exp_coef: coef.exp(), se, z, p: 2.0 * normal_sf(z.abs()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub fn cox_summary(fit: &CoxFitResult) -> SummaryTable {
    let se = fit.standard_errors();
    let rows = (0..fit.beta.len())
        .map(|j| {
            let name = fit.covariate_names.get(j).cloned().unwrap_or_else(|| (j + 1).to_string());
            SummaryRow::from_coef_se(name, fit.beta[j], se[j])
        })
        .collect();
    SummaryTable { rows }
}

/// `x` with `digits` significant digits in plain decimal notation.
pub(crate) fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub(crate) fn format_scientific(x: f64, digits: usize) -> String {
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    // Rust renders `5.6041e-4`; pad the exponent to two digits.
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(rest) => ('-', rest),
                None => ('+', exp),
            };
            format!("{mantissa}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

impl SummaryTable {
    /// Fixed-width text table, five significant digits per cell.
    pub fn render(&self) -> String {
        self.render_with_digits(5)
    }

    pub fn render_with_digits(&self, digits: usize) -> String {
        let header = ["", "coef", "exp(coef)", "se(coef)", "z", "p"];
        let mut cells: Vec<[String; 6]> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            cells.push([
                r.name.clone(),
                format_significant(r.coef, digits),
                format_significant(r.exp_coef, digits),
                format_significant(r.se, digits),
                format_significant(r.z, digits),
                format_scientific(r.p, digits),
            ]);
        }
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            for (i, c) in row.iter().enumerate() {
                if i == 0 {
                    out.push_str(&format!("{c:<w$}", w = widths[0]));
                } else {
                    out.push_str(&format!(" {c:>w$}", w = widths[i]));
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }

    /// Reads back a table produced by [`SummaryTable::render`].
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or("empty table")?.split_whitespace().collect();
        if header != ["coef", "exp(coef)", "se(coef)", "z", "p"] {
            return Err(format!("unexpected header {header:?}"));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(format!("row {k}: expected 6 fields, found {}", fields.len()));
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|e| format!("row {k} field {i}: {e}"));
            rows.push(SummaryRow {
                name: fields[0].to_string(),
                coef: num(1)?,
                exp_coef: num(2)?,
                se: num(3)?,
                z: num(4)?,
                p: num(5)?,
            });
        }
        Ok(Self { rows })
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
