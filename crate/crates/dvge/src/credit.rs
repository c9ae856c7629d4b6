//! Loader for the 21-column numeric credit file (20 attributes plus the
//! `credit_risk` label, 1 = good risk).

use std::path::Path;

use dvge_core::data::{Column, ColumnKind, Table};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 21] = [
    "status",
    "duration",
    "credit_history",
    "purpose",
    "amount",
    "savings",
    "employment_duration",
    "installment_rate",
    "personal_status_sex",
    "other_debtors",
    "present_residence",
    "property",
    "age",
    "other_installment_plans",
    "housing",
    "number_credits",
    "job",
    "people_liable",
    "telephone",
    "foreign_worker",
    "credit_risk",
];

pub const LABEL: &str = "credit_risk";

/// Duration, amount and age; everything else is a coded category.
pub fn kind_of(name: &str) -> ColumnKind {
    match name {
        "duration" | "amount" | "age" => ColumnKind::Continuous,
        _ => ColumnKind::Categorical,
    }
}

/// Reads the file. `delimiter = None` picks comma if the first non-empty
/// line contains one and whitespace otherwise. A first line that does not
/// parse as numbers is taken as a header and skipped.
pub fn load_credit(path: &Path, delimiter: Option<char>) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_credit(&text, delimiter, path)
}

pub fn parse_credit(text: &str, delimiter: Option<char>, path: &Path) -> Result<Table> {
    let delimiter = delimiter.or_else(|| {
        text.lines()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| l.contains(',').then_some(','))
    });
    let fields = |line: &str| -> Vec<String> {
        match delimiter {
            Some(d) if !d.is_whitespace() => line.split(d).map(|f| f.trim().to_string()).collect(),
            _ => line.split_whitespace().map(str::to_string).collect(),
        }
    };
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); COLUMNS.len()];
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = fields(line);
        let is_header = first && row.first().is_some_and(|f| f.parse::<f64>().is_err());
        first = false;
        if is_header {
            continue;
        }
        if row.len() != COLUMNS.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                column: row.len().min(COLUMNS.len()) + 1,
                detail: format!("expected {} fields, found {}", COLUMNS.len(), row.len()),
            });
        }
        for (j, cell) in row.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    column: j + 1,
                    detail: format!("'{}' is not a number", cell),
                })?;
            values[j].push(v);
        }
    }
    if values[0].is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            detail: "no data rows".into(),
        });
    }
    let columns = COLUMNS
        .iter()
        .zip(values)
        .map(|(name, v)| Column::new(*name, kind_of(name), v))
        .collect();
    Ok(Table::new(columns)?)
}
