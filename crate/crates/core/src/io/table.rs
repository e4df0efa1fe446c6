//! Numeric CSV datasets.

use std::path::Path;

use crate::data::{Dataset, ExposureKind, Features};
use crate::error::{BartError, Result};

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRoles {
    pub outcome: String,
    pub exposure: String,
    /// `None` selects every remaining column in file order.
    pub covariates: Option<Vec<String>>,
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "none", "."];

fn parse_cell(cell: &str, row: usize, col: &str) -> Result<f64> {
    let t = cell.trim();
    if MISSING.contains(&t.to_ascii_lowercase().as_str()) {
        return Err(BartError::MissingValue {
            row,
            col: col.to_string(),
        });
    }
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| BartError::ParseError {
            row,
            col: col.to_string(),
        })
}

/// Reads a headed numeric CSV from any reader. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn read_dataset<R: std::io::Read>(
    reader: R,
    roles: &ColumnRoles,
    kind: ExposureKind,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| BartError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BartError::MissingColumn(name.to_string()))
    };
    let y_col = find(&roles.outcome)?;
    let a_col = find(&roles.exposure)?;
    if y_col == a_col {
        return Err(BartError::Config("outcome and exposure must be different columns".into()));
    }
    let x_cols: Vec<usize> = match &roles.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&j| j != y_col && j != a_col).collect(),
    };
    if x_cols.iter().any(|&j| j == y_col || j == a_col) {
        return Err(BartError::Config("covariates overlap the outcome or exposure".into()));
    }

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut cols = vec![Vec::new(); x_cols.len()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| BartError::Io(e.to_string()))?;
        let get = |j: usize| parse_cell(rec.get(j).unwrap_or(""), row, &header[j]);
        y.push(get(y_col)?);
        let av = get(a_col)?;
        if kind == ExposureKind::Binary && av != 0.0 && av != 1.0 {
            return Err(BartError::ExposureDomainError { row, value: av });
        }
        a.push(av);
        for (c, &j) in cols.iter_mut().zip(&x_cols) {
            c.push(get(j)?);
        }
    }
    let names = x_cols.iter().map(|&j| header[j].clone()).collect();
    Dataset::new(y, a, Features::from_columns(cols)?, names, kind)
}

pub fn ingest_csv(path: &Path, roles: &ColumnRoles, kind: ExposureKind) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| BartError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file, roles, kind)
}

/// Serializes a dataset as `outcome,exposure,<covariates>`. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn dataset_to_csv(data: &Dataset, outcome: &str, exposure: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![outcome.to_string(), exposure.to_string()];
    header.extend(data.names().iter().cloned());
    w.write_record(&header).map_err(|e| BartError::Io(e.to_string()))?;
    for i in 0..data.n() {
        let mut rec = vec![data.y()[i].to_string(), data.a()[i].to_string()];
        rec.extend((0..data.p()).map(|j| data.x().get(i, j).to_string()));
        w.write_record(&rec).map_err(|e| BartError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BartError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BartError::Io(e.to_string()))
}
