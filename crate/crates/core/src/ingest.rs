//! Loading and typing of CDC-shaped health-aging CSV exports.
//!
//! A [`ColumnSchema`] assigns every column a [`Role`]. The shipped default
//! mirrors the 31-column public export; any other layout is described with a
//! schema file of `name = role` lines.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TARGET_COLUMN: &str = "data_value";
pub const GEOLOCATION_COLUMN: &str = "geolocation";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} cells, found {found}")]
    RowArityMismatch {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("unparseable geolocation `{0}`")]
    UnparseableGeolocation(String),
    #[error("geolocation out of range: latitude {latitude}, longitude {longitude}")]
    OutOfRange { latitude: f64, longitude: f64 },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("line {line}: target cell `{value}` is not a finite number")]
    BadTarget { line: u64, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Categorical,
    Numerical,
    Text,
    Geolocation,
    Target,
    Ignored,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Categorical => "categorical",
            Role::Numerical => "numerical",
            Role::Text => "text",
            Role::Geolocation => "geolocation",
            Role::Target => "target",
            Role::Ignored => "ignored",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "categorical" => Role::Categorical,
            "numerical" | "numeric" => Role::Numerical,
            "text" => Role::Text,
            "geolocation" => Role::Geolocation,
            "target" => Role::Target,
            "ignored" | "ignore" => Role::Ignored,
            other => return Err(IngestError::InvalidSchema(format!("unknown role `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

/// Ordered column names with their roles.
///
/// Construction through [`ColumnSchema::new`] guarantees unique names and
/// exactly one `target` and one `geolocation` column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    columns: Vec<Column>,
}

impl ColumnSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(IngestError::InvalidSchema(format!(
                    "duplicate column `{}`",
                    c.name
                )));
            }
        }
        for role in [Role::Target, Role::Geolocation] {
            let count = columns.iter().filter(|c| c.role == role).count();
            if count != 1 {
                return Err(IngestError::InvalidSchema(format!(
                    "expected exactly one `{role}` column, found {count}"
                )));
            }
        }
        Ok(Self { columns })
    }

    /// The 31-column layout of the public health-aging export.
    ///
    /// `questionid` and `locationdesc` are kept as categorical so that the
    /// redundancy filter can discard them; the remaining ID and footnote
    /// columns are ignored.
    pub fn cdc_default() -> Self {
        use Role::*;
        let spec: [(&str, Role); 31] = [
            ("rowid", Ignored),
            ("yearstart", Numerical),
            ("yearend", Numerical),
            ("locationabbr", Categorical),
            ("locationdesc", Categorical),
            ("datasource", Categorical),
            ("class", Categorical),
            ("topic", Categorical),
            ("question", Categorical),
            ("response", Ignored),
            ("data_value_unit", Ignored),
            ("datavaluetypeid", Ignored),
            ("data_value_type", Ignored),
            ("data_value", Target),
            ("data_value_alt", Ignored),
            ("data_value_footnote_symbol", Ignored),
            ("data_value_footnote", Ignored),
            ("low_confidence_limit", Ignored),
            ("high_confidence_limit", Ignored),
            ("stratificationcategory1", Categorical),
            ("stratification1", Categorical),
            ("stratificationcategory2", Categorical),
            ("stratification2", Categorical),
            ("geolocation", Geolocation),
            ("classid", Ignored),
            ("topicid", Ignored),
            ("questionid", Categorical),
            ("locationid", Ignored),
            ("stratificationcategoryid1", Ignored),
            ("stratificationid1", Ignored),
            ("stratificationcategoryid2", Ignored),
        ];
        Self::new(
            spec.iter()
                .map(|(n, r)| Column {
                    name: n.to_string(),
                    role: *r,
                })
                .collect(),
        )
        .expect("default schema is valid")
    }

    /// Parses `name = role` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut columns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, role) = line.split_once('=').ok_or_else(|| {
                IngestError::InvalidSchema(format!("line {}: expected `name = role`", i + 1))
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(IngestError::InvalidSchema(format!(
                    "line {}: empty column name",
                    i + 1
                )));
            }
            columns.push(Column {
                name: name.to_string(),
                role: role.parse()?,
            });
        }
        Self::new(columns)
    }

    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_schema_text(&self) -> String {
        self.columns
            .iter()
            .map(|c| format!("{} = {}\n", c.name, c.role))
            .collect()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names_with_role(&self, role: Role) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn target(&self) -> &str {
        self.names_with_role(Role::Target)[0]
    }

    pub fn geolocation(&self) -> &str {
        self.names_with_role(Role::Geolocation)[0]
    }
}

/// Parsed records, cells in schema order; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub schema: ColumnSchema,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn new(schema: ColumnSchema, rows: Vec<Vec<Option<String>>>) -> Result<Self, IngestError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(IngestError::RowArityMismatch {
                    line: i as u64 + 2,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<&str>>> {
        let idx = self.schema.index_of(name)?;
        Some(self.rows.iter().map(|r| r[idx].as_deref()).collect())
    }

    pub fn cell(&self, row: usize, name: &str) -> Option<&str> {
        let idx = self.schema.index_of(name)?;
        self.rows[row][idx].as_deref()
    }

    /// Parsed target per row; missing cells yield `None`.
    pub fn targets(&self) -> Vec<Option<f64>> {
        let idx = self.schema.index_of(self.schema.target()).unwrap();
        self.rows
            .iter()
            .map(|r| r[idx].as_deref().and_then(|v| v.trim().parse().ok()))
            .collect()
    }

    /// Indices of rows with a present target, in table order.
    pub fn labelled_rows(&self) -> Vec<usize> {
        self.targets()
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|_| i))
            .collect()
    }

    /// Fraction of missing cells per column, in schema order.
    pub fn missing_rates(&self) -> Vec<(String, f64)> {
        let n = self.rows.len().max(1) as f64;
        self.schema
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let missing = self.rows.iter().filter(|r| r[j].is_none()).count();
                (c.name.clone(), missing as f64 / n)
            })
            .collect()
    }

    /// Writes the table as CSV with a header in schema order.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a header-bearing CSV file and reorders its columns to schema order.
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<RawTable, IngestError> {
    let file = fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: io::Read>(reader: R, schema: &ColumnSchema) -> Result<RawTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let positions: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let mapping = schema
        .columns()
        .iter()
        .map(|c| {
            positions
                .get(c.name.to_ascii_lowercase().as_str())
                .copied()
                .ok_or_else(|| IngestError::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let target_idx = schema.index_of(schema.target()).unwrap();

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(IngestError::RowArityMismatch {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let row: Vec<Option<String>> = mapping
            .iter()
            .map(|&src| {
                let cell = &record[src];
                (!cell.is_empty()).then(|| cell.to_string())
            })
            .collect();
        if let Some(v) = &row[target_idx] {
            match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => {}
                _ => {
                    return Err(IngestError::BadTarget {
                        line,
                        value: v.clone(),
                    })
                }
            }
        }
        rows.push(row);
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, IngestError> {
        let ok = latitude.is_finite()
            && longitude.is_finite()
            && (-90.0..=90.0).contains(&latitude)
            && (-180.0..=180.0).contains(&longitude);
        if ok {
            Ok(Self {
                latitude,
                longitude,
            })
        } else {
            Err(IngestError::OutOfRange {
                latitude,
                longitude,
            })
        }
    }

    /// WKT literal, longitude first, six decimals.
    pub fn to_wkt(&self) -> String {
        format!("POINT ({:.6} {:.6})", self.longitude, self.latitude)
    }
}

/// Accepts `POINT (<lon> <lat>)` or `(<lat>, <lon>)`.
pub fn parse_geolocation(cell: &str) -> Result<GeoPoint, IngestError> {
    let bad = || IngestError::UnparseableGeolocation(cell.to_string());
    let s = cell.trim();
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());

    let upper = s.to_ascii_uppercase();
    if let Some(rest) = upper.strip_prefix("POINT") {
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(bad());
        }
        return GeoPoint::new(parse(parts[1])?, parse(parts[0])?);
    }
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let (lat, lon) = inner.split_once(',').ok_or_else(bad)?;
    GeoPoint::new(parse(lat)?, parse(lon)?)
}

/// Column names grouped by role. The target never appears in a feature set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnPartition {
    pub categorical: BTreeSet<String>,
    pub numerical: BTreeSet<String>,
    pub text: BTreeSet<String>,
    pub geolocation: String,
    pub target: String,
}

pub fn partition_columns(table: &RawTable) -> ColumnPartition {
    let schema = &table.schema;
    let set = |role| {
        schema
            .names_with_role(role)
            .into_iter()
            .map(String::from)
            .collect::<BTreeSet<_>>()
    };
    ColumnPartition {
        categorical: set(Role::Categorical),
        numerical: set(Role::Numerical),
        text: set(Role::Text),
        geolocation: schema.geolocation().to_string(),
        target: schema.target().to_string(),
    }
}
