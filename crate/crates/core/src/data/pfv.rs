//! PFV v1 feature files.
//!
//! ```text
//! #PFV1,ptm=<name>,dim=<D>,labels=<name0;name1;...>
//! <utterance_id>,<label_name>,<v0>,...,<v{D-1}>
//! ```
//!
//! Values are written in shortest round-trip decimal form, so `write(load(f))`
//! reproduces every value bit-exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, DataResult, FeatureTable};
use crate::nn::Tensor2;

const MAGIC: &str = "#PFV1";

fn parse_header(line: &str) -> DataResult<(String, usize, Vec<String>)> {
    let bad = |msg: String| DataError::MalformedHeader(msg);
    let mut fields = line.split(',');
    if fields.next() != Some(MAGIC) {
        return Err(bad(format!("expected `{MAGIC}` at start of file")));
    }
    let (mut ptm, mut dim, mut labels) = (None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("field `{field}` is not key=value")))?;
        let slot_taken = match key {
            "ptm" => ptm.replace(value.to_string()).is_some(),
            "dim" => {
                let d: usize = value
                    .parse()
                    .map_err(|_| bad(format!("dim `{value}` is not a count")))?;
                dim.replace(d).is_some()
            }
            "labels" => {
                let names: Vec<String> = value.split(';').map(str::to_string).collect();
                labels.replace(names).is_some()
            }
            other => return Err(bad(format!("unknown header key `{other}`"))),
        };
        if slot_taken {
            return Err(bad(format!("header key `{key}` repeated")));
        }
    }
    let ptm = ptm.ok_or_else(|| bad("missing ptm=".into()))?;
    let dim = dim.ok_or_else(|| bad("missing dim=".into()))?;
    let labels = labels.ok_or_else(|| bad("missing labels=".into()))?;
    if dim == 0 {
        return Err(bad("dim must be positive".into()));
    }
    if labels.iter().any(|l| l.is_empty()) {
        return Err(bad("empty label name".into()));
    }
    let unique: HashSet<&String> = labels.iter().collect();
    if unique.len() != labels.len() {
        return Err(bad("duplicate label name".into()));
    }
    Ok((ptm, dim, labels))
}

/// Parses PFV text.
pub fn parse_feature_table(text: &str) -> DataResult<FeatureTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty file".into()))?;
    let (ptm_name, dim, class_names) = parse_header(header.trim_end_matches('\r'))?;

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(DataError::RaggedRow {
                line: line_no,
                expected: dim,
                got: fields.len().saturating_sub(2),
            });
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(DataError::EmptyId { line: line_no });
        }
        if !seen.insert(id.to_string()) {
            return Err(DataError::DuplicateId(id.to_string()));
        }
        let label = class_names
            .iter()
            .position(|c| c == fields[1])
            .ok_or_else(|| DataError::UnknownLabel {
                line: line_no,
                label: fields[1].to_string(),
            })?;
        for (col, text) in fields[2..].iter().enumerate() {
            let v: f64 = text.trim().parse().map_err(|_| DataError::BadNumber {
                line: line_no,
                column: col,
                text: text.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    line: line_no,
                    column: col,
                });
            }
            values.push(v);
        }
        ids.push(id.to_string());
        labels.push(label);
    }
    if ids.is_empty() {
        return Err(DataError::EmptyTable);
    }
    let matrix = Tensor2::from_vec(ids.len(), dim, values).expect("row widths checked");
    FeatureTable::new(ptm_name, class_names, ids, labels, matrix)
}

pub fn load_feature_table(path: impl AsRef<Path>) -> DataResult<FeatureTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_feature_table(&text)
}

/// Serialises a table as PFV text.
pub fn format_feature_table(table: &FeatureTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC},ptm={},dim={},labels={}",
        table.ptm_name(),
        table.dim(),
        table.class_names().join(";")
    );
    for (i, id) in table.utterance_ids().iter().enumerate() {
        out.push_str(id);
        out.push(',');
        out.push_str(&table.class_names()[table.labels()[i]]);
        for v in table.matrix().row(i) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_table(table: &FeatureTable, path: impl AsRef<Path>) -> DataResult<()> {
    let path = path.as_ref();
    std::fs::write(path, format_feature_table(table)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
