//! Table rendering: the score, correlation, and exact-match layouts as
//! markdown pipe tables and RFC-4180 CSV.
//!
//! Every row carries the five metric columns (Gram, App, Rel, Nov, Com),
//! printed with two decimal places. Per-column maxima within each row group
//! are emphasized in markdown, with ties all marked; CSV carries the bare
//! values.

use crate::metrics::MetricKind;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("table has no rows")]
    EmptyTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub values: [f64; 5],
}

/// Rows that compete for the per-column highlight, optionally captioned.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGroup {
    pub label: Option<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub title: String,
    pub row_header: String,
    pub groups: Vec<RowGroup>,
}

impl TableSpec {
    pub fn new(title: impl Into<String>, row_header: impl Into<String>) -> TableSpec {
        TableSpec {
            title: title.into(),
            row_header: row_header.into(),
            groups: Vec::new(),
        }
    }

    pub fn push_group(&mut self, label: Option<String>, rows: Vec<TableRow>) {
        self.groups.push(RowGroup { label, rows });
    }

    fn row_count(&self) -> usize {
        self.groups.iter().map(|g| g.rows.len()).sum()
    }
}

fn column_labels() -> [&'static str; 5] {
    MetricKind::ALL.map(MetricKind::short_name)
}

fn format_value(value: f64) -> String {
    format!("{value:.2}")
}

// Column maxima within one group, compared on the printed 2-decimal form so
// that values rendering identically tie.
fn group_maxima(rows: &[TableRow]) -> [String; 5] {
    std::array::from_fn(|col| {
        rows.iter()
            .map(|row| row.values[col])
            .fold(f64::NEG_INFINITY, f64::max)
    })
    .map(format_value)
}

/// Markdown pipe table with per-group column maxima in bold.
pub fn render_markdown(table: &TableSpec) -> Result<String, ReportError> {
    if table.row_count() == 0 {
        return Err(ReportError::EmptyTable);
    }
    let mut out = String::new();
    out.push_str(&format!("### {}\n\n", table.title));
    out.push_str(&format!("| {} |", table.row_header));
    for label in column_labels() {
        out.push_str(&format!(" {label} |"));
    }
    out.push('\n');
    out.push_str("|---|---|---|---|---|---|\n");
    for group in &table.groups {
        if group.rows.is_empty() {
            continue;
        }
        if let Some(label) = &group.label {
            out.push_str(&format!("| *{label}* | | | | | |\n"));
        }
        let maxima = group_maxima(&group.rows);
        for row in &group.rows {
            out.push_str(&format!("| {} |", row.label));
            for (col, value) in row.values.iter().enumerate() {
                let printed = format_value(*value);
                if printed == maxima[col] {
                    out.push_str(&format!(" **{printed}** |"));
                } else {
                    out.push_str(&format!(" {printed} |"));
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// CSV with a `group` column standing in for the markdown group captions.
pub fn render_csv(table: &TableSpec) -> Result<String, ReportError> {
    if table.row_count() == 0 {
        return Err(ReportError::EmptyTable);
    }
    let mut out = String::new();
    out.push_str(&format!("group,{}", csv_field(&table.row_header.to_lowercase())));
    for label in column_labels() {
        out.push_str(&format!(",{}", label.to_lowercase()));
    }
    out.push('\n');
    for group in &table.groups {
        let group_label = group.label.as_deref().unwrap_or("");
        for row in &group.rows {
            out.push_str(&csv_field(group_label));
            out.push(',');
            out.push_str(&csv_field(&row.label));
            for value in row.values {
                out.push_str(&format!(",{}", format_value(value)));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
