//! Table of shipped configs.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::config::load;

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub kind: String,
    pub description: String,
    /// `quantity expectation (provenance)` per expected number.
    pub expected: Vec<String>,
}

/// Rows for every `*.json` config in `dir`, sorted by file name. A missing
/// or empty directory yields no rows; unreadable configs are listed with
/// the parse error in place of a description.
pub fn list_configs(dir: &Path) -> Vec<Row> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            match load(p) {
                Ok(c) => Row {
                    name,
                    kind: c.experiment.kind().into(),
                    description: c.common.description,
                    expected: c
                        .common
                        .expected
                        .iter()
                        .map(|e| format!("{} ({})", e.describe(), e.provenance))
                        .collect(),
                },
                Err(e) => Row {
                    name,
                    kind: "?".into(),
                    description: format!("unreadable: {e}"),
                    expected: Vec::new(),
                },
            }
        })
        .collect()
}

pub fn write_table<W: Write>(rows: &[Row], mut out: W) -> io::Result<()> {
    let w_name = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
    let w_kind = rows.iter().map(|r| r.kind.len()).max().unwrap_or(0).max(4);
    writeln!(out, "{:w_name$}  {:w_kind$}  description", "name", "kind")?;
    for r in rows {
        writeln!(out, "{:w_name$}  {:w_kind$}  {}", r.name, r.kind, r.description)?;
        for e in &r.expected {
            writeln!(out, "{:w_name$}  {:w_kind$}    expects {e}", "", "")?;
        }
    }
    Ok(())
}
