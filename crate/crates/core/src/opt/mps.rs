//! Fixed-format MPS output.
//!
//! Rows are renamed `R0000000`, `R0000001`, ... and columns `C0000000`, ...
//! in model order; the objective row is `OBJ`. The original names go to a
//! JSON map `{"columns": {...}, "objective": "OBJ", "rows": {...}}`.
//! Binaries sit between `INTORG`/`INTEND` markers and also get `BV` bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{MipModel, OptError, Sense, VarKind};

fn row_name(k: usize) -> String {
    format!("R{k:07}")
}

fn col_name(j: usize) -> String {
    format!("C{j:07}")
}

/// Shortest decimal that fits the 12-character numeric field.
fn num(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        return plain;
    }
    let exp = format!("{v:e}");
    if exp.len() <= 12 {
        return exp;
    }
    (0..12)
        .rev()
        .map(|p| format!("{v:.p$e}"))
        .find(|s| s.len() <= 12)
        .expect("0-digit mantissa fits")
}

/// Writes `model` as fixed-format MPS.
pub fn write_mps<W: Write>(model: &MipModel, mut out: W) -> std::io::Result<()> {
    let mut s = String::new();
    let name: String = model.name.chars().take(8).collect();
    writeln!(s, "NAME          {name}").unwrap();
    s.push_str("ROWS\n N  OBJ\n");
    for (k, c) in model.constraints.iter().enumerate() {
        let sense = match c.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        writeln!(s, " {sense}  {}", row_name(k)).unwrap();
    }

    let mut entries: Vec<Vec<(String, f64)>> = vec![Vec::new(); model.variables.len()];
    for &(j, a) in &model.objective {
        entries[j].push(("OBJ".into(), a));
    }
    for (k, c) in model.constraints.iter().enumerate() {
        for &(j, a) in &c.terms {
            entries[j].push((row_name(k), a));
        }
    }

    s.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut markers = 0;
    for (j, v) in model.variables.iter().enumerate() {
        let binary = v.kind == VarKind::Binary;
        if binary != in_int {
            let tag = if binary { "INTORG" } else { "INTEND" };
            writeln!(
                s,
                "    {:<8}  'MARKER'                 '{tag}'",
                format!("MARKER{markers}")
            )
            .unwrap();
            if !binary {
                markers += 1;
            }
            in_int = binary;
        }
        let col = col_name(j);
        if entries[j].is_empty() {
            writeln!(s, "    {col:<8}  {:<8}  {:>12}", "OBJ", "0").unwrap();
        }
        for (row, a) in &entries[j] {
            writeln!(s, "    {col:<8}  {row:<8}  {:>12}", num(*a)).unwrap();
        }
    }
    if in_int {
        writeln!(
            s,
            "    {:<8}  'MARKER'                 'INTEND'",
            format!("MARKER{markers}")
        )
        .unwrap();
    }

    s.push_str("RHS\n");
    for (k, c) in model.constraints.iter().enumerate() {
        if c.rhs != 0.0 {
            writeln!(s, "    RHS       {:<8}  {:>12}", row_name(k), num(c.rhs)).unwrap();
        }
    }

    s.push_str("BOUNDS\n");
    for (j, v) in model.variables.iter().enumerate() {
        let col = col_name(j);
        if v.kind == VarKind::Binary {
            writeln!(s, " BV BND       {col}").unwrap();
            continue;
        }
        if v.lower != 0.0 {
            if v.lower == f64::NEG_INFINITY {
                writeln!(s, " MI BND       {col}").unwrap();
            } else {
                writeln!(s, " LO BND       {col:<8}  {:>12}", num(v.lower)).unwrap();
            }
        }
        if v.upper.is_finite() {
            writeln!(s, " UP BND       {col:<8}  {:>12}", num(v.upper)).unwrap();
        }
    }
    s.push_str("ENDATA\n");
    out.write_all(s.as_bytes())
}

/// JSON map from mangled names back to model names.
pub fn name_map_json(model: &MipModel) -> String {
    let rows: BTreeMap<String, &str> = model
        .constraints
        .iter()
        .enumerate()
        .map(|(k, c)| (row_name(k), c.name.as_str()))
        .collect();
    let columns: BTreeMap<String, &str> = model
        .variables
        .iter()
        .enumerate()
        .map(|(j, v)| (col_name(j), v.name.as_str()))
        .collect();
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "columns": columns,
        "objective": "OBJ",
        "rows": rows,
    }))
    .expect("map serializes");
    text.push('\n');
    text
}

/// Writes `path` and, next to it, `<path>.names.json`.
pub fn export_mps(model: &MipModel, path: &Path) -> Result<(), OptError> {
    let mut buf = Vec::new();
    write_mps(model, &mut buf)?;
    std::fs::write(path, buf)?;
    let mut map_path = path.as_os_str().to_owned();
    map_path.push(".names.json");
    std::fs::write(map_path, name_map_json(model))?;
    Ok(())
}
