//! Free-form MPS reading and writing.
//!
//! Supported sections: NAME, OBJSENSE, ROWS, COLUMNS (with INTORG/INTEND
//! markers), RHS, BOUNDS, ENDATA. Comment lines of the form
//! `* @meta <key> <value>` carry instance metadata through a round trip.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{MilpInstance, ObjSense, Row, RowSense};
use crate::error::{Error, Result};

const META_PREFIX: &str = "* @meta ";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Start,
    Name,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Bounds,
    End,
}

struct ColumnData {
    name: String,
    integer: bool,
    cost: f64,
    entries: Vec<(usize, f64)>,
    lower: Option<f64>,
    upper: Option<f64>,
    binary_bound: bool,
}

struct RowData {
    name: String,
    sense: RowSense,
    rhs: f64,
}

fn number(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, found `{tok}`")))?;
    if v.is_nan() {
        return Err(Error::parse(line, "NaN is not a valid value"));
    }
    Ok(v)
}

/// Parses a free-form MPS model into canonical minimization form.
pub fn parse_mps(text: &str) -> Result<MilpInstance> {
    let mut section = Section::Start;
    let mut name = String::new();
    let mut sense = ObjSense::Min;
    let mut metadata = BTreeMap::new();

    let mut obj_row: Option<String> = None;
    let mut extra_free_rows: Vec<String> = Vec::new();
    let mut rows: Vec<RowData> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();

    let mut cols: Vec<ColumnData> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut in_integer_block = false;
    let mut seen_rhs: Vec<bool> = Vec::new();
    let mut seen_obj: Vec<bool> = Vec::new();
    let mut seen_pairs: std::collections::HashSet<(usize, usize)> = Default::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if let Some(rest) = raw.strip_prefix(META_PREFIX) {
            let mut parts = rest.splitn(2, ' ');
            let key = parts.next().unwrap_or_default().to_string();
            let value = parts.next().unwrap_or_default().to_string();
            metadata.insert(key, value);
            continue;
        }
        if raw.starts_with('*') || raw.trim().is_empty() {
            continue;
        }
        if section == Section::End {
            return Err(Error::parse(line, "content after ENDATA"));
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let is_header = !raw.starts_with(char::is_whitespace);

        if is_header {
            section = match tokens[0] {
                "NAME" => {
                    name = tokens.get(1..).map(|t| t.join(" ")).unwrap_or_default();
                    Section::Name
                }
                "OBJSENSE" => {
                    if let Some(tok) = tokens.get(1) {
                        sense = parse_sense(tok, line)?;
                    }
                    Section::ObjSense
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => Section::End,
                other => {
                    return Err(Error::parse(line, format!("unknown or unsupported section `{other}`")))
                }
            };
            continue;
        }

        match section {
            Section::Start | Section::Name | Section::End => {
                return Err(Error::parse(line, "data line outside of a section"));
            }
            Section::ObjSense => {
                sense = parse_sense(tokens[0], line)?;
            }
            Section::Rows => {
                if tokens.len() != 2 {
                    return Err(Error::parse(line, "ROWS entries need a type and a name"));
                }
                let row_name = tokens[1].to_string();
                if row_index.contains_key(&row_name) || obj_row.as_deref() == Some(&row_name) {
                    return Err(Error::parse(line, format!("duplicate row `{row_name}`")));
                }
                let row_sense = match tokens[0] {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(row_name);
                        } else {
                            extra_free_rows.push(row_name);
                        }
                        continue;
                    }
                    "L" => RowSense::Le,
                    "G" => RowSense::Ge,
                    "E" => RowSense::Eq,
                    t => return Err(Error::parse(line, format!("unknown row type `{t}`"))),
                };
                row_index.insert(row_name.clone(), rows.len());
                rows.push(RowData { name: row_name, sense: row_sense, rhs: 0.0 });
            }
            Section::Columns => {
                if tokens.len() >= 3 && tokens[1].trim_matches('\'') == "MARKER" {
                    match tokens[2].trim_matches('\'') {
                        "INTORG" => in_integer_block = true,
                        "INTEND" => in_integer_block = false,
                        m => return Err(Error::parse(line, format!("unknown marker `{m}`"))),
                    }
                    continue;
                }
                if tokens.len() != 3 && tokens.len() != 5 {
                    return Err(Error::parse(line, "COLUMNS entries need a column and 1 or 2 (row, value) pairs"));
                }
                let col = *col_index.entry(tokens[0].to_string()).or_insert_with(|| {
                    cols.push(ColumnData {
                        name: tokens[0].to_string(),
                        integer: in_integer_block,
                        cost: 0.0,
                        entries: Vec::new(),
                        lower: None,
                        upper: None,
                        binary_bound: false,
                    });
                    seen_obj.push(false);
                    cols.len() - 1
                });
                for pair in tokens[1..].chunks(2) {
                    let value = number(pair[1], line)?;
                    if !value.is_finite() {
                        return Err(Error::parse(line, "coefficients must be finite"));
                    }
                    if obj_row.as_deref() == Some(pair[0]) {
                        if std::mem::replace(&mut seen_obj[col], true) {
                            return Err(Error::parse(line, format!("duplicate objective entry for `{}`", tokens[0])));
                        }
                        cols[col].cost = value;
                    } else if let Some(&r) = row_index.get(pair[0]) {
                        if !seen_pairs.insert((r, col)) {
                            return Err(Error::parse(
                                line,
                                format!("duplicate coefficient for ({}, {})", pair[0], tokens[0]),
                            ));
                        }
                        if value != 0.0 {
                            cols[col].entries.push((r, value));
                        }
                    } else if !extra_free_rows.iter().any(|r| r == pair[0]) {
                        return Err(Error::parse(line, format!("unknown row `{}`", pair[0])));
                    }
                }
            }
            Section::Rhs => {
                if seen_rhs.is_empty() {
                    seen_rhs = vec![false; rows.len()];
                }
                let pairs = match tokens.len() {
                    2 | 4 => &tokens[..],
                    3 | 5 => &tokens[1..],
                    _ => return Err(Error::parse(line, "malformed RHS entry")),
                };
                for pair in pairs.chunks(2) {
                    let value = number(pair[1], line)?;
                    if !value.is_finite() {
                        return Err(Error::parse(line, "right-hand sides must be finite"));
                    }
                    if obj_row.as_deref() == Some(pair[0]) {
                        return Err(Error::parse(line, "objective constants are not supported"));
                    }
                    let r = *row_index
                        .get(pair[0])
                        .ok_or_else(|| Error::parse(line, format!("unknown row `{}`", pair[0])))?;
                    if std::mem::replace(&mut seen_rhs[r], true) {
                        return Err(Error::parse(line, format!("duplicate rhs for `{}`", pair[0])));
                    }
                    rows[r].rhs = value;
                }
            }
            Section::Bounds => {
                let kind = tokens[0];
                let takes_value = matches!(kind, "UP" | "LO" | "FX" | "LI" | "UI");
                // Either "TYPE SET COL [VAL]" or "TYPE COL [VAL]".
                let (col_tok, val_tok) = match (takes_value, tokens.len()) {
                    (true, 4) => (tokens[2], Some(tokens[3])),
                    (true, 3) => (tokens[1], Some(tokens[2])),
                    (false, 3) => (tokens[2], None),
                    (false, 2) => (tokens[1], None),
                    (false, 4) if kind == "BV" => (tokens[2], None),
                    _ => return Err(Error::parse(line, format!("malformed `{kind}` bound"))),
                };
                let c = *col_index
                    .get(col_tok)
                    .ok_or_else(|| Error::parse(line, format!("unknown column `{col_tok}`")))?;
                let value = val_tok
                    .map(|t| number(t, line))
                    .transpose()?
                    .map(|v| if v >= 1e30 { f64::INFINITY } else if v <= -1e30 { f64::NEG_INFINITY } else { v });
                let col = &mut cols[c];
                match kind {
                    "UP" => col.upper = value,
                    "LO" => col.lower = value,
                    "FX" => {
                        col.lower = value;
                        col.upper = value;
                    }
                    "FR" => {
                        col.lower = Some(f64::NEG_INFINITY);
                        col.upper = Some(f64::INFINITY);
                    }
                    "MI" => col.lower = Some(f64::NEG_INFINITY),
                    "PL" => col.upper = Some(f64::INFINITY),
                    "BV" => col.binary_bound = true,
                    "LI" => {
                        col.integer = true;
                        col.lower = value;
                    }
                    "UI" => {
                        col.integer = true;
                        col.upper = value;
                    }
                    t => return Err(Error::parse(line, format!("unknown bound type `{t}`"))),
                }
            }
        }
    }

    if section != Section::End {
        return Err(Error::parse(text.lines().count() + 1, "missing ENDATA"));
    }
    if obj_row.is_none() {
        return Err(Error::parse(0, "no objective (N) row"));
    }

    // Binaries first, original order preserved within each group.
    let mut order: Vec<usize> = Vec::with_capacity(cols.len());
    let mut is_binary = vec![false; cols.len()];
    for (c, col) in cols.iter().enumerate() {
        let lo = col.lower.unwrap_or(0.0);
        let hi = col.upper.unwrap_or(if col.integer { 1.0 } else { f64::INFINITY });
        if col.binary_bound {
            is_binary[c] = true;
        } else if col.integer {
            if lo == 0.0 && hi == 1.0 {
                is_binary[c] = true;
            } else {
                return Err(Error::Unsupported(format!(
                    "general integer variable `{}` with bounds [{lo}, {hi}]",
                    col.name
                )));
            }
        }
    }
    order.extend((0..cols.len()).filter(|&c| is_binary[c]));
    order.extend((0..cols.len()).filter(|&c| !is_binary[c]));
    let mut new_index = vec![0usize; cols.len()];
    for (pos, &c) in order.iter().enumerate() {
        new_index[c] = pos;
    }

    let mut inst = MilpInstance::new(name);
    inst.sense = sense;
    inst.metadata = metadata;
    let mut row_coeffs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows.len()];
    for &c in &order {
        let col = &cols[c];
        let cost = match sense {
            ObjSense::Min => col.cost,
            ObjSense::Max => -col.cost,
        };
        let j = if is_binary[c] {
            inst.add_binary(col.name.clone(), cost)?
        } else {
            let lo = col.lower.unwrap_or(0.0);
            let hi = col.upper.unwrap_or(f64::INFINITY);
            inst.add_continuous(col.name.clone(), cost, lo, hi)
                .map_err(|e| Error::parse(0, format!("column `{}`: {e}", col.name)))?
        };
        for &(r, a) in &col.entries {
            row_coeffs[r].push((j, a));
        }
    }
    for (r, row) in rows.into_iter().enumerate() {
        let mut coeffs = std::mem::take(&mut row_coeffs[r]);
        coeffs.sort_by_key(|&(j, _)| j);
        inst.rows.push(Row { name: row.name, coeffs, sense: row.sense, rhs: row.rhs });
    }
    inst.validate()?;
    Ok(inst)
}

fn parse_sense(tok: &str, line: usize) -> Result<ObjSense> {
    match tok.to_ascii_uppercase().as_str() {
        "MIN" | "MINIMIZE" | "MINIMISE" => Ok(ObjSense::Min),
        "MAX" | "MAXIMIZE" | "MAXIMISE" => Ok(ObjSense::Max),
        other => Err(Error::parse(line, format!("unknown objective sense `{other}`"))),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes an instance as free-form MPS. Floats carry 17 significant
/// digits so that `parse_mps(&write_mps(i)) == i`.
pub fn write_mps(inst: &MilpInstance) -> String {
    let mut out = String::new();
    let name = if inst.name.is_empty() { "UNNAMED" } else { &inst.name };
    let _ = writeln!(out, "NAME {name}");
    for (k, v) in &inst.metadata {
        let _ = writeln!(out, "{META_PREFIX}{k} {v}");
    }
    if inst.sense == ObjSense::Max {
        out.push_str("OBJSENSE\n    MAX\n");
    }

    let mut obj_name = String::from("OBJ");
    while inst.rows.iter().any(|r| r.name == obj_name) {
        obj_name.push('_');
    }
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {obj_name}");
    for row in &inst.rows {
        let tag = match row.sense {
            RowSense::Le => "L",
            RowSense::Ge => "G",
            RowSense::Eq => "E",
        };
        let _ = writeln!(out, " {tag}  {}", row.name);
    }

    out.push_str("COLUMNS\n");
    let cols = inst.columns();
    let q = inst.num_binary();
    if q > 0 {
        out.push_str("    MARKER                 'MARKER'                 'INTORG'\n");
    }
    for j in 0..inst.num_vars() {
        if j == q && q > 0 {
            out.push_str("    MARKER                 'MARKER'                 'INTEND'\n");
        }
        let cost = match inst.sense {
            ObjSense::Min => inst.objective[j],
            ObjSense::Max => -inst.objective[j],
        };
        let var = &inst.var_names[j];
        if cost != 0.0 || cols[j].is_empty() {
            let _ = writeln!(out, "    {var}  {obj_name}  {}", fmt_f64(cost));
        }
        for &(i, a) in &cols[j] {
            let _ = writeln!(out, "    {var}  {}  {}", inst.rows[i].name, fmt_f64(a));
        }
    }
    if q > 0 && q == inst.num_vars() {
        out.push_str("    MARKER                 'MARKER'                 'INTEND'\n");
    }

    out.push_str("RHS\n");
    for row in inst.rows.iter().filter(|r| r.rhs != 0.0) {
        let _ = writeln!(out, "    RHS  {}  {}", row.name, fmt_f64(row.rhs));
    }

    out.push_str("BOUNDS\n");
    for j in 0..inst.num_vars() {
        let var = &inst.var_names[j];
        let (lo, hi) = (inst.lower[j], inst.upper[j]);
        if j < q {
            let _ = writeln!(out, " UP BND  {var}  {}", fmt_f64(1.0));
            continue;
        }
        if lo == hi {
            let _ = writeln!(out, " FX BND  {var}  {}", fmt_f64(lo));
            continue;
        }
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " FR BND  {var}");
            continue;
        }
        if lo == f64::NEG_INFINITY {
            let _ = writeln!(out, " MI BND  {var}");
        } else if lo != 0.0 {
            let _ = writeln!(out, " LO BND  {var}  {}", fmt_f64(lo));
        }
        if hi != f64::INFINITY {
            let _ = writeln!(out, " UP BND  {var}  {}", fmt_f64(hi));
        }
    }
    out.push_str("ENDATA\n");
    out
}
