//! File formats: group files, GMT gene-set collections, and matrix CSV.
//!
//! Group file grammar (UTF-8, LF):
//!
//! ```text
//! # comment
//! p=<variable count>
//! <name>\t<weight>\t<comma-separated 1-based indices, strictly increasing>
//! ```
//!
//! Indices are 1-based on disk and 0-based in memory; the shift happens
//! here and nowhere else. Parsers reject malformed input instead of
//! guessing.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::groups::{GroupError, GroupStructure};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("row {0} has a different number of cells")]
    RaggedRows(usize),
    #[error("row {row}, column {col}: not a number: {cell:?}")]
    NonNumericCell { row: usize, col: usize, cell: String },
    #[error("header symbols are not unique: {0:?}")]
    DuplicateSymbol(String),
    #[error("no gene set symbol matches the header")]
    EmptyAfterFilter,
    #[error(transparent)]
    Validation(#[from] GroupError),
}

fn parse_err(line: usize, reason: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses the group file grammar into a validated structure.
pub fn parse_group_file(text: &str) -> Result<GroupStructure, IoError> {
    let mut p: Option<usize> = None;
    let mut names = Vec::new();
    let mut weights = Vec::new();
    let mut groups = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if p.is_none() {
            let rest = line
                .strip_prefix("p=")
                .ok_or_else(|| parse_err(lineno, "expected p=<int> header"))?;
            let val: usize = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid variable count {rest:?}")))?;
            p = Some(val);
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing group name"))?;
        let weight_str = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing weight field"))?;
        let index_str = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing index list"))?;
        if fields.next().is_some() {
            return Err(parse_err(lineno, "too many tab-separated fields"));
        }
        let weight: f64 = weight_str
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid weight {weight_str:?}")))?;
        let mut members = Vec::new();
        let mut last: Option<usize> = None;
        for tok in index_str.split(',') {
            let one_based: usize = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid index {tok:?}")))?;
            if one_based == 0 {
                return Err(parse_err(lineno, "indices are 1-based; got 0"));
            }
            if let Some(prev) = last {
                if one_based <= prev {
                    return Err(parse_err(
                        lineno,
                        format!("indices must be strictly increasing at {one_based}"),
                    ));
                }
            }
            last = Some(one_based);
            members.push(one_based - 1);
        }
        names.push(name.to_string());
        weights.push(weight);
        groups.push(members);
    }
    let p = p.ok_or_else(|| parse_err(1, "expected p=<int> header"))?;
    let gs = GroupStructure::new(p, groups, weights)?;
    Ok(gs.with_names(names)?)
}

/// Serializes a structure in the group file grammar (1-based indices).
pub fn write_group_file(gs: &GroupStructure) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "p={}", gs.p());
    for (g, group) in gs.groups().iter().enumerate() {
        let name = gs
            .name(g)
            .map(str::to_string)
            .unwrap_or_else(|| format!("G{}", g + 1));
        let indices: Vec<String> = group.iter().map(|&j| (j + 1).to_string()).collect();
        let _ = writeln!(out, "{name}\t{}\t{}", gs.weights()[g], indices.join(","));
    }
    out
}

/// Result of mapping a GMT collection onto a design-matrix header.
#[derive(Debug, Clone)]
pub struct GmtImport {
    /// Groups over the retained columns, weights `sqrt(post-filter size)`.
    pub groups: GroupStructure,
    /// Retained column -> original header index, in header order.
    pub retained: Vec<usize>,
    /// Names of sets dropped because no symbol matched the header.
    pub dropped_sets: Vec<String>,
}

/// Parses GMT text (`<set>\t<description>\t<symbol>...`) against a header
/// of column symbols: symbols absent from the header are dropped from
/// their sets, sets emptied by the filtering are dropped, and columns not
/// covered by any surviving set are excluded (gene filtering). The
/// retained map lets callers subset the design matrix.
pub fn import_gmt(gmt_text: &str, symbol_header: &[String]) -> Result<GmtImport, IoError> {
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (j, s) in symbol_header.iter().enumerate() {
        if position.insert(s.as_str(), j).is_some() {
            return Err(IoError::DuplicateSymbol(s.clone()));
        }
    }
    let mut sets: Vec<(String, Vec<usize>)> = Vec::new();
    let mut dropped_sets = Vec::new();
    for (idx, raw) in gmt_text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(lineno, "missing set name"))?;
        let _description = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing description field"))?;
        let mut cols: Vec<usize> = fields
            .filter(|s| !s.trim().is_empty())
            .filter_map(|s| position.get(s.trim()).copied())
            .collect();
        cols.sort_unstable();
        cols.dedup();
        if cols.is_empty() {
            dropped_sets.push(name.to_string());
        } else {
            sets.push((name.to_string(), cols));
        }
    }
    if sets.is_empty() {
        return Err(IoError::EmptyAfterFilter);
    }
    // retained columns: union of surviving sets, in header order
    let mut covered = vec![false; symbol_header.len()];
    for (_, cols) in &sets {
        for &c in cols {
            covered[c] = true;
        }
    }
    let retained: Vec<usize> = (0..symbol_header.len()).filter(|&j| covered[j]).collect();
    let mut new_index = vec![usize::MAX; symbol_header.len()];
    for (new, &orig) in retained.iter().enumerate() {
        new_index[orig] = new;
    }
    let names: Vec<String> = sets.iter().map(|(n, _)| n.clone()).collect();
    let groups: Vec<Vec<usize>> = sets
        .iter()
        .map(|(_, cols)| cols.iter().map(|&c| new_index[c]).collect())
        .collect();
    let weights: Vec<f64> = groups.iter().map(|g| (g.len() as f64).sqrt()).collect();
    let gs = GroupStructure::new(retained.len(), groups, weights)?.with_names(names)?;
    Ok(GmtImport {
        groups: gs,
        retained,
        dropped_sets,
    })
}

/// Selects the columns listed in `retained` (e.g. from [`import_gmt`]).
pub fn subset_columns(x: &Array2<f64>, retained: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), retained.len()), |(i, k)| x[(i, retained[k])])
}

/// Parses a rectangular CSV of reals, with an optional leading header row
/// of symbols (detected by any non-numeric first-row cell).
pub fn load_matrix_csv(text: &str) -> Result<(Array2<f64>, Option<Vec<String>>), IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut data_row = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if idx == 0 && cells.iter().any(|c| c.trim().parse::<f64>().is_err()) {
            header = Some(cells.iter().map(|c| c.trim().to_string()).collect());
            width = Some(cells.len());
            continue;
        }
        data_row += 1;
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => return Err(IoError::RaggedRows(data_row)),
            _ => {}
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| IoError::NonNumericCell {
                row: data_row,
                col: col + 1,
                cell: cell.trim().to_string(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonNumericCell {
                    row: data_row,
                    col: col + 1,
                    cell: cell.trim().to_string(),
                });
            }
            parsed.push(v);
        }
        rows.push(parsed);
    }
    let width = width.ok_or(IoError::RaggedRows(0))?;
    let n = rows.len();
    let mut out = Array2::zeros((n, width));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok((out, header))
}

/// Writes a matrix as CSV with shortest round-trip decimals.
pub fn write_matrix_csv(x: &Array2<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let _ = writeln!(out, "{}", h.join(","));
    }
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Loads a vector: a single CSV column (one value per line) or single row.
pub fn load_vector_csv(text: &str) -> Result<Array1<f64>, IoError> {
    let (m, _header) = load_matrix_csv(text)?;
    if m.ncols() == 1 {
        Ok(m.column(0).to_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).to_owned())
    } else {
        Err(IoError::Parse {
            line: 1,
            reason: format!("expected a vector, got a {}x{} matrix", m.nrows(), m.ncols()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_toy3_group_file() {
        let gs = parse_group_file("p=3\nA\t1\t1,2\nB\t1\t1,2,3\n").unwrap();
        assert_eq!(gs.p(), 3);
        assert_eq!(gs.groups(), &[vec![0, 1], vec![0, 1, 2]]);
        assert_eq!(gs.weights(), &[1.0, 1.0]);
        assert_eq!(gs.names().unwrap(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn parse_rejects_missing_header_and_bad_lines() {
        let err = parse_group_file("A\t1\t1,2\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 1, .. }));
        let err = parse_group_file("p=3\nA\t1\t2,1\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }));
        let err = parse_group_file("p=2\nA\tx\t1,2\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }));
        let err = parse_group_file("p=2\nA\t1\t1\n").unwrap_err();
        assert!(matches!(err, IoError::Validation(_)));
    }

    #[test]
    fn group_file_round_trip() {
        let text = "# pathway demo\np=5\nfirst\t1.5\t1,2,3\nsecond\t0.25\t3,4,5\n";
        let gs = parse_group_file(text).unwrap();
        let written = write_group_file(&gs);
        let back = parse_group_file(&written).unwrap();
        assert_eq!(gs, back);
    }

    #[test]
    fn gmt_import_maps_and_filters() {
        let header: Vec<String> = ["TP53", "BRCA1", "EGFR", "MYC", "UNUSED"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let gmt = "setA\tdesc\tTP53\tBRCA1\nsetB\tdesc\tEGFR\tMYC\tNOTINHEADER\nsetC\tdesc\tABSENT1\tABSENT2\n";
        let import = import_gmt(gmt, &header).unwrap();
        assert_eq!(import.dropped_sets, vec!["setC".to_string()]);
        // UNUSED is not in any set: dropped by gene filtering
        assert_eq!(import.retained, vec![0, 1, 2, 3]);
        assert_eq!(import.groups.p(), 4);
        assert_eq!(import.groups.groups(), &[vec![0, 1], vec![2, 3]]);
        for w in import.groups.weights() {
            assert!((w - 2f64.sqrt()).abs() < 1e-15);
        }

        // all symbols present: nothing dropped
        let gmt = "s1\td\tTP53\tBRCA1\tEGFR\ns2\td\tMYC\tUNUSED\n";
        let import = import_gmt(gmt, &header).unwrap();
        assert_eq!(import.retained.len(), header.len());
        assert!(import.dropped_sets.is_empty());

        assert!(matches!(
            import_gmt("only\td\tABSENT\n", &header),
            Err(IoError::EmptyAfterFilter)
        ));
    }

    #[test]
    fn gmt_subset_columns_preserves_order() {
        let x = Array2::from_shape_fn((2, 5), |(i, j)| (i * 5 + j) as f64);
        let sub = subset_columns(&x, &[0, 2, 3]);
        assert_eq!(sub.dim(), (2, 3));
        assert_eq!(sub[(1, 1)], 7.0);
    }

    #[test]
    fn matrix_csv_basics() {
        let (m, h) = load_matrix_csv("1,2\n3,4\n").unwrap();
        assert_eq!(m.dim(), (2, 2));
        assert!(h.is_none());
        assert_eq!(m[(1, 0)], 3.0);

        let (m, h) = load_matrix_csv("a,b\n1,2\n").unwrap();
        assert_eq!(h.unwrap(), vec!["a".to_string(), "b".to_string()]);
        assert_eq!(m.dim(), (1, 2));

        assert!(matches!(
            load_matrix_csv("1,2\n3\n"),
            Err(IoError::RaggedRows(2))
        ));
        assert!(matches!(
            load_matrix_csv("1,2\n3,x\n"),
            Err(IoError::NonNumericCell { row: 2, col: 2, .. })
        ));
    }

    #[test]
    fn matrix_csv_round_trip_shortest_decimal() {
        let x = Array2::from_shape_fn((3, 2), |(i, j)| {
            (i as f64 + 1.0) / (j as f64 + 3.0) * 0.123456789
        });
        let text = write_matrix_csv(&x, None);
        let (back, _) = load_matrix_csv(&text).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn vector_csv_shapes() {
        let v = load_vector_csv("1\n2\n3\n").unwrap();
        assert_eq!(v.to_vec(), vec![1.0, 2.0, 3.0]);
        let v = load_vector_csv("1,2,3\n").unwrap();
        assert_eq!(v.to_vec(), vec![1.0, 2.0, 3.0]);
        assert!(load_vector_csv("1,2\n3,4\n").is_err());
    }
}
