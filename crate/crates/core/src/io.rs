//! Matrix CSV and JSON file formats.
//!
//! Matrices are plain comma-separated rows with no header. Values are written
//! with Rust's shortest round-trip formatting, so reading a written file gives
//! back bit-identical `f64`s.

use crate::model::SpatialResponse;
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Parses CSV text. Blank lines are skipped; line and column numbers in
/// errors are 1-based.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Parse {
                    line: ln + 1,
                    column: c.min(fields.len()) + 1,
                    msg: format!("ragged row: expected {c} fields, found {}", fields.len()),
                })
            }
            _ => {}
        }
        for (cn, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: ln + 1,
                column: cn + 1,
                msg: format!("not a number: {:?}", field.trim()),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format("matrix file has zero rows".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_matrix(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses a spatial response and re-runs the constructor checks.
pub fn parse_spatial_response(text: &str) -> Result<SpatialResponse> {
    let raw: SpatialResponse = serde_json::from_str(text)?;
    if raw.hs_pixels() != raw.windows().len() {
        return Err(Error::Format(format!(
            "\"Lh\" is {} but {} windows are listed",
            raw.hs_pixels(),
            raw.windows().len()
        )));
    }
    SpatialResponse::new(raw.sr_pixels(), raw.windows().to_vec())
}

pub fn read_spatial_response(path: impl AsRef<Path>) -> Result<SpatialResponse> {
    parse_spatial_response(&fs::read_to_string(path)?)
}

pub fn write_spatial_response(path: impl AsRef<Path>, g: &SpatialResponse) -> Result<()> {
    write_json(path, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_name_the_line() {
        match parse_matrix("1,2,3\n4,5\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_names_line_and_column() {
        match parse_matrix("1,2\n3,x\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input() {
        let err = parse_matrix("\n\n").unwrap_err();
        assert!(err.to_string().contains("zero rows"));
    }

    #[test]
    fn extreme_values_round_trip() {
        let m = DMatrix::from_row_slice(
            1,
            6,
            &[
                0.1,
                1e-300,
                -2.5e300,
                f64::MIN_POSITIVE,
                1.0 / 3.0,
                f64::INFINITY,
            ],
        );
        let back = parse_matrix(&format_matrix(&m)).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn spatial_json_checks_counts() {
        let text = r#"{"L":2,"Lh":2,"windows":[{"pixels":[0,1],"weights":[0.5,0.5]}]}"#;
        assert!(matches!(
            parse_spatial_response(text),
            Err(Error::Format(_))
        ));
        let text = r#"{"L":2,"Lh":1,"windows":[{"pixels":[0,1],"weights":[0.5,0.6]}]}"#;
        assert!(parse_spatial_response(text).is_err());
    }
}
