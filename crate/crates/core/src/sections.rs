//! Plain-text tensor sections shared by the model checkpoint and the GMM dump.
//!
//! Each section is a header line `name,rows,cols` followed by `rows` lines of
//! `cols` comma-separated values. Lines starting with `#` are comments.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{format_scalar, parse_scalar, Scalar};

pub fn write_section<T: Scalar>(out: &mut String, name: &str, m: &Matrix<T>) {
    let _ = writeln!(out, "{name},{},{}", m.rows(), m.cols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_scalar(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
}

pub fn write_vector<T: Scalar>(out: &mut String, name: &str, v: &[T]) {
    let m = Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector shape");
    write_section(out, name, &m);
}

pub struct SectionReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> SectionReader<'a> {
    pub fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        let line = self.lines.get(self.pos).copied().ok_or(Error::Format {
            line: self.lines.last().map_or(1, |l| l.0),
            message: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok(line)
    }

    pub fn is_done(&self) -> bool {
        self.pos >= self.lines.len()
    }

    /// Reads the next section, which must be called `name`.
    pub fn read<T: Scalar>(&mut self, name: &str) -> Result<Matrix<T>> {
        let (line, header) = self.next_line()?;
        let parts: Vec<&str> = header.split(',').map(str::trim).collect();
        let dims = match parts.as_slice() {
            [n, r, c] if *n == name => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()),
            _ => None,
        };
        let (rows, cols) = dims.ok_or_else(|| Error::Format {
            line,
            message: format!("expected section header `{name},<rows>,<cols>`, found {header:?}"),
        })?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, text) = self.next_line()?;
            let cells: Vec<&str> = text.split(',').collect();
            if cells.len() != cols {
                return Err(Error::Format {
                    line,
                    message: format!("expected {cols} values, found {}", cells.len()),
                });
            }
            for cell in cells {
                let v: T = parse_scalar(cell).ok_or_else(|| Error::Format {
                    line,
                    message: format!("cannot parse {:?}", cell.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Validation(format!("non-finite value at line {line}")));
                }
                data.push(v);
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn read_vector<T: Scalar>(&mut self, name: &str) -> Result<Vec<T>> {
        let m = self.read::<T>(name)?;
        if m.rows() != 1 {
            return Err(Error::Format { line: 0, message: format!("{name} must be a single row") });
        }
        Ok(m.as_slice().to_vec())
    }
}
