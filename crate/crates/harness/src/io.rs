//! Plain-text matrix files and ASCII PGM heatmaps.
//!
//! Matrix files start with a `rows cols` header line followed by `rows`
//! lines of `cols` space-separated decimals. Values are written with 17
//! significant digits so `f64` entries round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cosformer_core::Matrix;

use crate::error::{HarnessError, Result};
use crate::viz::CoverageMatrix;

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let err = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&d| d > 0);
    let (rows, cols) = match dims.as_slice() {
        [r, c] => match (parse_dim(r), parse_dim(c)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(err(1, format!("malformed header {header:?}"))),
        },
        _ => return Err(err(1, format!("header must be \"rows cols\", got {header:?}"))),
    };

    let mut data = Vec::with_capacity(rows * cols);
    let mut last_line = 1;
    for (lineno, line) in lines {
        last_line = lineno;
        if line.trim().is_empty() {
            continue;
        }
        if data.len() == rows * cols {
            return Err(err(lineno, format!("more than {rows} data rows")));
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(err(lineno, format!("expected {cols} values, found {}", values.len())));
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| err(lineno, format!("invalid number {v:?}")))?;
            if !x.is_finite() {
                return Err(err(lineno, format!("non-finite value {v:?}")));
            }
            data.push(x);
        }
    }
    if data.len() != rows * cols {
        return Err(err(
            last_line + 1,
            format!("expected {rows} data rows, found {}", data.len() / cols),
        ));
    }
    Ok(Matrix::new(rows, cols, data)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_matrix(&text, path)
}

pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix(m)).map_err(|e| HarnessError::io(path, e))
}

/// 8-bit gray level `round(255 * value)` of a value in [0, 1].
pub fn gray_level(value: f64) -> u8 {
    (255.0 * value.clamp(0.0, 1.0)).round() as u8
}

/// Renders `rows x cols` values in [0, 1] as an ASCII (P2) graymap.
pub fn format_pgm(values: &[f64], rows: usize, cols: usize) -> String {
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|&v| gray_level(v).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn write_pgm(cov: &CoverageMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_pgm_values(&cov.values, cov.size, cov.size, path)
}

pub fn write_pgm_values(values: &[f64], rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pgm(values, rows, cols)).map_err(|e| HarnessError::io(path, e))
}

/// Decoded P2 graymap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub max_value: u16,
    pub pixels: Vec<u16>,
}

pub fn parse_pgm(text: &str, path: &Path) -> Result<Graymap> {
    let err = |message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    // tokens with their line numbers, comments stripped
    let mut tokens = text.lines().enumerate().flat_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        l.split_whitespace().map(move |t| (i + 1, t))
    });
    match tokens.next() {
        Some((_, "P2")) => {}
        _ => return Err(err("missing P2 magic".into())),
    }
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let (line, t) = tokens.next().ok_or_else(|| err("truncated header".into()))?;
        *slot = t.parse().map_err(|_| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid header field {t:?}"),
        })?;
    }
    let [width, height, max_value] = header;
    if max_value == 0 || max_value > u16::MAX as usize {
        return Err(err(format!("invalid max value {max_value}")));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for (line, t) in tokens {
        let v: usize = t.parse().map_err(|_| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid pixel {t:?}"),
        })?;
        if v > max_value {
            return Err(HarnessError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("pixel {v} exceeds max {max_value}"),
            });
        }
        pixels.push(v as u16);
    }
    if pixels.len() != width * height {
        return Err(err(format!("expected {} pixels, found {}", width * height, pixels.len())));
    }
    Ok(Graymap {
        width,
        height,
        max_value: max_value as u16,
        pixels,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Graymap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_pgm(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn value_count_mismatch_names_line() {
        let e = parse_matrix("2 2\n1 2 3\n4 5\n", p()).unwrap_err();
        assert!(matches!(e, HarnessError::Parse { line: 2, .. }), "{e}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_matrix("", p()), Err(HarnessError::Parse { line: 1, .. })));
        assert!(matches!(parse_matrix("2 x\n", p()), Err(HarnessError::Parse { line: 1, .. })));
        assert!(matches!(parse_matrix("2 1\n1\n", p()), Err(HarnessError::Parse { line: 3, .. })));
        assert!(matches!(parse_matrix("1 1\nnan\n", p()), Err(HarnessError::Parse { line: 2, .. })));
        assert!(matches!(parse_matrix("1 1\n1\n2\n", p()), Err(HarnessError::Parse { line: 3, .. })));
    }

    #[test]
    fn gray_endpoints() {
        assert_eq!(gray_level(1.0), 255);
        assert_eq!(gray_level(0.0), 0);
        assert_eq!(gray_level(0.5), 128);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(parse_pgm("P5\n1 1\n255\n0\n", p()).is_err());
        assert!(parse_pgm("P2\n2 1\n255\n0\n", p()).is_err());
        assert!(parse_pgm("P2\n1 1\n255\n300\n", p()).is_err());
    }

    proptest! {
        #[test]
        fn matrix_text_round_trip_is_exact(
            rows in 1usize..6, cols in 1usize..6,
            vals in proptest::collection::vec(-1e300f64..1e300, 36),
        ) {
            let m = Matrix::from_fn(rows, cols, |i, j| vals[i * cols + j] * 1e-290f64.powi((i + j) as i32 % 3));
            let back = parse_matrix(&format_matrix(&m), p()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn pgm_round_trip(rows in 1usize..8, cols in 1usize..8, vals in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let values = &vals[..rows * cols];
            let g = parse_pgm(&format_pgm(values, rows, cols), p()).unwrap();
            prop_assert_eq!((g.width, g.height, g.max_value), (cols, rows, 255));
            let want: Vec<u16> = values.iter().map(|&v| gray_level(v) as u16).collect();
            prop_assert_eq!(g.pixels, want);
        }
    }
}
