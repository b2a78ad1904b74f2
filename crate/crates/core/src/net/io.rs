use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Layer, NetParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &str = "BNLAB1";

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        what: "weight file",
        msg: msg.into(),
    })
}

/// Writes the text weight format: magic line, depth, widths `n_0..n_L`, slope, then for each
/// layer the weight rows followed by one bias line. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_params<W: Write>(params: &NetParams, mut out: W) -> Result<()> {
    let mut s = String::new();
    let widths: Vec<String> = params.widths().iter().map(|w| w.to_string()).collect();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "{}", params.depth());
    let _ = writeln!(s, "{}", widths.join(" "));
    let _ = writeln!(s, "{}", params.slope());
    for layer in params.layers() {
        for i in 0..layer.weight.rows() {
            push_row(&mut s, layer.weight.row(i));
        }
        push_row(&mut s, &layer.bias);
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn push_row(s: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s.push('\n');
}

pub fn read_params<R: Read>(mut input: R) -> Result<NetParams> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .map(str::trim)
            .ok_or_else(|| Error::Format {
                what: "weight file",
                msg: format!("unexpected end of file reading {what}"),
            })
    };
    if next("magic")? != MAGIC {
        return malformed(format!("missing {MAGIC} header"));
    }
    let depth: usize = next("depth")?
        .parse()
        .or_else(|_| malformed("depth is not an integer"))?;
    let widths: Vec<usize> = next("widths")?
        .split_whitespace()
        .map(|w| w.parse().or_else(|_| malformed(format!("bad width {w:?}"))))
        .collect::<Result<_>>()?;
    if depth == 0 || widths.len() != depth + 1 {
        return malformed(format!("expected {} widths, found {}", depth + 1, widths.len()));
    }
    let slope: f64 = next("slope")?
        .parse()
        .or_else(|_| malformed("slope is not a number"))?;

    let parse_row = |line: &str, len: usize| -> Result<Vec<f64>> {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().or_else(|_| malformed(format!("bad number {v:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != len {
            return malformed(format!("expected {len} values on a line, found {}", row.len()));
        }
        Ok(row)
    };

    let mut layers = Vec::with_capacity(depth);
    for ell in 0..depth {
        let (n_in, n_out) = (widths[ell], widths[ell + 1]);
        let mut data = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_out {
            data.extend(parse_row(next("weights")?, n_in)?);
        }
        let weight = Matrix::from_vec(n_out, n_in, data)?;
        let bias = parse_row(next("bias")?, n_out)?;
        layers.push(Layer { weight, bias });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return malformed("trailing data after last layer");
    }
    NetParams::new(layers, slope)
}

pub fn save_params(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetParams> {
    read_params(fs::File::open(path)?)
}
