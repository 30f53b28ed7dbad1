//! Text formats: `%.17g` number formatting and headerless point CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::points::Points;

/// Formats like C's `printf("%.17g", x)`, which round-trips every finite
/// double exactly.
pub fn format_g17(x: f64) -> String {
    format_g(x, 17)
}

fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return if x.is_sign_negative() { "-nan" } else { "nan" }.into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf" } else { "inf" }.into();
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    // Decimal exponent after rounding to p significant digits.
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON formatter that writes every double with `%.17g`.
struct G17Formatter;

impl serde_json::ser::Formatter for G17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if !value.is_finite() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "JSON cannot represent non-finite numbers",
            ));
        }
        writer.write_all(format_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes `value` as compact JSON with `%.17g` numbers. Non-finite
/// doubles are an error.
pub fn to_json_g17<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, G17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn write_json_g17<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_json_g17(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_points<W: Write>(points: &Points, mut out: W, header: bool) -> Result<()> {
    if header {
        let names: Vec<String> = (0..points.dim()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{}", names.join(","))?;
    }
    for r in points.rows() {
        let cells: Vec<String> = r.iter().map(|&v| format_g17(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_points(points: &Points, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_points(points, &mut w, header)?;
    w.flush()?;
    Ok(())
}

/// Reads a point CSV. A first line that does not parse as numbers is taken
/// as a header. An empty input yields an empty set of dimension `fallback_dim`.
pub fn read_points<R: Read>(input: R, fallback_dim: usize) -> Result<Points> {
    let reader = BufReader::new(input);
    let mut points: Option<Points> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if points.is_none() && lineno == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
        };
        match points.as_mut() {
            Some(p) => p
                .push(&row)
                .map_err(|_| Error::Parse(format!("line {}: ragged row", lineno + 1)))?,
            None => points = Some(Points::new(row.len(), row)?),
        }
    }
    Ok(points.unwrap_or_else(|| Points::empty(fallback_dim.max(1))))
}

pub fn load_points(path: impl AsRef<Path>) -> Result<Points> {
    read_points(File::open(path)?, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf_g17() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(format_g17(123456789.0), "123456789");
        assert_eq!(format_g17(1e17), "1e+17");
        assert_eq!(format_g17(1e16), "10000000000000000");
        assert_eq!(format_g17(0.0001), "0.0001");
        assert_eq!(format_g17(1.5e300), "1.5000000000000001e+300");
        assert_eq!(format_g17(0.0), "0");
        assert_eq!(format_g17(f64::INFINITY), "inf");
    }

    proptest! {
        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = format_g17(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_header_and_round_trip() {
        let p = Points::from_rows(&[[0.1, -2.0], [3.0, 1e-7]]).unwrap();
        let mut buf = Vec::new();
        write_points(&p, &mut buf, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        assert_eq!(read_points(&buf[..], 2).unwrap(), p);
    }

    #[test]
    fn empty_csv() {
        let p = read_points(&b""[..], 3).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.dim(), 3);
    }
}
