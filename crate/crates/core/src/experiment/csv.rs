use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// `%.9g`: nine significant digits, trailing zeros trimmed, exponent form
/// outside `1e-4 <= |v| < 1e9`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Writes a header and rows of preformatted cells with LF line endings.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(24.072815), "24.072815");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_float(123456789.4), "123456789");
        assert_eq!(fmt_float(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_float(-2.5e-7), "-2.5e-07");
        assert_eq!(fmt_float(0.0001), "0.0001");
        assert_eq!(fmt_float(100.0), "100");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(f64::NAN), "nan");
        // rounding that carries into the next decade
        assert_eq!(fmt_float(9.9999999999), "10");
    }
}
