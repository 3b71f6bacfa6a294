//! CSV output helpers.

use std::io::Write;

use crate::confidence::LcbReport;
use crate::error::Result;

/// Format with 12 significant digits, trailing zeros trimmed. Plain decimal
/// notation for moderate magnitudes, scientific otherwise.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.11e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if negative { "-" } else { "" };
    if !(-5..12).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        return if tail.is_empty() {
            format!("{sign}{head}e{exp}")
        } else {
            format!("{sign}{head}.{tail}e{exp}")
        };
    }
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            format!("{}{}", digits, "0".repeat(int_len - digits.len()))
        } else {
            format!("{}.{}", &digits[..int_len], &digits[int_len..])
        }
    };
    format!("{sign}{body}")
}

pub const LCB_HEADER: [&str; 10] = [
    "group",
    "estimand",
    "lcb",
    "point",
    "se",
    "n_eff",
    "degenerate",
    "seed",
    "n1",
    "n2",
];

/// Write LCB reports, one row per (group, estimand). Batch columns
/// (`n1`, `n2`, `dropped`) are filled for co-sufficient reports.
pub fn write_lcb_csv<W: Write>(writer: W, rows: &[(String, LcbReport)], seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = LCB_HEADER.to_vec();
    header.push("dropped");
    w.write_record(&header)?;
    for (group, rep) in rows {
        let (n1, n2, dropped) = match rep.batches {
            Some(b) => (b.n1.to_string(), b.n2.to_string(), b.dropped.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            group.clone(),
            rep.estimand.as_str().to_string(),
            fmt_float(rep.lcb),
            fmt_float(rep.point),
            fmt_float(rep.se),
            rep.n_eff.to_string(),
            rep.degenerate.to_string(),
            seed.to_string(),
            n1,
            n2,
            dropped,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(-2.5), "-2.5");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_float(123456.789), "123456.789");
        assert_eq!(fmt_float(1e-7), "1e-7");
        assert_eq!(fmt_float(1.5e20), "1.5e20");
        assert_eq!(fmt_float(0.000123), "0.000123");
        assert_eq!(fmt_float(9.999999999999999), "10");
        assert_eq!(fmt_float(100.0), "100");
    }
}
