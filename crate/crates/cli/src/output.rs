//! CSV emission with fixed 10-significant-digit numbers.
//!
//! Numbers between 1e-5 and 1e10 in magnitude are written in positional
//! notation, others in scientific notation, both with trailing zeros
//! removed. Parsing a written number and writing it again gives the same
//! text, so emitted files are stable under load and re-emit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const SIGNIFICANT: usize = 10;

pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    if !(-5..10).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        return format!("{sign}{m}e{exp}");
    }
    let mut out = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    trim_fraction(&mut out);
    format!("{sign}{out}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

/// A table of text cells with an optional block of `# key = value` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            ..Table::default()
        }
    }

    pub fn comment(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.comments.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| fmt_num(v)).collect());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        for (key, value) in &self.comments {
            writeln!(out, "# {key} = {value}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut comments = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].split_once('=') {
                comments.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { comments, header, rows })
    }

    /// Re-formats every numeric cell; other cells are kept.
    pub fn renormalized(&self) -> Self {
        let mut t = self.clone();
        for row in &mut t.rows {
            for cell in row.iter_mut() {
                if let Some(v) = parse_num(cell) {
                    *cell = fmt_num(v);
                }
            }
        }
        t
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| parse_num(&r[j])).collect()
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.3333333333");
        assert_eq!(fmt_num(-560.27), "-560.27");
        assert_eq!(fmt_num(123456.789012345), "123456.789");
        assert_eq!(fmt_num(9.99999999996), "10");
        assert_eq!(fmt_num(1.5e-7), "1.5e-7");
        assert_eq!(fmt_num(0.00012345678912), "0.0001234567891");
        assert_eq!(fmt_num(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn reformatting_is_stable(v in prop::num::f64::NORMAL) {
            let once = fmt_num(v);
            let back: f64 = once.parse().unwrap();
            prop_assert_eq!(fmt_num(back), once.clone());
            prop_assert!((back - v).abs() <= 5e-10 * v.abs());
        }
    }

    #[test]
    fn tables_round_trip_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(["name", "value"]);
        t.comment("note", "x = 1");
        t.push(vec!["a,b".into(), fmt_num(std::f64::consts::PI)]);
        t.push(vec!["c".into(), fmt_num(-1e-12)]);
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        t.write(&p1).unwrap();
        let back = Table::read(&p1).unwrap();
        assert_eq!(back, t);
        back.renormalized().write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
