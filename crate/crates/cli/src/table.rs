//! CSV emission: a schema tag line, a header, then rows.

use std::fmt::Write;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut text = String::new();
        writeln!(text, "#schema={schema}/v1").unwrap();
        writeln!(text, "{}", header.join(",")).unwrap();
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width differs from header");
        writeln!(self.text, "{}", cells.join(",")).unwrap();
    }

    /// A `#`-prefixed line, skipped by CSV and gnuplot readers.
    pub fn comment(&mut self, line: &str) {
        writeln!(self.text, "#{line}").unwrap();
    }

    pub fn finish(self) -> String {
        self.text
    }
}
