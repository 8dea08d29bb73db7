//! Minimal CSV emission: comma separated, header row, LF line endings and
//! 17 significant digits for every float so output is bit-reproducible.

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Quotes a field when it contains a separator, quote or line break.
pub fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub struct CsvWriter {
    buf: String,
    width: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        push_line(&mut buf, header.iter().map(|h| escape(h)));
        Self {
            buf,
            width: header.len(),
        }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        assert_eq!(fields.len(), self.width, "row width does not match header");
        push_line(&mut self.buf, fields.iter().map(|f| escape(f.as_ref())));
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

fn push_line(buf: &mut String, fields: impl Iterator<Item = String>) {
    for (i, f) in fields.enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&f);
    }
    buf.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn writer_quotes_and_terminates() {
        let mut w = CsvWriter::new(&["a", "b"]);
        w.row(&["x,y", "plain"]);
        assert_eq!(w.finish(), "a,b\n\"x,y\",plain\n");
    }
}
