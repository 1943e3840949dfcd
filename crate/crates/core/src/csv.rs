//! Minimal CSV emission. Fields are numbers or plain labels, so no quoting is
//! needed beyond rejecting separators in labels.

use std::fmt::Write as _;

pub(crate) struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub(crate) fn new() -> Self {
        Self { buf: String::new() }
    }

    pub(crate) fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            let f = f.as_ref();
            if f.contains([',', '"', '\n']) {
                let _ = write!(self.buf, "\"{}\"", f.replace('"', "\"\""));
            } else {
                self.buf.push_str(f);
            }
        }
        self.buf.push('\n');
    }

    pub(crate) fn finish(self) -> String {
        self.buf
    }
}

pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}
