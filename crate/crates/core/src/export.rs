//! CSV output shared by the artifact writers.
//!
//! Tables follow RFC 4180: a header row, comma separators, CRLF line ends.
//! Reals are written with 17 significant digits so they round-trip exactly.

use std::io::{self, Write};

/// Formats `v` with 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_real_table<W, R, I>(out: W, header: &[&str], rows: I) -> io::Result<()>
where
    W: Write,
    R: AsRef<[f64]>,
    I: IntoIterator<Item = R>,
{
    let mut out = io::BufWriter::new(out);
    out.write_all(header.join(",").as_bytes())?;
    out.write_all(b"\r\n")?;
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|v| real(*v)).collect();
        out.write_all(cells.join(",").as_bytes())?;
        out.write_all(b"\r\n")?;
    }
    out.flush()
}
