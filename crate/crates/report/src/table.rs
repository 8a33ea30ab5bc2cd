//! CSV output. Every float is written with 17 significant digits, so a
//! reader parsing the text recovers the exact `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// A CSV file with a fixed header, written row by row.
pub struct CsvFile {
    writer: csv::Writer<BufWriter<File>>,
    columns: usize,
}

impl CsvFile {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> std::io::Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(File::create(path)?));
        writer.write_record(header)?;
        Ok(CsvFile {
            writer,
            columns: header.len(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let record: Vec<S> = fields.into_iter().collect();
        assert_eq!(record.len(), self.columns, "row width differs from header");
        self.writer.write_record(record)?;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| e.into_error())?.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
    }
}
