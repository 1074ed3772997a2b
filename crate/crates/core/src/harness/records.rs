use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::Result;

/// One observation. Every key is always present; absent quantities are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub sample: Option<u64>,
    /// Mode, block or parameter index, when the observable has one.
    pub mode: Option<usize>,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub observable: String,
    /// `null` when non-finite; the `nonfinite` flag is then set.
    pub value: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub flags: Vec<String>,
}

/// Shared fields of the records produced by one run.
#[derive(Debug, Clone)]
pub struct RecordContext {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
}

impl RecordContext {
    pub fn record(&self, observable: &str, value: f64) -> RunRecord {
        let (value, flags) = if value.is_finite() {
            (Some(value), Vec::new())
        } else {
            (None, vec!["nonfinite".to_string()])
        };
        RunRecord {
            experiment: self.experiment.clone(),
            sample: None,
            mode: None,
            t: None,
            s: None,
            observable: observable.to_string(),
            value,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            flags,
        }
    }
}

impl RunRecord {
    pub fn sample(mut self, i: u64) -> Self {
        self.sample = Some(i);
        self
    }

    pub fn mode(mut self, n: usize) -> Self {
        self.mode = Some(n);
        self
    }

    /// Sets `t` and, inside the lens window, the matching NLS time `s`.
    pub fn at_t(mut self, t: f64) -> Self {
        self.t = Some(t);
        if t.abs() < std::f64::consts::FRAC_PI_4 {
            self.s = Some(0.5 * (2.0 * t).tan());
        }
        self
    }

    pub fn at_ts(mut self, t: f64, s: f64) -> Self {
        self.t = Some(t);
        self.s = Some(s);
        self
    }

    pub fn flag(mut self, f: &str) -> Self {
        if !self.flags.iter().any(|g| g == f) {
            self.flags.push(f.to_string());
        }
        self
    }

    pub fn flags(mut self, fs: &[String]) -> Self {
        for f in fs {
            self = self.flag(f);
        }
        self
    }
}

/// JSON formatter writing every float with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignificantDigits;

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON of `value` with [`SignificantDigits`] floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SignificantDigits);
    value.serialize(&mut ser).map_err(io::Error::from)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Pretty JSON with default float formatting, for summaries.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(io::Error::from)?)
}

/// Single serialized writer for a JSON Lines stream.
pub struct RecordWriter<W: Write> {
    out: W,
    written: usize,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, written: 0 }
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<()> {
        let line = to_json_line(record)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    sample: Option<u64>,
    mode: Option<usize>,
    t: Option<f64>,
    s: Option<f64>,
    observable: &'a str,
    value: Option<String>,
}

/// Time-indexed records as CSV (`sample,mode,t,s,observable,value`).
pub fn write_timeseries_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records.iter().filter(|r| r.t.is_some()) {
        w.serialize(CsvRow {
            sample: r.sample,
            mode: r.mode,
            t: r.t,
            s: r.s,
            observable: &r.observable,
            value: r.value.map(|v| format!("{v:.16e}")),
        })
        .map_err(|e| io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> RecordContext {
        RecordContext { experiment: "evolve".into(), seed: 7, config_hash: "abc".into() }
    }

    #[test]
    fn fixed_keys_and_digits() {
        let r = ctx().record("mass", 0.1).sample(3).at_t(0.25);
        let line = to_json_line(&r).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 10);
        let order = ["experiment", "sample", "mode", "\"t\"", "\"s\"", "observable", "value", "seed", "config_hash", "flags"];
        let pos: Vec<usize> = order.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(line.contains("\"value\":1.0000000000000001e-1"));
        assert_eq!(v["value"].as_f64().unwrap(), 0.1);
        assert!(v["mode"].is_null());
    }

    #[test]
    fn nonfinite_is_tagged() {
        let r = ctx().record("energy", f64::NAN);
        assert_eq!(r.value, None);
        assert_eq!(r.flags, vec!["nonfinite"]);
        let line = to_json_line(&r).unwrap();
        assert!(line.contains("\"value\":null"));
    }

    #[test]
    fn floats_round_trip() {
        for x in [1.0 / 3.0, -2.5e-300, 6.02214076e23, 5e-324, f64::MAX] {
            let r = ctx().record("x", x);
            let v: serde_json::Value = serde_json::from_str(&to_json_line(&r).unwrap()).unwrap();
            assert_eq!(v["value"].as_f64().unwrap(), x);
        }
    }

    #[test]
    fn csv_only_has_timed_rows() {
        let recs = vec![ctx().record("a", 1.0), ctx().record("b", 2.0).at_t(0.1)];
        let mut buf = Vec::new();
        write_timeseries_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains(",b,"));
    }
}
