use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::Settings;

/// One assertion of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Collects checks and extra measurements for `summary.json`.
#[derive(Debug, Default)]
pub struct Summary {
    pub checks: Vec<Check>,
    pub measurements: serde_json::Map<String, Value>,
}

impl Summary {
    /// `|value − reference| ≤ tolerance·|reference|`.
    pub fn relative(&mut self, name: impl Into<String>, value: f64, reference: f64, tolerance: f64) {
        let pass = (value - reference).abs() <= tolerance * reference.abs();
        self.push(name, value, reference, tolerance, pass);
    }

    /// `value ≤ reference`; `tolerance` records the allowed excess (zero).
    pub fn at_most(&mut self, name: impl Into<String>, value: f64, reference: f64) {
        self.push(name, value, reference, 0.0, value <= reference);
    }

    /// `value ≥ reference`.
    pub fn at_least(&mut self, name: impl Into<String>, value: f64, reference: f64) {
        self.push(name, value, reference, 0.0, value >= reference);
    }

    /// A boolean property, stored as value 1/0 against reference 1.
    pub fn holds(&mut self, name: impl Into<String>, pass: bool) {
        self.push(name, pass as u8 as f64, 1.0, 0.0, pass);
    }

    fn push(&mut self, name: impl Into<String>, value: f64, reference: f64, tolerance: f64, pass: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            reference,
            tolerance,
            pass,
        });
    }

    pub fn measure(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.measurements.insert(key.to_string(), v);
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn write(&self, settings: &Settings, dir: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            command: &'a str,
            seed: u64,
            config: &'a Settings,
            passed: bool,
            checks: &'a [Check],
            measurements: &'a serde_json::Map<String, Value>,
        }
        let out = Out {
            command: &settings.command,
            seed: settings.seed,
            config: settings,
            passed: self.failures().is_empty(),
            checks: &self.checks,
            measurements: &self.measurements,
        };
        let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, &out)?;
        writeln!(w)?;
        w.flush()
    }
}
