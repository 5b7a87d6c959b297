//! Machine-readable reports: one section per module, one record per invariant.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Comparison applied between a measured value and its bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Relation::Lt => value < bound,
            Relation::Le => value <= bound,
            Relation::Gt => value > bound,
            Relation::Ge => value >= bound,
        }
    }
}

/// One invariant: `value relation bound`, evaluated once.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub relation: Relation,
    pub pass: bool,
    /// Acceptance criteria this check contributes to.
    pub criteria: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Checks and recorded constants of one module.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Section {
    pub module: String,
    pub checks: Vec<Check>,
    pub constants: BTreeMap<String, f64>,
}

impl Section {
    pub fn new(module: &str) -> Self {
        Section { module: module.to_string(), ..Default::default() }
    }

    /// Records a check; a NaN value never passes.
    pub fn check(&mut self, name: &str, value: f64, relation: Relation, bound: f64, criteria: &[u8]) -> bool {
        let pass = relation.holds(value, bound);
        self.checks.push(Check {
            name: name.to_string(),
            value,
            bound,
            relation,
            pass,
            criteria: criteria.to_vec(),
            note: None,
        });
        pass
    }

    /// Records a check whose computation failed outright.
    pub fn failed(&mut self, name: &str, relation: Relation, bound: f64, criteria: &[u8], error: impl ToString) {
        self.checks.push(Check {
            name: name.to_string(),
            value: f64::NAN,
            bound,
            relation,
            pass: false,
            criteria: criteria.to_vec(),
            note: Some(error.to_string()),
        });
    }

    /// Records a check from a fallible measurement.
    pub fn check_result<E: ToString>(
        &mut self,
        name: &str,
        value: Result<f64, E>,
        relation: Relation,
        bound: f64,
        criteria: &[u8],
    ) -> bool {
        match value {
            Ok(v) => self.check(name, v, relation, bound, criteria),
            Err(e) => {
                self.failed(name, relation, bound, criteria, e);
                false
            }
        }
    }

    pub fn constant(&mut self, name: &str, value: f64) {
        self.constants.insert(name.to_string(), value);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Full report written to `report.json`. The timestamp is the last field and
/// the only one outside the determinism contract.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    pub sections: Vec<Section>,
    pub all_pass: bool,
    pub failing: Vec<String>,
    pub timestamp: u64,
}

impl Report {
    pub fn new(command: &str, seed: u64, parameters: BTreeMap<String, String>, sections: Vec<Section>) -> Self {
        let failing: Vec<String> = sections
            .iter()
            .flat_map(|s| s.checks.iter().filter(|c| !c.pass).map(move |c| format!("{}.{}", s.module, c.name)))
            .collect();
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Report {
            command: command.to_string(),
            seed,
            parameters,
            grid: None,
            all_pass: failing.is_empty(),
            failing,
            sections,
            timestamp,
        }
    }

    pub fn with_grid(mut self, grid: String) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("report.json"))?;
        f.write_all(self.to_json().as_bytes())?;
        f.write_all(b"\n")
    }
}

/// Formats a float with 17 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV writer with `#`-prefixed metadata lines before the header.
pub struct CsvOut {
    writer: csv::Writer<std::fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, metadata: &[(&str, String)], header: &[&str]) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = std::fs::File::create(path)?;
        for (k, v) in metadata {
            writeln!(file, "# {k} = {v}")?;
        }
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(CsvOut { writer })
    }

    pub fn row(&mut self, values: &[f64]) -> std::io::Result<()> {
        self.writer.write_record(values.iter().map(|v| sci(*v)))?;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations_and_nan() {
        assert!(Relation::Lt.holds(1.0, 2.0) && !Relation::Lt.holds(2.0, 2.0));
        assert!(Relation::Le.holds(2.0, 2.0) && Relation::Ge.holds(2.0, 2.0));
        assert!(Relation::Gt.holds(3.0, 2.0));
        for r in [Relation::Lt, Relation::Le, Relation::Gt, Relation::Ge] {
            assert!(!r.holds(f64::NAN, 1.0));
        }
    }

    #[test]
    fn report_collects_failures() {
        let mut s = Section::new("m");
        s.check("ok", 1.0, Relation::Lt, 2.0, &[1]);
        s.failed("broken", Relation::Lt, 2.0, &[2], "boom");
        let r = Report::new("x", 1, BTreeMap::new(), vec![s]);
        assert!(!r.all_pass);
        assert_eq!(r.failing, vec!["m.broken".to_string()]);
        let json = r.to_json();
        assert!(json.trim_end().ends_with('}'));
        let last_key = json.rfind("\"timestamp\"").unwrap();
        assert!(json[last_key..].lines().count() <= 2);
        assert!(json.contains("\"relation\": \"<\""));
    }

    #[test]
    fn sci_round_trips() {
        for v in [std::f64::consts::PI, 1e-300, -34.766840318785725, 0.1 + 0.2] {
            assert_eq!(sci(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
