//! Scenario runner: configuration parsing, single runs and parameter sweeps.
//! Reports and tables depend only on the configuration, seed and declared
//! thread count; wall-clock timing goes to a separate file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::{self, Artifact, Provenance};
use crate::scenarios::{self, bell, classical, dirac, kg, manybody, spectra, tenets, Check, Outcome};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT: &str = "report.json";
pub const TIMING: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Tenets(tenets::TenetsParams),
    Kg(kg::KgParams),
    Dirac(dirac::DiracParams),
    Classical(classical::ClassicalParams),
    Manybody(manybody::ManyBodyParams),
    Bell(bell::BellParams),
    Spectra(spectra::SpectraParams),
}

impl ScenarioSpec {
    pub fn key(&self) -> &'static str {
        match self {
            Self::Tenets(_) => "tenets",
            Self::Kg(_) => "kg",
            Self::Dirac(_) => "dirac",
            Self::Classical(_) => "classical",
            Self::Manybody(_) => "manybody",
            Self::Bell(_) => "bell",
            Self::Spectra(_) => "spectra",
        }
    }

    pub fn run(&self, seed: u64) -> Result<Outcome> {
        match self {
            Self::Tenets(p) => tenets::run(p, seed),
            Self::Kg(p) => kg::run(p, seed),
            Self::Dirac(p) => dirac::run(p, seed),
            Self::Classical(p) => classical::run(p, seed),
            Self::Manybody(p) => manybody::run(p, seed),
            Self::Bell(p) => bell::run(p, seed),
            Self::Spectra(p) => spectra::run(p, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[serde(default = "one")]
    pub threads: usize,
    pub scenario: ScenarioSpec,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Configuration with the output location removed, as echoed and hashed.
    pub fn canonical(&self) -> Result<String> {
        let c = RunConfig { output_dir: None, ..self.clone() };
        Ok(serde_json::to_string(&c)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(io::sha256_hex(self.canonical()?.as_bytes()))
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn parse_value(v: Value, text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let (line, column) = locate(text, &path);
        Error::ConfigParse { path, line, column, message }
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version)));
    }
    if cfg.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn syntax(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::ConfigParse { path: ".".into(), line: e.line(), column: e.column(), message: e.to_string() })
}

/// Best-effort position of the last key in a dotted path, for diagnostics.
fn locate(text: &str, path: &str) -> (usize, usize) {
    let key = path.rsplit('.').find(|s| !s.starts_with('[') && !s.is_empty() && *s != "?").map(|s| s.split('[').next().unwrap_or(s));
    if let Some(k) = key {
        let needle = format!("\"{k}\"");
        for (i, l) in text.lines().enumerate() {
            if let Some(c) = l.find(&needle) {
                return (i + 1, c + 1);
            }
        }
    }
    (0, 0)
}

/// Parses and validates a configuration, naming the offending field and its
/// position on failure.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let v = syntax(text)?;
    // unknown keys are reported by path, then located in the source
    let cfg = parse_value(v, text).map_err(|e| match e {
        Error::ConfigParse { path, line, column, message } if message.starts_with("unknown field") => {
            let key = message.split('`').nth(1).unwrap_or("").to_string();
            let (l, c) = locate(text, &key);
            let full = if path.ends_with(key.as_str()) || path.is_empty() { path } else { format!("{path}.{key}") };
            Error::ConfigParse { path: full, line: if l > 0 { l } else { line }, column: if l > 0 { c } else { column }, message }
        }
        other => other,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub scenario: String,
    pub config: Value,
    pub passed: bool,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    /// Wall-clock data lives in this file so the report stays reproducible.
    pub timing: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub config_hash: String,
    pub tool: String,
    pub version: String,
    pub scenario_seconds: f64,
    pub total_seconds: f64,
}

pub fn apply(mut cfg: RunConfig, o: &Overrides) -> RunConfig {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    if let Some(d) = &o.out_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg
}

fn outcome_with_threads(cfg: &RunConfig) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| cfg.scenario.run(cfg.seed))
}

/// Runs one scenario and writes report, tables, bundles and timing into
/// `out`. Scenario errors are recorded in the report rather than returned.
pub fn run_scenario(cfg: &RunConfig, out: &Path) -> Result<(RunReport, Timing)> {
    let start = Instant::now();
    let hash = cfg.hash()?;
    let prov = Provenance::new(hash.clone(), cfg.seed);
    let tables_dir = out.join("tables");
    let fields_dir = out.join("fields");
    io::ensure_dir(&tables_dir)?;
    io::ensure_dir(&fields_dir)?;

    let t = Instant::now();
    let result = outcome_with_threads(cfg);
    let scenario_seconds = t.elapsed().as_secs_f64();

    let mut artifacts = Vec::new();
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e) => (Outcome::default(), Some(e.to_string())),
    };
    let mut seen = std::collections::BTreeSet::new();
    for c in &outcome.checks {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::Precondition(format!("check {} reported twice", c.name)));
        }
    }
    for table in &outcome.tables {
        let mut a = io::write_table(&tables_dir, table, &prov)?;
        a.path = format!("tables/{}", a.path);
        artifacts.push(a);
    }
    for snap in &outcome.snapshots {
        for mut a in io::write_bundle(&fields_dir, snap, &prov)? {
            a.path = format!("fields/{}", a.path);
            artifacts.push(a);
        }
    }
    if !outcome.checks.is_empty() {
        let columns: Vec<String> = ["check", "relation", "measured", "limit", "passed"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = outcome
            .checks
            .iter()
            .map(|c| vec![c.name.clone(), format!("{:?}", c.relation).to_lowercase(), io::number(c.measured), io::number(c.limit), c.passed.to_string()])
            .collect();
        let mut a = io::write_rows(&tables_dir, "checks.csv", &columns, &rows, &prov)?;
        a.path = format!("tables/{}", a.path);
        artifacts.push(a);
    }

    let report = RunReport {
        tool: io::TOOL.into(),
        version: io::VERSION.into(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        threads: cfg.threads,
        scenario: cfg.scenario.key().into(),
        config: serde_json::from_str(&cfg.canonical()?)?,
        passed: error.is_none() && outcome.passed(),
        error,
        checks: outcome.checks,
        values: outcome.values,
        timing: TIMING.into(),
        artifacts,
    };
    io::write_json(out, REPORT, "report", &report)?;
    let timing = Timing { config_hash: hash, tool: io::TOOL.into(), version: io::VERSION.into(), scenario_seconds, total_seconds: start.elapsed().as_secs_f64() };
    io::write_json(out, TIMING, "timing", &timing)?;
    Ok((report, timing))
}

/// Output directory: command line, then config, then `out`.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Splits a comma-separated list at top level, so that JSON arrays and
/// objects can appear as values.
pub fn split_values(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let mut quoted = false;
    for ch in list.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Mutable reference to the value at a dotted path; numeric segments index
/// arrays.
pub fn value_at<'a>(root: &'a mut Value, path: &str) -> Result<&'a mut Value> {
    let mut v = root;
    for seg in path.split('.') {
        v = match v {
            Value::Object(m) => m.get_mut(seg),
            Value::Array(a) => seg.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("parameter path `{path}` has no segment `{seg}` in the config")))?;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub value: Value,
    pub directory: String,
    pub passed: bool,
    pub error: Option<String>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub tool: String,
    pub version: String,
    pub sweep_hash: String,
    pub parameter: String,
    pub runs: Vec<SweepEntry>,
    pub passed: bool,
    pub artifacts: Vec<Artifact>,
}

/// One run per value of `param`, each in its own directory, plus an
/// aggregate table of every check and headline value. Failed runs are
/// recorded and the sweep goes on.
pub fn sweep(text: &str, param: &str, values: &[String], o: &Overrides) -> Result<SweepSummary> {
    let base_cfg = apply(parse_config(text)?, o);
    let root = output_dir(&base_cfg);
    // defaults are spelled out so any parameter can be swept
    let mut base = serde_json::to_value(&base_cfg)?;
    value_at(&mut base, param)?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let parsed: Vec<Value> = values.iter().map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone()))).collect();
    let sweep_hash = io::sha256_hex(format!("{}|{param}|{}", base_cfg.canonical()?, serde_json::to_string(&parsed)?).as_bytes());
    let prov = Provenance::new(sweep_hash.clone(), base_cfg.seed);
    io::ensure_dir(&root)?;

    let mut runs = Vec::new();
    let mut reports: Vec<Option<RunReport>> = Vec::new();
    for (i, v) in parsed.iter().enumerate() {
        let dir = format!("run_{i:03}");
        let mut doc = base.clone();
        *value_at(&mut doc, param)? = v.clone();
        let result = serde_json::to_string_pretty(&doc).map_err(Error::from).and_then(|t| parse_config(&t)).and_then(|cfg| {
            let cfg = apply(cfg, o);
            run_scenario(&cfg, &root.join(&dir))
        });
        match result {
            Ok((r, _)) => {
                runs.push(SweepEntry { index: i, value: v.clone(), directory: dir, passed: r.passed, error: r.error.clone(), config_hash: Some(r.config_hash.clone()) });
                reports.push(Some(r));
            }
            Err(e) => {
                runs.push(SweepEntry { index: i, value: v.clone(), directory: dir, passed: false, error: Some(e.to_string()), config_hash: None });
                reports.push(None);
            }
        }
    }

    let mut checks: Vec<String> = Vec::new();
    let mut vals: Vec<String> = Vec::new();
    for r in reports.iter().flatten() {
        for c in &r.checks {
            if !checks.contains(&c.name) {
                checks.push(c.name.clone());
            }
        }
        for k in r.values.keys() {
            if !vals.contains(k) {
                vals.push(k.clone());
            }
        }
    }
    let mut columns: Vec<String> = vec!["index".into(), "value".into(), "status".into()];
    columns.extend(checks.iter().cloned());
    columns.extend(vals.iter().cloned());
    let rows: Vec<Vec<String>> = runs
        .iter()
        .zip(&reports)
        .map(|(e, r)| {
            let status = if e.error.is_some() { "error" } else if e.passed { "pass" } else { "fail" };
            let mut row = vec![e.index.to_string(), value_cell(&e.value), status.to_string()];
            for name in &checks {
                row.push(r.as_ref().and_then(|r| r.checks.iter().find(|c| &c.name == name)).map(|c| io::number(c.measured)).unwrap_or_default());
            }
            for k in &vals {
                row.push(r.as_ref().and_then(|r| r.values.get(k)).map(|v| io::number(*v)).unwrap_or_default());
            }
            row
        })
        .collect();
    let table = io::write_rows(&root, "sweep.csv", &columns, &rows, &prov)?;
    let summary = SweepSummary {
        tool: io::TOOL.into(),
        version: io::VERSION.into(),
        sweep_hash,
        parameter: param.into(),
        passed: runs.iter().all(|r| r.passed),
        runs,
        artifacts: vec![table],
    };
    io::write_json(&root, "sweep.json", "sweep_report", &summary)?;
    Ok(summary)
}

fn value_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn summary_lines(checks: &[Check]) -> Vec<String> {
    checks
        .iter()
        .map(|c| {
            let rel = match c.relation {
                scenarios::Relation::Below => "<",
                scenarios::Relation::AtLeast => ">=",
                scenarios::Relation::Holds => "holds",
            };
            format!("{} {:<48} {:>14.6e} {rel} {:e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.limit)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
  "schema_version": 1,
  "seed": 3,
  "scenario": {
    "spectra": {
      "points": 300
    }
  }
}"#;

    #[test]
    fn unknown_key_is_named_with_position() {
        let bad = SMALL.replace("\"points\"", "\"pionts\"");
        match parse_config(&bad) {
            Err(Error::ConfigParse { path, line, message, .. }) => {
                assert!(message.contains("pionts"), "{message}");
                assert!(path.ends_with("pionts"), "{path}");
                assert_eq!(line, 6);
            }
            other => panic!("{other:?}"),
        }
        let top = SMALL.replace("\"seed\"", "\"sed\"");
        assert!(matches!(parse_config(&top), Err(Error::ConfigParse { line: 3, .. })));
        let key = SMALL.replace("\"spectra\"", "\"spectrum\"");
        assert!(parse_config(&key).is_err());
        assert!(matches!(parse_config("{ \"schema_version\": 1,"), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = parse_config(SMALL).unwrap();
        let b = apply(a.clone(), &Overrides { out_dir: Some("elsewhere".into()), ..Default::default() });
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = apply(a.clone(), &Overrides { seed: Some(4), ..Default::default() });
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn values_split_at_top_level() {
        assert_eq!(split_values("1, 2.5,[3,4],{\"a\":[1,2]}"), vec!["1", "2.5", "[3,4]", "{\"a\":[1,2]}"]);
        let mut v: Value = serde_json::from_str(SMALL).unwrap();
        *value_at(&mut v, "scenario.spectra.points").unwrap() = Value::from(200);
        assert_eq!(v["scenario"]["spectra"]["points"], 200);
        assert!(value_at(&mut v, "scenario.spectra.nope").is_err());
    }
}
