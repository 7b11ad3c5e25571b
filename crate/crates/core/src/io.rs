//! On-disk formats: field bundles (JSON header plus little-endian f64
//! payload), CSV tables and digests. Every file carries the tool version and
//! the hash of the configuration that produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::SpacetimeGrid;
use crate::scenarios::{Snapshot, Table};
use crate::{Error, Result};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const BUNDLE_FORMAT: &str = "ensemble-bundle/1";

/// Stamp written into every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self { tool: TOOL.into(), version: VERSION.into(), config_hash: config_hash.into(), seed }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

fn put(dir: &Path, name: &str, kind: &str, bytes: &[u8]) -> Result<Artifact> {
    fs::write(dir.join(name), bytes)?;
    Ok(Artifact { path: name.into(), kind: kind.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, kind: &str, value: &T) -> Result<Artifact> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    put(dir, name, kind, &s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub name: String,
    /// Offset into the payload, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub format: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub name: String,
    pub grid: SpacetimeGrid,
    /// Axis names and lengths, slowest first.
    pub axes: Vec<(String, usize)>,
    pub dtype: String,
    pub byte_order: String,
    pub payload: String,
    pub components: Vec<ComponentEntry>,
}

/// Writes `<name>.json` and `<name>.bin`; components are stored one after
/// another, each in row-major order of `axes`.
pub fn write_bundle(dir: &Path, snap: &Snapshot, prov: &Provenance) -> Result<Vec<Artifact>> {
    let n = snap.points();
    let mut payload = Vec::with_capacity(8 * n * snap.components.len());
    let mut components = Vec::new();
    for (k, (name, data)) in snap.components.iter().enumerate() {
        if data.len() != n {
            return Err(Error::Shape(format!("component {name} of {} has {} values, axes hold {n}", snap.name, data.len())));
        }
        components.push(ComponentEntry { name: name.clone(), offset: k * n, len: n });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = format!("{}.bin", snap.name);
    let header = BundleHeader {
        format: BUNDLE_FORMAT.into(),
        provenance: prov.clone(),
        name: snap.name.clone(),
        grid: snap.grid.clone(),
        axes: snap.axes.clone(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        payload: bin.clone(),
        components,
    };
    let h = write_json(dir, &format!("{}.json", snap.name), "bundle_header", &header)?;
    let b = put(dir, &bin, "bundle_payload", &payload)?;
    Ok(vec![h, b])
}

/// Reads a bundle back from its header path.
pub fn read_bundle(header_path: &Path) -> Result<(BundleHeader, Vec<Vec<f64>>)> {
    let header: BundleHeader = serde_json::from_slice(&fs::read(header_path)?)?;
    if header.format != BUNDLE_FORMAT || header.dtype != "f64" || header.byte_order != "little" {
        return Err(Error::Config(format!("unsupported bundle {} {} {}", header.format, header.dtype, header.byte_order)));
    }
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let raw = fs::read(dir.join(&header.payload))?;
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut out = Vec::new();
    for c in &header.components {
        let part = values.get(c.offset..c.offset + c.len).ok_or_else(|| Error::Shape(format!("payload too short for {}", c.name)))?;
        out.push(part.to_vec());
    }
    Ok((header, out))
}

fn comment(prov: &Provenance) -> String {
    format!("# tool={} version={} config_hash={} seed={}\n", prov.tool, prov.version, prov.config_hash, prov.seed)
}

/// Shortest decimal that round-trips.
pub fn number(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

/// CSV with one provenance comment line ahead of the header row.
pub fn table_csv(table: &Table, prov: &Provenance) -> Result<Vec<u8>> {
    let mut buf = comment(prov).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.columns).map_err(csv_error)?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| number(*v))).map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn write_table(dir: &Path, table: &Table, prov: &Provenance) -> Result<Artifact> {
    put(dir, &format!("{}.csv", table.name), "table", &table_csv(table, prov)?)
}

/// CSV of string cells, for tables that mix labels and numbers.
pub fn write_rows(dir: &Path, name: &str, columns: &[String], rows: &[Vec<String>], prov: &Provenance) -> Result<Artifact> {
    let mut buf = comment(prov).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(csv_error)?;
        for r in rows {
            w.write_record(r).map_err(csv_error)?;
        }
        w.flush()?;
    }
    put(dir, name, "table", &buf)
}

/// Parses a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<(String, Table)> {
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| Error::Config("empty table file".into()))?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let columns: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    let mut table = Table { name, columns, rows: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let row = rec.iter().map(|c| c.parse::<f64>().map_err(|e| Error::Config(format!("cell {c}: {e}")))).collect::<Result<_>>()?;
        table.rows.push(row);
    }
    Ok((first.to_string(), table))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

