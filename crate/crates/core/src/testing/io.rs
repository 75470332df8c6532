//! Query and assignment files.
//!
//! A query is a TOML descriptor pointing at two delimited tables:
//!
//! ```text
//! capacities.csv   client_id,category,count      (sparse; zero rows optional)
//! clients.csv      client_id,speed,bandwidth,transfer_bytes
//! ```
//!
//! The descriptor holds the budget and either an explicit `preference`
//! vector or a `representative` sample total, which is compiled against the
//! global categorical distribution of the capacity table.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cover::CoverError;
use super::query::{representative_preference, Assignment, ClientProfile, DistributionQuery};
use crate::metastore::ClientId;

#[derive(Debug, Error)]
pub enum QueryFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Descriptor { path: PathBuf, message: String },
    #[error(transparent)]
    Query(#[from] CoverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationTarget {
    pub tolerance: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDescriptor {
    pub capacities: PathBuf,
    pub clients: PathBuf,
    pub budget: usize,
    #[serde(default)]
    pub categories: Option<usize>,
    #[serde(default)]
    pub preference: Option<Vec<u64>>,
    #[serde(default)]
    pub representative: Option<u64>,
    #[serde(default)]
    pub deviation: Option<DeviationTarget>,
}

#[derive(Debug, Deserialize)]
struct CapacityRow {
    client_id: u64,
    category: usize,
    count: u64,
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    client_id: u64,
    speed: f64,
    bandwidth: f64,
    transfer_bytes: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> QueryFileError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    QueryFileError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>, QueryFileError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => QueryFileError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => QueryFileError::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("{other:?}"),
            },
        })
}

pub fn read_profiles(path: &Path) -> Result<Vec<ClientProfile>, QueryFileError> {
    let mut reader = open(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ProfileRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.push(ClientProfile {
            client_id: ClientId(row.client_id),
            speed: row.speed,
            bandwidth: row.bandwidth,
            transfer_bytes: row.transfer_bytes,
        });
    }
    Ok(out)
}

/// Reads sparse capacity rows keyed by client id.
pub fn read_capacities(path: &Path) -> Result<Vec<(ClientId, usize, u64)>, QueryFileError> {
    let mut reader = open(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<CapacityRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.push((ClientId(row.client_id), row.category, row.count));
    }
    Ok(out)
}

/// Loads a descriptor and the tables it references. Relative table paths
/// resolve against the descriptor's directory.
pub fn load_query(path: &Path) -> Result<(QueryDescriptor, DistributionQuery), QueryFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| QueryFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let desc: QueryDescriptor = toml::from_str(&text).map_err(|e| QueryFileError::Descriptor {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let query = build_query(&desc, base).map_err(|e| match e {
        QueryFileError::Descriptor { message, .. } => QueryFileError::Descriptor {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    Ok((desc, query))
}

pub fn build_query(desc: &QueryDescriptor, base: &Path) -> Result<DistributionQuery, QueryFileError> {
    let bad = |m: String| QueryFileError::Descriptor {
        path: PathBuf::new(),
        message: m,
    };
    let profiles = read_profiles(&base.join(&desc.clients))?;
    let rows = read_capacities(&base.join(&desc.capacities))?;
    let index: HashMap<ClientId, usize> = profiles.iter().enumerate().map(|(n, p)| (p.client_id, n)).collect();

    let max_cat = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let categories = desc
        .categories
        .or(desc.preference.as_ref().map(Vec::len))
        .unwrap_or(max_cat);
    if max_cat > categories {
        return Err(bad(format!("capacity table uses category {} but only {categories} are declared", max_cat - 1)));
    }

    let mut capacity: Vec<Vec<(usize, u64)>> = vec![Vec::new(); profiles.len()];
    for (id, cat, count) in rows {
        let &n = index
            .get(&id)
            .ok_or_else(|| bad(format!("capacity row for client {id} missing from the client table")))?;
        if count > 0 {
            capacity[n].push((cat, count));
        }
    }

    let preference = match (&desc.preference, desc.representative) {
        (Some(p), None) => {
            if p.len() != categories {
                return Err(bad(format!("preference has {} entries, expected {categories}", p.len())));
            }
            p.clone()
        }
        (None, Some(total)) => {
            let mut global = vec![0.0; categories];
            for row in &capacity {
                for &(i, c) in row {
                    global[i] += c as f64;
                }
            }
            representative_preference(&global, total)
        }
        _ => return Err(bad("exactly one of `preference` or `representative` is required".into())),
    };
    Ok(DistributionQuery::new(preference, desc.budget, profiles, capacity)?)
}

pub fn write_assignment<W: Write>(out: W, a: &Assignment) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "category", "samples"])?;
    for ca in &a.clients {
        for (i, &x) in ca.samples.iter().enumerate() {
            if x > 0 {
                w.write_record([ca.client_id.to_string(), i.to_string(), x.to_string()])?;
            }
        }
    }
    w.flush()
}

pub fn write_capacities<W: Write>(out: W, q: &DistributionQuery) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "category", "count"])?;
    for (p, row) in q.clients.iter().zip(&q.capacity) {
        for &(i, c) in row {
            w.write_record([p.client_id.to_string(), i.to_string(), c.to_string()])?;
        }
    }
    w.flush()
}

pub fn write_profiles<W: Write>(out: W, clients: &[ClientProfile]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "speed", "bandwidth", "transfer_bytes"])?;
    for p in clients {
        w.write_record([
            p.client_id.to_string(),
            p.speed.to_string(),
            p.bandwidth.to_string(),
            p.transfer_bytes.to_string(),
        ])?;
    }
    w.flush()
}
