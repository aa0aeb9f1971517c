//! Observed-data ingestion.
//!
//! The on-disk format is a CSV with header `cluster,unit,mechanism,z,d,y`.
//! Mechanism labels are `a0`/`a1`; `z` and `d` are 0/1; `y` is a
//! nonnegative outcome in raw currency units.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::design::Mechanism;
use crate::error::{Error, Result};

/// One experimental unit's observed row.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub cluster: String,
    pub unit: String,
    pub mechanism: Mechanism,
    pub z: u8,
    pub d: u8,
    pub y: f64,
}

/// A cluster and the indices of its units in `Dataset::records`.
#[derive(Debug, Clone)]
pub struct ClusterInfo {
    pub id: String,
    pub mechanism: Mechanism,
    pub units: Vec<usize>,
}

impl ClusterInfo {
    pub fn size(&self) -> usize {
        self.units.len()
    }
}

/// Validated dataset with a derived cluster index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<UnitRecord>,
    pub clusters: Vec<ClusterInfo>,
    /// Cluster index of each record.
    pub cluster_of: Vec<usize>,
}

impl Dataset {
    pub fn from_records(records: Vec<UnitRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        let mut clusters: Vec<ClusterInfo> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        let mut seen_units: HashMap<(String, String), ()> = HashMap::new();
        let mut cluster_of = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.y < 0.0 || !r.y.is_finite() {
                return Err(Error::Dataset(format!(
                    "unit ({}, {}) has invalid outcome {}",
                    r.cluster, r.unit, r.y
                )));
            }
            if r.z > 1 || r.d > 1 {
                return Err(Error::Dataset(format!(
                    "unit ({}, {}) has non-binary z or d",
                    r.cluster, r.unit
                )));
            }
            if seen_units
                .insert((r.cluster.clone(), r.unit.clone()), ())
                .is_some()
            {
                return Err(Error::Dataset(format!(
                    "duplicate unit key ({}, {})",
                    r.cluster, r.unit
                )));
            }
            let ci = match by_id.get(&r.cluster) {
                Some(&ci) => {
                    if clusters[ci].mechanism != r.mechanism {
                        return Err(Error::Dataset(format!(
                            "cluster {} carries two mechanism labels",
                            r.cluster
                        )));
                    }
                    ci
                }
                None => {
                    let ci = clusters.len();
                    by_id.insert(r.cluster.clone(), ci);
                    clusters.push(ClusterInfo {
                        id: r.cluster.clone(),
                        mechanism: r.mechanism,
                        units: Vec::new(),
                    });
                    ci
                }
            };
            clusters[ci].units.push(i);
            cluster_of.push(ci);
        }
        Ok(Dataset {
            records,
            clusters,
            cluster_of,
        })
    }

    pub fn n_units(&self) -> usize {
        self.records.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Observed treated count per cluster.
    pub fn observed_treated_counts(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .map(|c| c.units.iter().filter(|&&i| self.records[i].z == 1).count())
            .collect()
    }
}

const HEADER: [&str; 6] = ["cluster", "unit", "mechanism", "z", "d", "y"];

/// Load and validate a dataset CSV.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = rdr.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != HEADER {
            return Err(Error::Data {
                line: 1,
                msg: format!("expected header {:?}, got {:?}", HEADER.join(","), got.join(",")),
            });
        }
    }
    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let row = row?;
        if row.len() != 6 {
            return Err(Error::Data {
                line,
                msg: format!("expected 6 fields, got {}", row.len()),
            });
        }
        let mechanism = Mechanism::parse(&row[2]).ok_or_else(|| Error::Data {
            line,
            msg: format!("unknown mechanism label {:?}", &row[2]),
        })?;
        let parse_bit = |field: &str, name: &str| -> Result<u8> {
            match field {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Data {
                    line,
                    msg: format!("{name} must be 0 or 1, got {other:?}"),
                }),
            }
        };
        let z = parse_bit(&row[3], "z")?;
        let d = parse_bit(&row[4], "d")?;
        let y: f64 = row[5].parse().map_err(|_| Error::Data {
            line,
            msg: format!("unparseable outcome {:?}", &row[5]),
        })?;
        if y < 0.0 {
            return Err(Error::Data {
                line,
                msg: format!("negative outcome {y}"),
            });
        }
        records.push(UnitRecord {
            cluster: row[0].to_string(),
            unit: row[1].to_string(),
            mechanism,
            z,
            d,
            y,
        });
    }
    Dataset::from_records(records)
}

/// Write a dataset with the canonical header. Outcomes round-trip exactly
/// (shortest representation that parses back to the same f64).
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(HEADER)?;
    for r in &dataset.records {
        wtr.write_record([
            r.cluster.as_str(),
            r.unit.as_str(),
            r.mechanism.label(),
            if r.z == 1 { "1" } else { "0" },
            if r.d == 1 { "1" } else { "0" },
            &format!("{}", r.y),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
