//! File formats: CSV inputs, JSON priors and JSON-lines stage outputs.
//!
//! Readers report the offending line number on malformed input.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ActivityChain, ActivityEpisode};
use crate::cohort::{Ping, PoiEntry, Staypoint};
use crate::eval::ShareComparison;
use crate::geo::{DistanceMatrix, GeoPoint, WardId, Wards};
use crate::routing::WardItinerary;
use crate::scope::TripScope;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

impl IoError {
    /// Whether the error is about content rather than the file system.
    pub fn is_validation(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, line: u64, msg: impl ToString) -> IoError {
    IoError::Format { path: path.to_path_buf(), line, msg: msg.to_string() }
}

fn invalid(path: &Path, msg: impl ToString) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), msg: msg.to_string() }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(io_err(path))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<T>() {
        match rec {
            Ok(v) => out.push(v),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(invalid(path, e));
                }
                return Err(format_err(path, line, e));
            }
        }
    }
    // positions of deserialized records: header is line 1
    Ok(out.into_iter().enumerate().map(|(i, v)| (i as u64 + 2, v)).collect())
}

#[derive(Deserialize)]
struct CentroidRow {
    code: String,
    lat: f64,
    lon: f64,
}

/// Centroid CSV `code,lat,lon`. The row order defines ward indices.
pub fn read_centroids(path: &Path) -> Result<(Wards, Vec<(WardId, GeoPoint<f64>)>), IoError> {
    let rows: Vec<(u64, CentroidRow)> = read_csv(path)?;
    let wards = Wards::new(rows.iter().map(|(_, r)| r.code.clone())).map_err(|e| invalid(path, e))?;
    let mut cents = Vec::with_capacity(rows.len());
    for (i, (line, r)) in rows.iter().enumerate() {
        let p = GeoPoint::new(r.lat, r.lon).map_err(|e| format_err(path, *line, e))?;
        cents.push((WardId(i), p));
    }
    Ok((wards, cents))
}

/// Distance-matrix CSV: header `ward,c1,...,cn`, then `code,v1,...,vn` in km.
/// Rows must follow the header's ward order.
pub fn read_distance_matrix(path: &Path) -> Result<(Wards, DistanceMatrix<f64>), IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| format_err(path, 1, e))?.clone();
    if header.get(0) != Some("ward") {
        return Err(format_err(path, 1, "first header column must be `ward`"));
    }
    let codes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let wards = Wards::new(codes.clone()).map_err(|e| format_err(path, 1, e))?;
    let mut rows = Vec::with_capacity(codes.len());
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| format_err(path, line, e))?;
        if rec.get(0) != codes.get(i).map(String::as_str) {
            return Err(format_err(path, line, format!("expected row for ward {:?}", codes.get(i))));
        }
        let vals: Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| format_err(path, line, e))?;
        if vals.len() != codes.len() {
            return Err(format_err(path, line, format!("expected {} values, got {}", codes.len(), vals.len())));
        }
        rows.push(vals);
    }
    let d = DistanceMatrix::from_rows(&wards, rows).map_err(|e| invalid(path, e))?;
    Ok((wards, d))
}

#[derive(Deserialize)]
struct StaypointRow {
    agent_id: String,
    lat: f64,
    lon: f64,
    start_epoch_s: i64,
    end_epoch_s: i64,
}

/// Staypoint CSV `agent_id,lat,lon,start_epoch_s,end_epoch_s`.
pub fn read_staypoints(path: &Path) -> Result<Vec<Staypoint>, IoError> {
    read_csv::<StaypointRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            let p = GeoPoint::new(r.lat, r.lon).map_err(|e| format_err(path, line, e))?;
            Staypoint::new(r.agent_id, p, r.start_epoch_s, r.end_epoch_s).map_err(|e| format_err(path, line, e))
        })
        .collect()
}

#[derive(Deserialize)]
struct PingRow {
    agent_id: String,
    lat: f64,
    lon: f64,
    epoch_s: i64,
}

/// Raw ping CSV `agent_id,lat,lon,epoch_s`.
pub fn read_pings(path: &Path) -> Result<Vec<Ping>, IoError> {
    read_csv::<PingRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            let loc = GeoPoint::new(r.lat, r.lon).map_err(|e| format_err(path, line, e))?;
            Ok(Ping { agent: r.agent_id, loc, t: r.epoch_s })
        })
        .collect()
}

#[derive(Deserialize)]
struct PoiRow {
    id: String,
    name: String,
    category: String,
    lat: f64,
    lon: f64,
    radius_m: f64,
    min_dwell_s: i64,
}

/// POI catalog CSV `id,name,category,lat,lon,radius_m,min_dwell_s`.
pub fn read_poi_catalog(path: &Path) -> Result<Vec<PoiEntry>, IoError> {
    read_csv::<PoiRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            let loc = GeoPoint::new(r.lat, r.lon).map_err(|e| format_err(path, line, e))?;
            let poi = PoiEntry { id: r.id, name: r.name, category: r.category, loc, radius_m: r.radius_m, min_dwell_s: r.min_dwell_s };
            poi.validate().map_err(|e| format_err(path, line, e))?;
            Ok(poi)
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let reader = BufReader::new(open(path)?);
    serde_json::from_reader(reader).map_err(|e| format_err(path, e.line() as u64, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| invalid(path, e))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(path, i as u64 + 1, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| invalid(path, e))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Scope file record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeRecord {
    pub agent_id: u64,
    pub nights: u32,
    pub locations: u32,
}

pub fn scopes_by_agent(records: &[ScopeRecord]) -> BTreeMap<u64, TripScope> {
    records.iter().map(|r| (r.agent_id, TripScope { nights: r.nights, locations: r.locations })).collect()
}

/// Itinerary file record: wards by code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItineraryRecord {
    pub agent_id: u64,
    pub month: u8,
    pub days: Vec<Vec<String>>,
}

impl ItineraryRecord {
    pub fn from_itinerary(it: &WardItinerary, wards: &Wards) -> Self {
        Self {
            agent_id: it.agent_id,
            month: it.month,
            days: it.days.iter().map(|d| d.iter().map(|w| wards.code(*w).to_string()).collect()).collect(),
        }
    }

    pub fn to_itinerary(&self, wards: &Wards) -> Result<WardItinerary, String> {
        let days = self
            .days
            .iter()
            .map(|d| d.iter().map(|c| wards.get(c).ok_or_else(|| format!("unknown ward {c:?}"))).collect())
            .collect::<Result<Vec<Vec<WardId>>, String>>()?;
        if days.is_empty() || days.iter().any(Vec::is_empty) {
            return Err(format!("agent {}: itinerary has an empty day", self.agent_id));
        }
        Ok(WardItinerary { agent_id: self.agent_id, month: self.month, days })
    }
}

pub fn write_itineraries(path: &Path, its: &[WardItinerary], wards: &Wards) -> Result<(), IoError> {
    write_jsonl(path, its.iter().map(|it| ItineraryRecord::from_itinerary(it, wards)))
}

pub fn read_itineraries(path: &Path, wards: &Wards) -> Result<Vec<WardItinerary>, IoError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ItineraryRecord = serde_json::from_str(&line).map_err(|e| format_err(path, i as u64 + 1, e))?;
        out.push(rec.to_itinerary(wards).map_err(|e| format_err(path, i as u64 + 1, e))?);
    }
    Ok(out)
}

/// Chain file record: one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub agent_id: u64,
    pub day: u32,
    pub code: u8,
    pub t_start: u16,
    pub t_end: u16,
    pub ward: String,
}

pub fn write_chains(path: &Path, chains: &[ActivityChain], wards: &Wards) -> Result<(), IoError> {
    write_jsonl(
        path,
        chains.iter().flat_map(|c| {
            c.episodes.iter().map(move |e| EpisodeRecord {
                agent_id: c.agent_id,
                day: e.day,
                code: e.code,
                t_start: e.t_start,
                t_end: e.t_end,
                ward: wards.code(e.ward).to_string(),
            })
        }),
    )
}

/// Reads episodes and groups them into chains ordered by agent id.
pub fn read_chains(path: &Path, wards: &Wards) -> Result<Vec<ActivityChain>, IoError> {
    let reader = BufReader::new(open(path)?);
    let mut by_agent: BTreeMap<u64, Vec<ActivityEpisode>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeRecord = serde_json::from_str(&line).map_err(|e| format_err(path, i as u64 + 1, e))?;
        let ward = wards.get(&r.ward).ok_or_else(|| format_err(path, i as u64 + 1, format!("unknown ward {:?}", r.ward)))?;
        by_agent.entry(r.agent_id).or_default().push(ActivityEpisode {
            day: r.day,
            t_start: r.t_start,
            t_end: r.t_end,
            code: r.code,
            ward,
        });
    }
    Ok(by_agent.into_iter().map(|(a, eps)| ActivityChain::new(a, eps)).collect())
}

/// Tidy share CSV: `scope,ward,generated,reference,gap`.
pub fn write_share_csv(path: &Path, comparisons: &[ShareComparison]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| invalid(path, e))?;
    w.write_record(["scope", "ward", "generated", "reference", "gap"]).map_err(|e| invalid(path, e))?;
    for c in comparisons {
        for s in &c.wards {
            w.write_record([c.scope.label(), s.ward.clone(), s.generated.to_string(), s.reference.to_string(), s.gap.to_string()])
                .map_err(|e| invalid(path, e))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Heatmap CSV `month,ward,gap` from monthly comparisons.
pub fn write_gap_heatmap(path: &Path, comparisons: &[ShareComparison]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| invalid(path, e))?;
    w.write_record(["month", "ward", "gap"]).map_err(|e| invalid(path, e))?;
    for c in comparisons {
        if let crate::eval::ShareScope::Month(m) = c.scope {
            for s in &c.wards {
                w.write_record([m.to_string(), s.ward.clone(), s.gap.to_string()]).map_err(|e| invalid(path, e))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Writes rows of string cells as CSV.
pub fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| invalid(path, e))?;
    w.write_record(header).map_err(|e| invalid(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| invalid(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_centroids(path: &Path, wards: &Wards, cents: &[(WardId, GeoPoint<f64>)]) -> Result<(), IoError> {
    write_csv_rows(
        path,
        &["code", "lat", "lon"],
        cents.iter().map(|(w, p)| vec![wards.code(*w).to_string(), p.lat().to_string(), p.lon().to_string()]),
    )
}

pub fn write_staypoints(path: &Path, sps: &[Staypoint]) -> Result<(), IoError> {
    write_csv_rows(
        path,
        &["agent_id", "lat", "lon", "start_epoch_s", "end_epoch_s"],
        sps.iter().map(|s| {
            vec![s.agent.clone(), format!("{:.6}", s.loc.lat()), format!("{:.6}", s.loc.lon()), s.start.to_string(), s.end.to_string()]
        }),
    )
}

pub fn write_poi_catalog(path: &Path, pois: &[PoiEntry]) -> Result<(), IoError> {
    write_csv_rows(
        path,
        &["id", "name", "category", "lat", "lon", "radius_m", "min_dwell_s"],
        pois.iter().map(|p| {
            vec![
                p.id.clone(),
                p.name.clone(),
                p.category.clone(),
                p.loc.lat().to_string(),
                p.loc.lon().to_string(),
                p.radius_m.to_string(),
                p.min_dwell_s.to_string(),
            ]
        }),
    )
}
