use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Cleanliness, DiscardReport, Engine, SnapshotRecord, SnapshotSet};
use crate::error::{Error, Result};
use crate::geometry::LonLat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// One JSON object per line.
    Ndjson,
    Csv,
}

/// Names of the source fields holding each snapshot attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub vin: String,
    pub timestamp: String,
    pub lon: String,
    pub lat: String,
    pub fuel: String,
    pub interior: String,
    pub exterior: String,
    pub engine: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            vin: "vin".into(),
            timestamp: "date_time".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            fuel: "fuel".into(),
            interior: "interior".into(),
            exterior: "exterior".into(),
            engine: "engine".into(),
        }
    }
}

enum RowError {
    Malformed(String),
    OutOfRange(String),
}

/// Reads a snapshot stream. Malformed or out-of-range rows are logged,
/// counted in the discard report and skipped; I/O failures are fatal.
pub fn parse_snapshots<R: BufRead>(
    reader: R,
    format: InputFormat,
    mapping: &FieldMapping,
    source: Option<&str>,
) -> Result<SnapshotSet> {
    let src = source.unwrap_or("<stream>");
    let mut report = DiscardReport::default();
    let mut records = Vec::new();
    let mut handle = |row: std::result::Result<SnapshotRecord, RowError>, line: usize| match row {
        Ok(r) => records.push(r),
        Err(RowError::Malformed(why)) => {
            log::debug!("{src}:{line}: malformed record skipped: {why}");
            report.malformed += 1;
        }
        Err(RowError::OutOfRange(why)) => {
            log::debug!("{src}:{line}: out-of-range record skipped: {why}");
            report.out_of_range += 1;
        }
    };

    let mut rows_read = 0usize;
    match format {
        InputFormat::Ndjson => {
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(src, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows_read += 1;
                let row = serde_json::from_str::<Value>(&line)
                    .map_err(|e| RowError::Malformed(e.to_string()))
                    .and_then(|v| record_from_json(&v, mapping));
                handle(row, i + 1);
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            let headers = rdr.headers()?.clone();
            let column = |name: &str| headers.iter().position(|h| h.trim() == name);
            let cols = [
                &mapping.vin,
                &mapping.timestamp,
                &mapping.lon,
                &mapping.lat,
                &mapping.fuel,
                &mapping.interior,
                &mapping.exterior,
                &mapping.engine,
            ]
            .map(|n| column(n));
            if cols[..4].iter().any(Option::is_none) {
                return Err(Error::invalid(format!(
                    "{src}: CSV header lacks one of the mapped fields {:?}",
                    [&mapping.vin, &mapping.timestamp, &mapping.lon, &mapping.lat]
                )));
            }
            for (i, row) in rdr.records().enumerate() {
                let row = match row {
                    Ok(r) => r,
                    Err(e) if e.is_io_error() => return Err(e.into()),
                    Err(e) => {
                        rows_read += 1;
                        handle(Err(RowError::Malformed(e.to_string())), i + 2);
                        continue;
                    }
                };
                rows_read += 1;
                let get = |k: usize| cols[k].and_then(|c| row.get(c)).map(str::trim);
                let parsed = record_from_fields(
                    get(0),
                    get(1).map(|s| Value::String(s.to_owned())),
                    get(2).map(|s| Value::String(s.to_owned())),
                    get(3).map(|s| Value::String(s.to_owned())),
                    get(4).map(|s| Value::String(s.to_owned())),
                    get(5),
                    get(6),
                    get(7),
                );
                handle(parsed, i + 2);
            }
        }
    }

    report.rows_read = rows_read;
    let mut set = SnapshotSet {
        records,
        source: source.map(str::to_owned),
        report,
    };
    set.normalize();
    Ok(set)
}

fn record_from_json(v: &Value, m: &FieldMapping) -> std::result::Result<SnapshotRecord, RowError> {
    let text = |k: &str| v.get(k).and_then(Value::as_str);
    let vin = match v.get(&m.vin) {
        Some(Value::String(s)) => Some(s.as_str().to_owned()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    record_from_fields(
        vin.as_deref(),
        v.get(&m.timestamp).cloned(),
        v.get(&m.lon).cloned(),
        v.get(&m.lat).cloned(),
        v.get(&m.fuel).cloned(),
        text(&m.interior),
        text(&m.exterior),
        text(&m.engine),
    )
}

#[allow(clippy::too_many_arguments)]
fn record_from_fields(
    vin: Option<&str>,
    timestamp: Option<Value>,
    lon: Option<Value>,
    lat: Option<Value>,
    fuel: Option<Value>,
    interior: Option<&str>,
    exterior: Option<&str>,
    engine: Option<&str>,
) -> std::result::Result<SnapshotRecord, RowError> {
    let vin = vin
        .filter(|s| !s.is_empty())
        .ok_or_else(|| RowError::Malformed("missing vin".into()))?
        .to_owned();
    let timestamp = timestamp
        .as_ref()
        .and_then(parse_timestamp)
        .ok_or_else(|| RowError::Malformed(format!("bad timestamp {timestamp:?}")))?;
    let number = |v: &Option<Value>, what: &str| {
        v.as_ref()
            .and_then(|v| match v {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse().ok(),
                _ => None,
            })
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| RowError::Malformed(format!("bad {what} {v:?}")))
    };
    let lon = number(&lon, "lon")?;
    let lat = number(&lat, "lat")?;
    let position = LonLat::new(lon, lat);
    if !position.is_valid() {
        return Err(RowError::OutOfRange(format!("coordinates ({lon}, {lat})")));
    }
    let fuel = match fuel {
        None | Some(Value::Null) => f64::NAN,
        some => number(&some, "fuel")?,
    };
    if fuel.is_finite() && !(0.0..=100.0).contains(&fuel) {
        return Err(RowError::OutOfRange(format!("fuel {fuel}")));
    }
    let engine = match engine.map(|s| s.trim().to_ascii_lowercase()) {
        Some(s) if matches!(s.as_str(), "ce" | "combustion") => Engine::Combustion,
        Some(s) if matches!(s.as_str(), "ed" | "electric") => Engine::Electric,
        // Absent engine field is common in partial dumps; combustion is the fleet default.
        None => Engine::Combustion,
        Some(s) => return Err(RowError::Malformed(format!("unknown engine {s:?}"))),
    };
    Ok(SnapshotRecord {
        vin,
        timestamp,
        position,
        fuel,
        interior: parse_cleanliness(interior),
        exterior: parse_cleanliness(exterior),
        engine,
    })
}

fn parse_cleanliness(s: Option<&str>) -> Cleanliness {
    match s.map(|s| s.trim().to_ascii_lowercase()).as_deref() {
        Some("good") => Cleanliness::Good,
        Some("unacceptable") => Cleanliness::Unacceptable,
        _ => Cleanliness::Unknown,
    }
}

/// Accepts RFC 3339, `YYYY-MM-DD HH:MM[:SS]` (taken as UTC) and Unix seconds.
pub(crate) fn parse_timestamp(v: &Value) -> Option<DateTime<Utc>> {
    match v {
        Value::Number(n) => Utc.timestamp_opt(n.as_i64()?, 0).single(),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(t) = DateTime::parse_from_rfc3339(s) {
                return Some(t.with_timezone(&Utc));
            }
            for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
                if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
                    return Some(t.and_utc());
                }
            }
            s.parse::<i64>()
                .ok()
                .and_then(|secs| Utc.timestamp_opt(secs, 0).single())
        }
        _ => None,
    }
}

/// Writes snapshots as NDJSON using the default field names.
pub fn write_snapshots_ndjson<W: Write>(mut w: W, set: &SnapshotSet) -> std::io::Result<()> {
    for r in &set.records {
        let engine = match r.engine {
            Engine::Combustion => "combustion",
            Engine::Electric => "electric",
        };
        let clean = |c: Cleanliness| match c {
            Cleanliness::Good => "good",
            Cleanliness::Unacceptable => "unacceptable",
            Cleanliness::Unknown => "unknown",
        };
        let fuel = if r.fuel.is_finite() {
            serde_json::json!(r.fuel)
        } else {
            Value::Null
        };
        let obj = serde_json::json!({
            "vin": r.vin,
            "date_time": r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "lon": r.position.lon,
            "lat": r.position.lat,
            "fuel": fuel,
            "interior": clean(r.interior),
            "exterior": clean(r.exterior),
            "engine": engine,
        });
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ndjson(lines: &[&str]) -> SnapshotSet {
        parse_snapshots(
            lines.join("\n").as_bytes(),
            InputFormat::Ndjson,
            &FieldMapping::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn latitude_out_of_range_is_counted() {
        let set = ndjson(&[
            r#"{"vin":"A","date_time":"2017-01-01T10:00:00Z","lon":9.1,"lat":91.0,"fuel":50}"#,
            r#"{"vin":"A","date_time":"2017-01-01T10:01:00Z","lon":9.1,"lat":45.0,"fuel":50}"#,
        ]);
        assert_eq!(set.len(), 1);
        assert_eq!(set.report.out_of_range, 1);
        assert_eq!(set.report.rows_read, 2);
    }

    #[test]
    fn duplicate_pair_keeps_first() {
        let set = ndjson(&[
            r#"{"vin":"A","date_time":"2017-01-01 10:00:00","lon":9.1,"lat":45.0,"fuel":50}"#,
            r#"{"vin":"A","date_time":"2017-01-01 10:00:00","lon":9.2,"lat":45.0,"fuel":40}"#,
        ]);
        assert_eq!(set.len(), 1);
        assert_eq!(set.records[0].position.lon, 9.1);
        assert_eq!(set.report.duplicates, 1);
    }

    #[test]
    fn garbage_lines_are_malformed() {
        let set = ndjson(&[
            "not json",
            r#"{"vin":"A","date_time":"yesterday","lon":9.1,"lat":45.0}"#,
            r#"{"vin":"A","date_time":"2017-01-01T10:00:00Z","lon":"9.1","lat":"45.0","engine":"ED","interior":"GOOD"}"#,
        ]);
        assert_eq!(set.report.malformed, 2);
        assert_eq!(set.records[0].engine, Engine::Electric);
        assert_eq!(set.records[0].interior, Cleanliness::Good);
        assert_eq!(set.records[0].exterior, Cleanliness::Unknown);
    }

    #[test]
    fn csv_with_custom_mapping() {
        let text = "car,ts,x,y,fuel_level\nA,2017-01-01 10:00,9.1,45.0,20\nB,2017-01-01 10:00,9.2,45.1,30\n";
        let mapping = FieldMapping {
            vin: "car".into(),
            timestamp: "ts".into(),
            lon: "x".into(),
            lat: "y".into(),
            fuel: "fuel_level".into(),
            ..FieldMapping::default()
        };
        let set = parse_snapshots(text.as_bytes(), InputFormat::Csv, &mapping, None).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.records[1].fuel, 30.0);
    }

    #[test]
    fn ndjson_writer_round_trips() {
        let set = ndjson(&[
            r#"{"vin":"B","date_time":"2017-01-01T10:01:00Z","lon":9.123456789,"lat":45.0,"fuel":50,"engine":"electric"}"#,
            r#"{"vin":"A","date_time":"2017-01-01T10:00:00Z","lon":9.1,"lat":45.0,"fuel":null}"#,
        ]);
        let mut buf = Vec::new();
        write_snapshots_ndjson(&mut buf, &set).unwrap();
        let back = parse_snapshots(
            buf.as_slice(),
            InputFormat::Ndjson,
            &FieldMapping::default(),
            None,
        )
        .unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.records.iter().zip(&set.records) {
            assert_eq!(a.vin, b.vin);
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.position, b.position);
            assert_eq!(a.engine, b.engine);
        }
    }
}
