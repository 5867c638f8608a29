//! Earthquake catalogs: events, CSV I/O and filtering.

use std::cmp::Ordering;
use std::fmt::Write as _;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

use crate::error::{parse_err, Error, Result};
use crate::geo::Region;

/// One earthquake. `time` is in days since the start of the catalog window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub lon: f64,
    pub lat: f64,
    pub mag: f64,
}

impl Event {
    pub fn new(time: f64, lon: f64, lat: f64, mag: f64) -> Self {
        Self {
            time,
            lon,
            lat,
            mag,
        }
    }

    /// Sort order: time, then lon, lat, mag.
    pub fn order(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.lon.total_cmp(&other.lon))
            .then(self.lat.total_cmp(&other.lat))
            .then(self.mag.total_cmp(&other.mag))
    }
}

/// Time-sorted events observed over `[0, window]` days above magnitude `m0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    events: Vec<Event>,
    window: f64,
    m0: f64,
    epoch: Option<DateTime<Utc>>,
}

impl Catalog {
    /// Sorts `events` and validates the catalog invariants. Identical events
    /// are rejected.
    pub fn new(mut events: Vec<Event>, window: f64, m0: f64) -> Result<Self> {
        if !window.is_finite() || window < 0.0 {
            return Err(Error::Catalog(format!("window length {window} is invalid")));
        }
        if !m0.is_finite() {
            return Err(Error::Catalog("magnitude floor must be finite".into()));
        }
        for e in &events {
            if ![e.time, e.lon, e.lat, e.mag].iter().all(|v| v.is_finite()) {
                return Err(Error::Catalog(format!("non-finite field in {e:?}")));
            }
            if e.time < 0.0 || e.time > window {
                return Err(Error::Catalog(format!(
                    "event time {} outside window [0, {window}]",
                    e.time
                )));
            }
            if e.mag < m0 {
                return Err(Error::Catalog(format!(
                    "event magnitude {} below floor {m0}",
                    e.mag
                )));
            }
        }
        events.sort_by(Event::order);
        if let Some(w) = events.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Catalog(format!("duplicate event {:?}", w[0])));
        }
        Ok(Self {
            events,
            window,
            m0,
            epoch: None,
        })
    }

    pub fn empty(window: f64, m0: f64) -> Self {
        Self {
            events: Vec::new(),
            window,
            m0,
            epoch: None,
        }
    }

    pub fn with_epoch(mut self, epoch: Option<DateTime<Utc>>) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Window length T in days; events lie in `[0, T]`.
    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// Absolute time of day 0 when the catalog was read from ISO timestamps.
    pub fn epoch(&self) -> Option<DateTime<Utc>> {
        self.epoch
    }

    /// Keeps events with `mag >= m_min`, time in `[t0, t1)` and epicenter in
    /// `region` (boundary inclusive). Times are shifted so `t0` becomes 0.
    pub fn filter(&self, region: &Region, m_min: f64, t0: f64, t1: f64) -> Result<Catalog> {
        if !(t0 < t1) {
            return Err(Error::DegenerateWindow { t0, t1 });
        }
        let events = self
            .events
            .iter()
            .filter(|e| e.mag >= m_min && e.time >= t0 && e.time < t1)
            .filter(|e| region.contains(e.lon, e.lat))
            .map(|e| Event {
                time: e.time - t0,
                ..*e
            })
            .collect();
        let epoch = self
            .epoch
            .map(|ep| ep + chrono::Duration::milliseconds((t0 * 86_400_000.0).round() as i64));
        Ok(Catalog::new(events, t1 - t0, m_min.max(self.m0))?.with_epoch(epoch))
    }

    /// Serializes in the catalog CSV format. Window, floor and epoch are
    /// written as leading `# key = value` comments so that parsing restores
    /// the same catalog.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# window_days = {}", self.window);
        let _ = writeln!(out, "# m0 = {}", self.m0);
        if let Some(ep) = self.epoch {
            let _ = writeln!(out, "# epoch = {}", ep.to_rfc3339());
        }
        out.push_str("time,lon,lat,mag\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.time, e.lon, e.lat, e.mag);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Catalog> {
        parse_catalog(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeFormat {
    Days,
    Iso,
}

fn parse_iso(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

/// Parses catalog CSV with header `time,lon,lat,mag`.
///
/// Times are decimal days or ISO-8601 timestamps; the format is fixed by the
/// first data row and every other row must use the same one. ISO times are
/// converted to days since the `# epoch` comment if present, otherwise since
/// midnight UTC of the earliest event.
pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let mut window: Option<f64> = None;
    let mut m0: Option<f64> = None;
    let mut epoch: Option<DateTime<Utc>> = None;
    let mut header_seen = false;
    let mut format: Option<TimeFormat> = None;
    let mut rows: Vec<(usize, f64, DateTime<Utc>, f64, f64, f64)> = Vec::new();
    let mut day_rows: Vec<Event> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                let v = v.trim();
                match k.trim() {
                    "window_days" => {
                        window = Some(v.parse().map_err(|_| parse_err(lineno, "bad window_days"))?)
                    }
                    "m0" => m0 = Some(v.parse().map_err(|_| parse_err(lineno, "bad m0"))?),
                    "epoch" => {
                        epoch = Some(parse_iso(v).ok_or_else(|| parse_err(lineno, "bad epoch"))?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            let header: Vec<_> = line.split(',').map(str::trim).collect();
            if header != ["time", "lon", "lat", "mag"] {
                return Err(parse_err(
                    lineno,
                    format!("expected header `time,lon,lat,mag`, got `{line}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("invalid {name} `{}`", fields[i])))
        };
        let lon = num(1, "lon")?;
        let lat = num(2, "lat")?;
        let mag = num(3, "mag")?;
        let this_format = match fields[0].parse::<f64>() {
            Ok(_) => TimeFormat::Days,
            Err(_) => TimeFormat::Iso,
        };
        match format {
            None => format = Some(this_format),
            Some(f) if f != this_format => {
                return Err(parse_err(
                    lineno,
                    "mixed time formats (decimal days and ISO-8601) in one file",
                ))
            }
            _ => {}
        }
        match this_format {
            TimeFormat::Days => {
                let t = num(0, "time")?;
                day_rows.push(Event::new(t, lon, lat, mag));
            }
            TimeFormat::Iso => {
                let dt = parse_iso(fields[0])
                    .ok_or_else(|| parse_err(lineno, format!("invalid time `{}`", fields[0])))?;
                rows.push((lineno, 0.0, dt, lon, lat, mag));
            }
        }
    }
    if !header_seen {
        return Err(parse_err(1, "missing header `time,lon,lat,mag`"));
    }

    let events = if format == Some(TimeFormat::Iso) {
        let origin = epoch.unwrap_or_else(|| {
            let earliest = rows.iter().map(|r| r.2).min().expect("non-empty");
            earliest
                .date_naive()
                .and_hms_opt(0, 0, 0)
                .expect("midnight")
                .and_utc()
        });
        epoch = Some(origin);
        let mut out = Vec::with_capacity(rows.len());
        for (lineno, _, dt, lon, lat, mag) in rows {
            let days = (dt - origin).num_milliseconds() as f64 / 86_400_000.0;
            if days < 0.0 {
                return Err(parse_err(lineno, "event precedes catalog epoch"));
            }
            out.push(Event::new(days, lon, lat, mag));
        }
        out
    } else {
        day_rows
    };

    let window = window.unwrap_or_else(|| events.iter().map(|e| e.time).fold(0.0, f64::max));
    let m0 = m0.unwrap_or_else(|| events.iter().map(|e| e.mag).reduce(f64::min).unwrap_or(0.0));
    Ok(Catalog::new(events, window, m0)?.with_epoch(epoch))
}
