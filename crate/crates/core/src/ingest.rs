//! Charging transaction logs → gap-free daily per-station demand panel.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::numerics::DenseArray;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingTransaction {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub start_time: NaiveDateTime,
    pub energy_kwh: f64,
}

/// Maps the five required fields onto source column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub station_id: String,
    pub latitude: String,
    pub longitude: String,
    pub start_time: String,
    pub energy_kwh: String,
    pub delimiter: char,
    /// chrono format string; when unset a list of common layouts is tried.
    pub timestamp_format: Option<String>,
}

impl Default for ColumnSchema {
    /// Column names of the City of Palo Alto charging station export.
    fn default() -> Self {
        Self {
            station_id: "Station Name".into(),
            latitude: "Latitude".into(),
            longitude: "Longitude".into(),
            start_time: "Start Date".into(),
            energy_kwh: "Energy (kWh)".into(),
            delimiter: ',',
            timestamp_format: None,
        }
    }
}

/// A rejected data row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    /// 1-based line number in the source text.
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTransactions {
    pub transactions: Vec<ChargingTransaction>,
    pub rejected: Vec<RowDiagnostic>,
}

const TIMESTAMP_LAYOUTS: &[&str] = &[
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

const DATE_LAYOUTS: &[&str] = &["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"];

fn parse_timestamp(raw: &str, format: Option<&str>) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Some(fmt) = format {
        return NaiveDateTime::parse_from_str(raw, fmt)
            .ok()
            .or_else(|| NaiveDate::parse_from_str(raw, fmt).ok().map(midnight));
    }
    TIMESTAMP_LAYOUTS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .or_else(|| {
            DATE_LAYOUTS
                .iter()
                .find_map(|fmt| NaiveDate::parse_from_str(raw, fmt).ok().map(midnight))
        })
}

fn midnight(d: NaiveDate) -> NaiveDateTime {
    d.and_hms_opt(0, 0, 0).expect("midnight is valid")
}

/// Parses delimiter-separated text with a header row. Rows with
/// unparseable or invalid required fields are collected in
/// [`ParsedTransactions::rejected`]; a missing mapped column is fatal.
pub fn parse_transactions<R: Read>(raw: R, schema: &ColumnSchema) -> Result<ParsedTransactions> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::Schema(format!("delimiter {:?} is not ASCII", schema.delimiter)))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(raw);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let idx_station = column(&schema.station_id)?;
    let idx_lat = column(&schema.latitude)?;
    let idx_lon = column(&schema.longitude)?;
    let idx_time = column(&schema.start_time)?;
    let idx_energy = column(&schema.energy_kwh)?;

    let mut out = ParsedTransactions::default();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejected.push(RowDiagnostic {
                    line,
                    message: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let reject = |message: String| RowDiagnostic { line, message };
        let field = |i: usize| record.get(i).map(str::trim);

        let parsed = (|| {
            let station_id = field(idx_station)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| reject("empty station id".into()))?;
            let number = |i: usize, what: &str| {
                let raw = field(i).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| reject(format!("unparseable {what} '{raw}'")))
            };
            let latitude = number(idx_lat, "latitude")?;
            let longitude = number(idx_lon, "longitude")?;
            let energy_kwh = number(idx_energy, "energy")?;
            if !(-90.0..=90.0).contains(&latitude) {
                return Err(reject(format!("latitude {latitude} out of range")));
            }
            if !(-180.0..=180.0).contains(&longitude) {
                return Err(reject(format!("longitude {longitude} out of range")));
            }
            if energy_kwh < 0.0 {
                return Err(reject(format!("negative energy {energy_kwh}")));
            }
            let raw_time = field(idx_time).unwrap_or("");
            let start_time = parse_timestamp(raw_time, schema.timestamp_format.as_deref())
                .ok_or_else(|| reject(format!("unparseable start time '{raw_time}'")))?;
            Ok(ChargingTransaction {
                station_id: station_id.to_string(),
                latitude,
                longitude,
                start_time,
                energy_kwh,
            })
        })();
        match parsed {
            Ok(tx) => out.transactions.push(tx),
            Err(d) => out.rejected.push(d),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Stations sorted by id; the position of a station is its node index.
#[derive(Debug, Clone, PartialEq)]
pub struct StationRegistry {
    stations: Vec<Station>,
    index: HashMap<String, usize>,
}

impl StationRegistry {
    /// Builds a registry from explicit entries; ids must be unique.
    pub fn from_stations(mut stations: Vec<Station>) -> Result<Self> {
        stations.sort_by(|a, b| a.station_id.cmp(&b.station_id));
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if index.insert(s.station_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate station id '{}'",
                    s.station_id
                )));
            }
        }
        Ok(Self { stations, index })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn index_of(&self, station_id: &str) -> Option<usize> {
        self.index.get(station_id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.station_id.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for s in &self.stations {
            wr.serialize(s)?;
        }
        wr.flush().map_err(|e| Error::io("registry", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let stations = rd.deserialize().collect::<Result<Vec<Station>, _>>()?;
        Self::from_stations(stations)
    }
}

/// Registry plus any coordinate disagreements found while building it.
#[derive(Debug, Clone)]
pub struct RegistryBuild {
    pub registry: StationRegistry,
    pub diagnostics: Vec<String>,
}

const COORD_TOLERANCE_DEG: f64 = 1e-6;

/// One entry per distinct station id; coordinates come from the first
/// occurrence, later disagreements beyond 1e-6° are reported.
pub fn build_registry(transactions: &[ChargingTransaction]) -> Result<RegistryBuild> {
    if transactions.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build a station registry from zero transactions".into(),
        ));
    }
    let mut first: HashMap<&str, (f64, f64)> = HashMap::new();
    let mut diagnostics = Vec::new();
    let mut stations = Vec::new();
    for tx in transactions {
        match first.get(tx.station_id.as_str()) {
            None => {
                first.insert(&tx.station_id, (tx.latitude, tx.longitude));
                stations.push(Station {
                    station_id: tx.station_id.clone(),
                    latitude: tx.latitude,
                    longitude: tx.longitude,
                });
            }
            Some(&(lat, lon)) => {
                if (lat - tx.latitude).abs() > COORD_TOLERANCE_DEG
                    || (lon - tx.longitude).abs() > COORD_TOLERANCE_DEG
                {
                    diagnostics.push(format!(
                        "station '{}' reported at ({}, {}); keeping first position ({lat}, {lon})",
                        tx.station_id, tx.latitude, tx.longitude
                    ));
                }
            }
        }
    }
    Ok(RegistryBuild {
        registry: StationRegistry::from_stations(stations)?,
        diagnostics,
    })
}

/// Dates × stations matrix of daily energy (kWh) over consecutive days.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandPanel {
    start_date: NaiveDate,
    station_ids: Vec<String>,
    values: DenseArray,
}

impl DemandPanel {
    pub fn new(start_date: NaiveDate, station_ids: Vec<String>, values: DenseArray) -> Result<Self> {
        if values.ndim() != 2 || values.shape()[1] != station_ids.len() {
            return Err(Error::ShapeMismatch {
                op: "demand panel",
                lhs: values.shape().to_vec(),
                rhs: vec![station_ids.len()],
            });
        }
        if let Some(bad) = values.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidInput(format!("panel value {bad} is negative or NaN")));
        }
        Ok(Self {
            start_date,
            station_ids,
            values,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.n_days() as i64 - 1)
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    /// Row index of `date`, if inside the panel.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start_date).num_days();
        (d >= 0 && (d as usize) < self.n_days()).then_some(d as usize)
    }

    pub fn n_days(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_stations(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn values(&self) -> &DenseArray {
        &self.values
    }

    pub fn row(&self, day: usize) -> &[f64] {
        let n = self.n_stations();
        &self.values.data()[day * n..(day + 1) * n]
    }

    /// Σ over stations, per day.
    pub fn daily_totals(&self) -> Vec<f64> {
        (0..self.n_days()).map(|d| self.row(d).iter().sum()).collect()
    }

    /// `date,<station ids…>` header, one ISO-dated row per day.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string()];
        header.extend(self.station_ids.iter().cloned());
        wr.write_record(&header)?;
        for d in 0..self.n_days() {
            let mut rec = vec![self.date(d).format("%Y-%m-%d").to_string()];
            rec.extend(self.row(d).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("panel", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("date") {
            return Err(Error::Schema("panel CSV must start with a 'date' column".into()));
        }
        let station_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut start = None;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for rec in rd.records() {
            let rec = rec?;
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| Error::Schema(format!("bad panel date '{}': {e}", &rec[0])))?;
            let expected = start.map(|s: NaiveDate| s + Duration::days(rows as i64));
            match expected {
                None => start = Some(date),
                Some(exp) if exp != date => {
                    return Err(Error::Schema(format!("panel gap: expected {exp}, found {date}")))
                }
                _ => {}
            }
            for v in rec.iter().skip(1) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad panel value '{v}'")))?,
                );
            }
            rows += 1;
        }
        let start = start.ok_or_else(|| Error::Schema("panel CSV has no rows".into()))?;
        let values = DenseArray::new([rows, station_ids.len()], data)?;
        Self::new(start, station_ids, values)
    }
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub panel: DemandPanel,
    /// Transactions dropped because their start date fell outside the range.
    pub out_of_range: usize,
}

/// Sums transaction energy per (start date, station) over
/// `[date_from, date_to]`; days without transactions are zero rows.
///
/// Cell sums are taken in a canonical order, so any permutation of the
/// input yields a bit-identical panel.
pub fn aggregate_daily(
    transactions: &[ChargingTransaction],
    registry: &StationRegistry,
    date_from: NaiveDate,
    date_to: NaiveDate,
) -> Result<Aggregation> {
    if date_from > date_to {
        return Err(Error::InvalidInput(format!(
            "date_from {date_from} is after date_to {date_to}"
        )));
    }
    let days = (date_to - date_from).num_days() as usize + 1;
    let n = registry.len();
    let mut cells: Vec<(usize, f64)> = Vec::with_capacity(transactions.len());
    let mut out_of_range = 0;
    for tx in transactions {
        let station = registry
            .index_of(&tx.station_id)
            .ok_or_else(|| Error::UnknownStation(tx.station_id.clone()))?;
        let date = tx.start_time.date();
        if date < date_from || date > date_to {
            out_of_range += 1;
            continue;
        }
        let day = (date - date_from).num_days() as usize;
        cells.push((day * n + station, tx.energy_kwh));
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut values = DenseArray::zeros([days, n]);
    for (cell, kwh) in cells {
        values.data_mut()[cell] += kwh;
    }
    Ok(Aggregation {
        panel: DemandPanel::new(date_from, registry.ids(), values)?,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema {
            station_id: "id".into(),
            latitude: "lat".into(),
            longitude: "lon".into(),
            start_time: "start".into(),
            energy_kwh: "kwh".into(),
            ..ColumnSchema::default()
        }
    }

    fn tx(id: &str, lat: f64, day: u32, kwh: f64) -> ChargingTransaction {
        ChargingTransaction {
            station_id: id.into(),
            latitude: lat,
            longitude: -122.1,
            start_time: NaiveDate::from_ymd_opt(2018, 1, day)
                .unwrap()
                .and_hms_opt(10, 0, 0)
                .unwrap(),
            energy_kwh: kwh,
        }
    }

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 1, d).unwrap()
    }

    #[test]
    fn parses_a_single_row() {
        let text = "id,lat,lon,start,kwh\nA,37.4,-122.1,2018-01-02 08:00:00,5.2\n";
        let out = parse_transactions(text.as_bytes(), &schema()).unwrap();
        assert_eq!(out.transactions.len(), 1);
        assert_eq!(out.transactions[0].energy_kwh, 5.2);
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn header_only_is_empty() {
        let out = parse_transactions("id,lat,lon,start,kwh\n".as_bytes(), &schema()).unwrap();
        assert!(out.transactions.is_empty() && out.rejected.is_empty());
    }

    #[test]
    fn negative_energy_rejected_with_line_number() {
        let text = "id,lat,lon,start,kwh\n\
                    A,37.4,-122.1,2018-01-02,-1.0\n\
                    B,37.4,-122.1,2018-01-02,2.0\n\
                    C,37.4,-122.1,not a date,2.0\n";
        let out = parse_transactions(text.as_bytes(), &schema()).unwrap();
        assert_eq!(out.transactions.len(), 1);
        assert_eq!(out.transactions[0].station_id, "B");
        assert_eq!(out.rejected.len(), 2);
        assert_eq!(out.rejected[0].line, 2);
        assert!(out.rejected[0].message.contains("negative"));
        assert_eq!(out.rejected[1].line, 4);
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = parse_transactions("id,lat,start,kwh\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("lon")));
    }

    #[test]
    fn palo_alto_layout_parses() {
        let text = "Station Name,MAC Address,Start Date,Energy (kWh),Latitude,Longitude,Address 1\n\
                    PALO ALTO CA / HAMILTON #1,000D:6F00,7/29/2011 20:17,6.249457,37.444572,-122.160309,\"250 Hamilton Ave, Palo Alto\"\n";
        let out = parse_transactions(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.transactions.len(), 1, "{:?}", out.rejected);
        let t = &out.transactions[0];
        assert_eq!(t.start_time.date(), NaiveDate::from_ymd_opt(2011, 7, 29).unwrap());
        assert_eq!(t.energy_kwh, 6.249457);
    }

    #[test]
    fn registry_sorts_and_dedups() {
        let txs = [tx("B", 37.0, 1, 1.0), tx("A", 37.0, 1, 1.0), tx("A", 37.0, 2, 1.0)];
        let r = build_registry(&txs).unwrap();
        assert_eq!(r.registry.ids(), ["A", "B"]);
        assert!(r.diagnostics.is_empty());
        assert!(build_registry(&[]).is_err());
    }

    #[test]
    fn single_transaction_registry() {
        let r = build_registry(&[tx("S", 37.25, 1, 1.0)]).unwrap().registry;
        assert_eq!(r.len(), 1);
        assert_eq!(r.stations()[0].latitude, 37.25);
    }

    #[test]
    fn registry_keeps_first_coordinates() {
        let r = build_registry(&[tx("A", 37.0, 1, 1.0), tx("A", 37.5, 2, 1.0)]).unwrap();
        assert_eq!(r.registry.stations()[0].latitude, 37.0);
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn same_day_same_station_sums() {
        let txs = [tx("A", 37.0, 1, 3.0), tx("A", 37.0, 1, 4.5)];
        let reg = build_registry(&txs).unwrap().registry;
        let agg = aggregate_daily(&txs, &reg, date(1), date(1)).unwrap();
        assert_eq!(agg.panel.values().data(), &[7.5]);
    }

    #[test]
    fn empty_day_is_zero_row_and_conservation() {
        let txs = [tx("A", 37.0, 1, 2.0), tx("B", 37.1, 5, 0.0)];
        let reg = build_registry(&txs).unwrap().registry;
        let agg = aggregate_daily(&txs[..1], &reg, date(1), date(3)).unwrap();
        assert_eq!(agg.panel.n_days(), 3);
        assert_eq!(agg.panel.row(1), &[0.0, 0.0]);
        let nonzero = agg.panel.values().data().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 1);
        assert_eq!(agg.panel.values().sum(), 2.0);
    }

    #[test]
    fn out_of_range_counted_and_unknown_station_fails() {
        let txs = [tx("A", 37.0, 1, 2.0), tx("A", 37.0, 9, 2.0)];
        let reg = build_registry(&txs).unwrap().registry;
        let agg = aggregate_daily(&txs, &reg, date(1), date(3)).unwrap();
        assert_eq!(agg.out_of_range, 1);
        let err = aggregate_daily(&[tx("Z", 0.0, 1, 1.0)], &reg, date(1), date(3)).unwrap_err();
        assert!(err.to_string().contains('Z'));
        assert!(aggregate_daily(&txs, &reg, date(3), date(1)).is_err());
    }

    #[test]
    fn panel_csv_round_trip() {
        let txs = [tx("A,1", 37.0, 1, 0.1), tx("B", 37.1, 3, 1.0 / 3.0)];
        let reg = build_registry(&txs).unwrap().registry;
        let panel = aggregate_daily(&txs, &reg, date(1), date(4)).unwrap().panel;
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back = DemandPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, panel);
    }

    fn arb_txs() -> impl Strategy<Value = Vec<ChargingTransaction>> {
        prop::collection::vec((0usize..5, 1u32..15, 0.0f64..50.0), 1..60).prop_map(|rows| {
            rows.into_iter()
                .map(|(s, d, e)| tx(&format!("S{s}"), 37.0 + s as f64 * 0.01, d, e))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn conservation_and_permutation_invariance(txs in arb_txs(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let reg = build_registry(&txs).unwrap().registry;
            let (from, to) = (date(3), date(12));
            let agg = aggregate_daily(&txs, &reg, from, to).unwrap();
            prop_assert_eq!(agg.panel.n_days(), 10);
            let accepted: f64 = txs.iter()
                .filter(|t| (from..=to).contains(&t.start_time.date()))
                .map(|t| t.energy_kwh).sum();
            let total = agg.panel.values().sum();
            prop_assert!((total - accepted).abs() <= 1e-9 * accepted.abs().max(1.0));

            let mut shuffled = txs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let again = aggregate_daily(&shuffled, &reg, from, to).unwrap();
            prop_assert_eq!(again.panel, agg.panel);
        }
    }
}
