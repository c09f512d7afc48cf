//! Spatial presentations of the station network: a Haversine-weighted
//! graph with its GCN-normalized adjacency, and a raster grid series.

use std::io::Write;

use chrono::{Duration, NaiveDate};

use crate::ingest::{DemandPanel, StationRegistry};
use crate::numerics::DenseArray;
use crate::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_CUTOFF_KM: f64 = 2.5;

/// Great-circle distance in km between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lat2) = (a.0.to_radians(), b.0.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.1 - a.1).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Symmetric station graph; `adjacency[i][j]` is the edge weight, 0 for
/// no edge, with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    adjacency: DenseArray,
}

impl SpatialGraph {
    pub fn from_adjacency(adjacency: DenseArray) -> Result<Self> {
        let s = adjacency.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::InvalidInput(format!(
                "adjacency must be square, got {s:?}"
            )));
        }
        let n = s[0];
        for i in 0..n {
            if adjacency.at2(i, i) != 0.0 {
                return Err(Error::InvalidInput(format!("non-zero self loop at node {i}")));
            }
            for j in 0..i {
                if adjacency.at2(i, j) != adjacency.at2(j, i) {
                    return Err(Error::InvalidInput(format!("asymmetric edge ({i}, {j})")));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// `e_ij = exp(−d_ij)` when `i ≠ j` and `d_ij < cutoff_km`, else 0.
    pub fn from_distances(distances: &DenseArray, cutoff_km: f64) -> Result<Self> {
        let n = distances.shape()[0];
        let mut adjacency = DenseArray::zeros([n, n]);
        for i in 0..n {
            for j in 0..n {
                let d = distances.at2(i, j);
                if i != j && d < cutoff_km {
                    adjacency.set2(i, j, (-d).exp());
                }
            }
        }
        Self::from_adjacency(adjacency)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn adjacency(&self) -> &DenseArray {
        &self.adjacency
    }

    /// Undirected edges `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.adjacency.at2(i, j);
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Nodes without any edge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let n = self.n_nodes();
        (0..n)
            .filter(|&i| (0..n).all(|j| self.adjacency.at2(i, j) == 0.0))
            .collect()
    }

    pub fn write_edge_list<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "weight"])?;
        for (i, j, weight) in self.edges() {
            wr.write_record([i.to_string(), j.to_string(), weight.to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("edge list", e))?;
        Ok(())
    }
}

/// Pairwise Haversine distances between registry stations.
pub fn distance_matrix(registry: &StationRegistry) -> DenseArray {
    let st = registry.stations();
    let n = st.len();
    let mut d = DenseArray::zeros([n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let km = haversine_km(
                    (st[i].latitude, st[i].longitude),
                    (st[j].latitude, st[j].longitude),
                );
                d.set2(i, j, km);
            }
        }
    }
    d
}

pub fn build_graph(registry: &StationRegistry, cutoff_km: f64) -> Result<SpatialGraph> {
    if registry.is_empty() {
        return Err(Error::InvalidInput("graph needs at least one station".into()));
    }
    SpatialGraph::from_distances(&distance_matrix(registry), cutoff_km)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = Σ_j (A + I)_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: DenseArray,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &DenseArray {
        &self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.shape()[0]
    }

    /// Wraps an already-normalized matrix (e.g. read back from disk).
    pub fn from_matrix(matrix: DenseArray) -> Result<Self> {
        let s = matrix.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::InvalidInput(format!(
                "normalized adjacency must be square, got {s:?}"
            )));
        }
        Ok(Self { matrix })
    }
}

pub fn normalize_adjacency(graph: &SpatialGraph) -> NormalizedAdjacency {
    let n = graph.n_nodes();
    let a = graph.adjacency();
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).map(|j| a.at2(i, j)).sum::<f64>())
        .collect();
    let mut matrix = DenseArray::zeros([n, n]);
    for i in 0..n {
        for j in 0..n {
            let tilde = a.at2(i, j) + if i == j { 1.0 } else { 0.0 };
            matrix.set2(i, j, tilde / (deg[i] * deg[j]).sqrt());
        }
    }
    NormalizedAdjacency { matrix }
}

/// Writes a square matrix as headerless CSV rows.
pub fn write_dense_csv<W: Write>(matrix: &DenseArray, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let cols = matrix.shape()[1];
    for row in matrix.data().chunks(cols.max(1)) {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush().map_err(|e| Error::io("matrix", e))?;
    Ok(())
}

pub fn read_dense_csv<R: std::io::Read>(r: R) -> Result<DenseArray> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad matrix value '{v}'")))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    DenseArray::from_rows(&rows)
}

/// Per-day `rows × cols` grids of cell-summed demand.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterSeries {
    start_date: NaiveDate,
    rows: usize,
    cols: usize,
    /// `days × rows × cols`
    grids: DenseArray,
    cell_of_station: Vec<(usize, usize)>,
}

impl RasterSeries {
    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn n_days(&self) -> usize {
        self.grids.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn grids(&self) -> &DenseArray {
        &self.grids
    }

    pub fn cell_of_station(&self) -> &[(usize, usize)] {
        &self.cell_of_station
    }

    pub fn grid(&self, day: usize) -> &[f64] {
        let c = self.n_cells();
        &self.grids.data()[day * c..(day + 1) * c]
    }

    /// The series as a `days × cells` matrix, cells in row-major order.
    pub fn flattened(&self) -> DenseArray {
        self.grids
            .clone()
            .reshape([self.n_days(), self.n_cells()])
            .expect("same element count")
    }

    pub fn daily_totals(&self) -> Vec<f64> {
        (0..self.n_days()).map(|d| self.grid(d).iter().sum()).collect()
    }

    /// `date,c_<row>_<col>,…` per day, cells in row-major order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                header.push(format!("c_{r}_{c}"));
            }
        }
        wr.write_record(&header)?;
        for d in 0..self.n_days() {
            let date = self.start_date + Duration::days(d as i64);
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend(self.grid(d).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("raster", e))?;
        Ok(())
    }
}

impl RasterSeries {
    /// Reads the layout written by [`RasterSeries::write_csv`]. Station
    /// placement is not stored, so [`RasterSeries::cell_of_station`] is empty.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("date") {
            return Err(Error::Schema("raster CSV must start with a 'date' column".into()));
        }
        let cells: Vec<(usize, usize)> = header
            .iter()
            .skip(1)
            .map(|h| {
                let mut parts = h.strip_prefix("c_").unwrap_or("").split('_');
                match (
                    parts.next().and_then(|v| v.parse().ok()),
                    parts.next().and_then(|v| v.parse().ok()),
                ) {
                    (Some(r), Some(c)) => Ok((r, c)),
                    _ => Err(Error::Schema(format!("bad raster column '{h}'"))),
                }
            })
            .collect::<Result<_>>()?;
        let rows = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let cols = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        let row_major = cells
            .iter()
            .enumerate()
            .all(|(i, &(r, c))| (r, c) == (i / cols.max(1), i % cols.max(1)));
        if rows * cols != cells.len() || !row_major {
            return Err(Error::Schema("raster columns are not a full row-major grid".into()));
        }
        let mut start = None;
        let mut data = Vec::new();
        let mut days = 0usize;
        for rec in rd.records() {
            let rec = rec?;
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| Error::Schema(format!("bad raster date '{}': {e}", &rec[0])))?;
            match start {
                None => start = Some(date),
                Some(s) if s + Duration::days(days as i64) != date => {
                    return Err(Error::Schema(format!("raster gap before {date}")));
                }
                _ => {}
            }
            for v in rec.iter().skip(1) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad raster value '{v}'")))?,
                );
            }
            days += 1;
        }
        let start_date = start.ok_or_else(|| Error::Schema("raster CSV has no rows".into()))?;
        Ok(Self {
            start_date,
            rows,
            cols,
            grids: DenseArray::new([days, rows, cols], data)?,
            cell_of_station: Vec::new(),
        })
    }
}

/// Uniform lat/lon binning over the station bounding box (expanded by
/// 1e-9° so stations on the max edge land in the last cell). Row index
/// grows with latitude, column index with longitude.
pub fn build_raster(
    registry: &StationRegistry,
    panel: &DemandPanel,
    rows: usize,
    cols: usize,
) -> Result<RasterSeries> {
    if rows < 1 || cols < 1 {
        return Err(Error::InvalidInput(format!(
            "raster needs at least 1×1 cells, got {rows}×{cols}"
        )));
    }
    if panel.station_ids() != registry.ids().as_slice() {
        return Err(Error::InvalidInput(
            "panel station order does not match the registry".into(),
        ));
    }
    if registry.is_empty() {
        return Err(Error::InvalidInput("raster needs at least one station".into()));
    }
    const PAD: f64 = 1e-9;
    let st = registry.stations();
    let fold = |f: fn(&crate::ingest::Station) -> f64| {
        st.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    };
    let (lat_lo, lat_hi) = fold(|s| s.latitude);
    let (lon_lo, lon_hi) = fold(|s| s.longitude);
    let bin = |v: f64, lo: f64, hi: f64, n: usize| {
        let span = hi - lo + PAD;
        (((v - lo) / span * n as f64).floor() as usize).min(n - 1)
    };
    let cell_of_station: Vec<(usize, usize)> = st
        .iter()
        .map(|s| {
            (
                bin(s.latitude, lat_lo, lat_hi, rows),
                bin(s.longitude, lon_lo, lon_hi, cols),
            )
        })
        .collect();

    let days = panel.n_days();
    let cells = rows * cols;
    let mut grids = DenseArray::zeros([days, rows, cols]);
    for d in 0..days {
        let out = &mut grids.data_mut()[d * cells..(d + 1) * cells];
        for (s, &(r, c)) in panel.row(d).iter().zip(&cell_of_station) {
            out[r * cols + c] += s;
        }
    }
    Ok(RasterSeries {
        start_date: panel.start_date(),
        rows,
        cols,
        grids,
        cell_of_station,
    })
}
