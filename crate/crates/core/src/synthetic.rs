//! Synthetic charging networks for tests, benches and demos: stations
//! scattered around a centre point, weekly demand cycles and noise that is
//! correlated both across nearby stations and from day to day.

use std::fmt::Write as _;

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{DemandPanel, Station, StationRegistry};
use crate::numerics::DenseArray;
use crate::topology::{distance_matrix, EARTH_RADIUS_KM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub stations: usize,
    pub days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    pub centre: (f64, f64),
    /// Stations are placed uniformly in a square of this half-width.
    pub radius_km: f64,
    /// Mean daily kWh per station is drawn from this range.
    pub level_range: (f64, f64),
    /// Multipliers for Monday..Sunday.
    pub weekly_profile: [f64; 7],
    /// Noise standard deviation as a fraction of the station level.
    pub noise: f64,
    /// Spatial correlation length of the noise.
    pub correlation_km: f64,
    /// Day-to-day AR(1) coefficient of the noise.
    pub persistence: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            stations: 10,
            days: 400,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            seed: 0,
            centre: (37.4419, -122.1430),
            radius_km: 1.5,
            level_range: (10.0, 40.0),
            weekly_profile: [1.0, 1.05, 1.1, 1.05, 0.95, 0.45, 0.35],
            noise: 0.12,
            correlation_km: 1.0,
            persistence: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub registry: StationRegistry,
    pub panel: DemandPanel,
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticNetwork> {
    if config.stations == 0 || config.days == 0 {
        return Err(Error::InvalidInput("need at least one station and one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lat0, lon0) = config.centre;
    let deg_per_km = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_KM);
    let stations: Vec<Station> = (0..config.stations)
        .map(|i| {
            let dy = rng.random_range(-config.radius_km..=config.radius_km);
            let dx = rng.random_range(-config.radius_km..=config.radius_km);
            Station {
                station_id: format!("STATION-{i:02}"),
                latitude: lat0 + dy * deg_per_km,
                longitude: lon0 + dx * deg_per_km / lat0.to_radians().cos(),
            }
        })
        .collect();
    let registry = StationRegistry::from_stations(stations)?;

    let n = registry.len();
    let dist = distance_matrix(&registry);
    let kernel = DMatrix::from_fn(n, n, |i, j| {
        (-dist.at2(i, j) / config.correlation_km).exp() + if i == j { 1e-9 } else { 0.0 }
    });
    let chol = kernel
        .cholesky()
        .ok_or_else(|| Error::Singular("noise covariance".into()))?
        .l();

    let (lo, hi) = config.level_range;
    let levels: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation_scale = (1.0 - config.persistence * config.persistence).sqrt();
    let mut state = vec![0.0; n];
    let mut values = Vec::with_capacity(config.days * n);
    for d in 0..config.days {
        let date = config.start + Duration::days(d as i64);
        let weekday = chrono::Datelike::weekday(&date).num_days_from_monday() as usize;
        let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        for i in 0..n {
            let shock: f64 = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
            state[i] = config.persistence * state[i] + innovation_scale * shock;
            let v = levels[i] * (config.weekly_profile[weekday] + config.noise * state[i]);
            values.push(v.max(0.0));
        }
    }
    let panel = DemandPanel::new(config.start, registry.ids(), DenseArray::new([config.days, n], values)?)?;
    Ok(SyntheticNetwork { registry, panel })
}

/// Renders a panel as raw transactions in the default column layout: each
/// nonzero station-day becomes one to three sessions whose energies sum to
/// the panel value.
pub fn transactions_csv(net: &SyntheticNetwork, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("Station Name,Latitude,Longitude,Start Date,Energy (kWh)\n");
    let stations = net.registry.stations();
    for d in 0..net.panel.n_days() {
        let date = net.panel.date(d);
        for (s, &v) in stations.iter().zip(net.panel.row(d)) {
            if v <= 0.0 {
                continue;
            }
            let sessions = rng.random_range(1..=3usize);
            let mut weights: Vec<f64> = (0..sessions).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            for w in weights {
                let hour = rng.random_range(6..23u32);
                let minute = rng.random_range(0..60u32);
                let _ = writeln!(
                    out,
                    "{},{:.7},{:.7},{} {hour}:{minute:02},{:.6}",
                    s.station_id,
                    s.latitude,
                    s.longitude,
                    date.format("%-m/%-d/%Y"),
                    v * w
                );
            }
        }
    }
    out
}
