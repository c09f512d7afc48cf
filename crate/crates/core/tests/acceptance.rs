//! Acceptance checks, one PASS/FAIL line per criterion; exits 1 if any fails.
//!
//! Criterion 8 needs a real Palo Alto export; point `EVCAST_PALO_ALTO_CSV`
//! at it to run that check. `EVCAST_ACCEPTANCE_EPOCHS` overrides its epoch
//! count (default 1000).

use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use evcast_core::eval::{run_experiment, ExperimentConfig, ExperimentData};
use evcast_core::ingest::{
    aggregate_daily, build_registry, parse_transactions, ColumnSchema, DemandPanel, Station, StationRegistry,
};
use evcast_core::models::gcn::{self, GcnShape, OutputActivation};
use evcast_core::models::{
    ar_fit, var_fit, Cnn, CnnConfig, CnnLstm, CnnLstmConfig, ModelKind, Network, Tgcn, TgcnConfig,
};
use evcast_core::numerics::{grad_check, Bound, DenseArray, ParameterStore, Tape, Var};
use evcast_core::synthetic::{generate, transactions_csv, SyntheticConfig};
use evcast_core::topology::{
    build_graph, build_raster, normalize_adjacency, SpatialGraph, DEFAULT_CUTOFF_KM,
};
use evcast_core::training::{make_windows, TrainConfig, WindowSpec};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self {
            pass: Some(pass),
            detail,
        }
    }

    fn skip(detail: String) -> Self {
        Self { pass: None, detail }
    }
}

fn random_store_loss(out: Var, tape: &mut Tape, seed: u64) -> evcast_core::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(DenseArray::uniform(shape, 1.0, &mut rng));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn random_input(shape: Vec<usize>, seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0;
    let mut a = DenseArray::uniform(shape, bound, &mut rng);
    a.data_mut().iter_mut().for_each(|v| *v = v.abs());
    a
}

fn check_network(net: &dyn Network, seed: u64) -> evcast_core::Result<f64> {
    let store = net.init_params(seed)?;
    let mut shape = vec![2];
    shape.extend(net.input_shape());
    let x = random_input(shape, seed + 100);
    grad_check(
        |tape: &mut Tape, p: &Bound| {
            let input = tape.constant(x.clone());
            let out = net.forward(tape, p, input)?;
            random_store_loss(out, tape, seed + 200)
        },
        &store,
        1e-6,
    )
}

fn random_registry(n: usize, rng: &mut ChaCha8Rng) -> StationRegistry {
    let stations = (0..n)
        .map(|i| Station {
            station_id: format!("S{i:03}"),
            latitude: 37.40 + rng.random_range(0.0..0.06),
            longitude: -122.18 + rng.random_range(0.0..0.08),
        })
        .collect();
    StationRegistry::from_stations(stations).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();

    let gcn_err = {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = GcnShape {
            in_features: 2,
            hidden: 4,
            out_features: 3,
        };
        let mut store = ParameterStore::new();
        gcn::init_params(&mut store, shape, &mut rng).unwrap();
        let graph = SpatialGraph::from_distances(
            &DenseArray::from_rows(&(0..6)
                .map(|i| (0..6).map(|j| if i == j { 0.0 } else { 0.3 * (i as f64 - j as f64).abs() }).collect())
                .collect::<Vec<Vec<f64>>>())
            .unwrap(),
            DEFAULT_CUTOFF_KM,
        )
        .unwrap();
        let adj = normalize_adjacency(&graph).matrix().clone();
        let x = random_input(vec![6, 2], 3);
        grad_check(
            |tape: &mut Tape, p: &Bound| {
                let a = tape.constant(adj.clone());
                let f = tape.constant(x.clone());
                let out = gcn::gcn_forward(tape, a, f, p, OutputActivation::Linear)?;
                random_store_loss(out, tape, 4)
            },
            &store,
            1e-6,
        )
        .unwrap()
    };
    parts.push(format!("GCN {gcn_err:.1e}"));
    worst = worst.max(gcn_err);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let registry = random_registry(5, &mut rng);
    let adjacency = normalize_adjacency(&build_graph(&registry, DEFAULT_CUTOFF_KM).unwrap());
    let tgcn = Tgcn::new(
        TgcnConfig {
            gcn: GcnShape {
                in_features: 1,
                hidden: 3,
                out_features: 2,
            },
            hidden: 4,
            ..TgcnConfig::new(4, 2)
        },
        &adjacency,
    )
    .unwrap();
    let cnn = Cnn::new(CnnConfig {
        filters: 3,
        ..CnnConfig::new(3, 3, 5, 2)
    })
    .unwrap();
    let cnn_lstm = CnnLstm::new(CnnLstmConfig {
        cnn: CnnConfig {
            filters: 2,
            ..CnnConfig::new(3, 3, 4, 2)
        },
        hidden: 4,
    })
    .unwrap();
    for (name, net) in [
        ("T-GCN", &tgcn as &dyn Network),
        ("CNN", &cnn),
        ("CNN+LSTM", &cnn_lstm),
    ] {
        let err = check_network(net, 7).unwrap();
        parts.push(format!("{name} {err:.1e}"));
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        worst <= 1e-4 && secs < 10.0,
        format!(
            "max relative error {worst:.2e} (tol 1e-4; {}), {secs:.2} s (limit 10 s)",
            parts.join(", ")
        ),
    )
}

fn brute_force_normalized(a: &DenseArray) -> DMatrix<f64> {
    let n = a.shape()[0];
    let tilde = DMatrix::from_row_slice(n, n, a.data()) + DMatrix::identity(n, n);
    let d = DMatrix::from_diagonal(&tilde.row_sum().transpose().map(|s| 1.0 / s.sqrt()));
    &d * tilde * &d
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let mut a = DenseArray::zeros([n, n]);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    let w = rng.random_range(0.01..=1.0);
                    a.set2(i, j, w);
                    a.set2(j, i, w);
                }
            }
        }
        let got = normalize_adjacency(&SpatialGraph::from_adjacency(a.clone()).unwrap());
        let want = brute_force_normalized(&a);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((got.matrix().at2(i, j) - want[(i, j)]).abs());
            }
        }
    }
    let pair = SpatialGraph::from_adjacency(DenseArray::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap())
        .unwrap();
    let exact = normalize_adjacency(&pair).matrix().data() == [0.5; 4];
    Outcome::check(
        worst <= 1e-12 && exact,
        format!("100 random graphs max |Δ| {worst:.2e} (tol 1e-12); 2-node case exact: {exact}"),
    )
}

fn relative_conservation(registry: &StationRegistry, panel: &DemandPanel, rows: usize, cols: usize) -> f64 {
    let raster = build_raster(registry, panel, rows, cols).unwrap();
    raster
        .daily_totals()
        .iter()
        .zip(panel.daily_totals())
        .map(|(r, p)| (r - p).abs() / p.abs().max(1e-300))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
}

fn ingest_text(csv: &str) -> (StationRegistry, DemandPanel) {
    let parsed = parse_transactions(csv.as_bytes(), &ColumnSchema::default()).unwrap();
    let registry = build_registry(&parsed.transactions).unwrap().registry;
    let first = parsed.transactions.iter().map(|t| t.start_time.date()).min().unwrap();
    let last = parsed.transactions.iter().map(|t| t.start_time.date()).max().unwrap();
    let panel = aggregate_daily(&parsed.transactions, &registry, first, last).unwrap().panel;
    (registry, panel)
}

fn criterion_3(real: Option<&(StationRegistry, DemandPanel)>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_random: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let days = rng.random_range(1..=30);
        let registry = random_registry(n, &mut rng);
        let values = (0..days * n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..80.0) })
            .collect();
        let panel = DemandPanel::new(
            NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            registry.ids(),
            DenseArray::new([days, n], values).unwrap(),
        )
        .unwrap();
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        worst_random = worst_random.max(relative_conservation(&registry, &panel, r, c));
    }
    let net = generate(&SyntheticConfig::default()).unwrap();
    let (registry, panel) = ingest_text(&transactions_csv(&net, 3));
    let worst_ingested = relative_conservation(&registry, &panel, 5, 5);
    let mut worst = worst_random.max(worst_ingested);
    let mut detail = format!(
        "random fixtures {worst_random:.2e}, ingested synthetic export {worst_ingested:.2e}"
    );
    if let Some((reg, panel)) = real {
        let w = relative_conservation(reg, panel, 5, 5);
        worst = worst.max(w);
        detail.push_str(&format!(", Palo Alto export {w:.2e}"));
    } else {
        detail.push_str(", Palo Alto export not provided");
    }
    Outcome::check(worst <= 1e-9, format!("max relative daily deviation: {detail} (tol 1e-9)"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n = 40;
    let mut d = DenseArray::zeros([n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let h = if j % 2 == 0 {
                rng.random_range(1e-6..2.5)
            } else {
                rng.random_range(2.5..10.0)
            };
            d.set2(i, j, h);
            d.set2(j, i, h);
        }
    }
    d.set2(0, 1, 2.5);
    d.set2(1, 0, 2.5);
    let g = SpatialGraph::from_distances(&d, DEFAULT_CUTOFF_KM).unwrap();
    let a = g.adjacency();
    let mut worst: f64 = 0.0;
    let mut cutoff_ok = true;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let h = d.at2(i, j);
            if h < 2.5 {
                worst = worst.max((a.at2(i, j) - (-h).exp()).abs());
            } else {
                cutoff_ok &= a.at2(i, j) == 0.0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let registry = random_registry(30, &mut rng);
    let real = build_graph(&registry, DEFAULT_CUTOFF_KM).unwrap();
    let ra = real.adjacency();
    let symmetric = (0..30).all(|i| ra.at2(i, i) == 0.0 && (0..30).all(|j| ra.at2(i, j) == ra.at2(j, i)))
        && (0..n).all(|i| a.at2(i, i) == 0.0 && (0..n).all(|j| a.at2(i, j) == a.at2(j, i)));
    Outcome::check(
        worst <= 1e-12 && cutoff_ok && symmetric,
        format!(
            "max |w − exp(−h)| {worst:.2e} (tol 1e-12); h ≥ 2.5 → 0: {cutoff_ok}; symmetric, zero diagonal: {symmetric}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..=150);
        let t = rng.random_range(1..=30);
        let l = n + t + rng.random_range(0..=300);
        ok &= make_windows(l, WindowSpec::new(n, t).unwrap()).unwrap().len() == l - n - t + 1;
    }
    let boundary = make_windows(37, WindowSpec::new(30, 7).unwrap()).unwrap().len() == 1;
    let short = make_windows(36, WindowSpec::new(30, 7).unwrap()).is_err();
    Outcome::check(
        ok && boundary && short,
        format!("50 random (L, n, T) counts match L − n − T + 1: {ok}; L = n + T gives 1: {boundary}; L < n + T errors: {short}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut x = vec![0.0, 0.0];
    for t in 2..5000 {
        let v = 0.5 * x[t - 1] - 0.3 * x[t - 2] + noise.sample(&mut rng);
        x.push(v);
    }
    let ar = ar_fit(&x, 2, 1e-8).unwrap();
    let ar_err = (ar.coefs[0] - 0.5).abs().max((ar.coefs[1] + 0.3).abs());

    let a = [[0.6, 0.2], [-0.3, 0.4]];
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut data = vec![0.0, 0.0];
    for t in 1..5000 {
        let prev = [data[2 * (t - 1)], data[2 * (t - 1) + 1]];
        for row in a {
            data.push(row[0] * prev[0] + row[1] * prev[1] + noise.sample(&mut rng));
        }
    }
    let var = var_fit(&DenseArray::new([5000, 2], data).unwrap(), 1, 1e-8).unwrap();
    let mut var_err: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            var_err = var_err.max((var.coef(i, 1, j) - want).abs());
        }
    }
    Outcome::check(
        ar_err <= 0.05 && var_err <= 0.05,
        format!(
            "AR(2) fit ({:.4}, {:.4}) max error {ar_err:.4}; VAR(1) max coefficient error {var_err:.4} (tol 0.05)",
            ar.coefs[0], ar.coefs[1]
        ),
    )
}

fn experiment_data(registry: &StationRegistry, panel: &DemandPanel) -> ExperimentData {
    let adjacency = normalize_adjacency(&build_graph(registry, DEFAULT_CUTOFF_KM).unwrap());
    let raster = build_raster(registry, panel, 5, 5).unwrap();
    ExperimentData::new(panel.clone(), adjacency, raster).unwrap()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let net = generate(&SyntheticConfig::default()).unwrap();
    let data = experiment_data(&net.registry, &net.panel);
    let config = ExperimentConfig {
        models: vec![ModelKind::Tgcn, ModelKind::Persistence],
        horizons: vec![1],
        seeds: vec![0],
        split_date: net.panel.date(320),
        test_end: None,
        train: TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let fitted = evcast_core::eval::fit(&data, &config, ModelKind::Tgcn, 1, 0).unwrap();
    let trace = fitted.loss_trace().unwrap().to_vec();
    let tgcn = evcast_core::eval::test_forecast(&data, &config, ModelKind::Tgcn, 1, &fitted).unwrap();
    let persistence = evcast_core::eval::test_forecast(
        &data,
        &config,
        ModelKind::Persistence,
        1,
        &evcast_core::eval::Fitted::Persistence,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let improvement = 1.0 - tgcn.rmse / persistence.rmse;
    let drop = 1.0 - trace[trace.len() - 1] / trace[0];
    Outcome::check(
        improvement >= 0.20 && drop >= 0.50 && secs <= 300.0,
        format!(
            "T-GCN RMSE {:.2} vs persistence {:.2} ({:.1}% lower, need ≥ 20%); loss {:.4} → {:.4} ({:.1}% drop, need ≥ 50%); {secs:.1} s (limit 300 s)",
            tgcn.rmse,
            persistence.rmse,
            100.0 * improvement,
            trace[0],
            trace[trace.len() - 1],
            100.0 * drop
        ),
    )
}

fn criterion_8(real: Option<&(StationRegistry, DemandPanel)>) -> Outcome {
    let Some((registry, panel)) = real else {
        return Outcome::skip("EVCAST_PALO_ALTO_CSV not set; Palo Alto export unavailable".into());
    };
    let epochs = std::env::var("EVCAST_ACCEPTANCE_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1000);
    let data = experiment_data(registry, panel);
    let config = ExperimentConfig {
        models: vec![ModelKind::Tgcn, ModelKind::CnnLstm, ModelKind::Cnn],
        horizons: vec![1],
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&data, &config).unwrap();
    let m = |k| report.row(k, 1).unwrap().mean;
    let (t, cl, c) = (m(ModelKind::Tgcn), m(ModelKind::CnnLstm), m(ModelKind::Cnn));
    Outcome::check(
        t < cl && cl < c,
        format!("1-day RMSE T-GCN {t:.2} < CNN+LSTM {cl:.2} < CNN {c:.2} ({epochs} epochs)"),
    )
}

fn full_pipeline(csv: &str) -> (String, String) {
    let (registry, panel) = ingest_text(csv);
    let data = experiment_data(&registry, &panel);
    let config = ExperimentConfig {
        models: vec![
            ModelKind::Ar,
            ModelKind::Var,
            ModelKind::Cnn,
            ModelKind::CnnLstm,
            ModelKind::Tgcn,
            ModelKind::Persistence,
        ],
        horizons: vec![1, 7, 30],
        split_date: panel.date(300),
        test_end: None,
        train: TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&data, &config).unwrap();
    (report.to_csv(), report.to_table())
}

fn criterion_9() -> Outcome {
    let net = generate(&SyntheticConfig {
        seed: 9,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let csv = transactions_csv(&net, 9);
    let (csv_a, table_a) = full_pipeline(&csv);
    let (csv_b, table_b) = full_pipeline(&csv);
    let same = csv_a == csv_b && table_a == table_b;
    Outcome::check(
        same,
        format!(
            "two ingest → topology → train → evaluate runs, {} report rows: byte-identical {same}",
            csv_a.lines().count() - 1
        ),
    )
}

fn main() -> ExitCode {
    let real = std::env::var("EVCAST_PALO_ALTO_CSV").ok().map(|path| {
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {path}: {e}"));
        ingest_text(&text)
    });
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 9] = [
        ("gradient correctness", Box::new(criterion_1)),
        ("normalization oracle", Box::new(criterion_2)),
        ("raster conservation", Box::new(|| criterion_3(real.as_ref()))),
        ("edge-weight contract", Box::new(criterion_4)),
        ("window count", Box::new(criterion_5)),
        ("AR/VAR recovery", Box::new(criterion_6)),
        ("end-to-end synthetic", Box::new(criterion_7)),
        ("1-day ordering on Palo Alto", Box::new(|| criterion_8(real.as_ref()))),
        ("report determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let status = match outcome.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("criterion {} [{status}] {name}: {}", i + 1, outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
