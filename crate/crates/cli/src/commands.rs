//! One function per subcommand. Each resolves its settings, writes them to
//! `config.json` in the output directory and then produces its artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use stix_core::diagnostics::{qq_points, residual_table, write_qq, write_residuals};
use stix_core::ingest::{aggregate_weekly, build_panel, parse_readings, parse_stations, PanelMeta};
use stix_core::prediction::{read_requests, write_predictions, DEFAULT_PHI_S_GRID, DEFAULT_PHI_T_GRID};
use stix_core::simulation::SimSpec;
use stix_core::{
    build_design, choose_k, cross_validate_decay, fit_panel, kmeans, lm_test_panel, simulate_panel,
    size_power_study, FitOptions, FitReport, Interaction, Metric, MissingPolicy, Predictor, StudyCell,
    StudyConfig, WeekCalendar, WeeklyPanel,
};

use crate::args::{ClusterArgs, Command, CvArgs, FitArgs, IngestArgs, LmTestArgs, PredictArgs, SimulateArgs};
use crate::config::{ensure_dir, merge, read_json, required, write_json, write_resolved, FileConfig};
use crate::Failure;

const DEFAULT_SEED: u64 = 1;
const DEFAULT_LEVEL: f64 = 0.05;
/// Decays used by `fit` and `lmtest` when none are given: the middle of
/// the cross-validation grids.
const DEFAULT_PHI_S: f64 = 0.01;
const DEFAULT_PHI_T: f64 = 1.0;
const DEFAULT_REPS: usize = 100;

pub fn dispatch(command: &Command, file: &FileConfig, workers: usize) -> Result<(), Failure> {
    let name = command.name();
    match command {
        Command::Ingest(a) => ingest(merge(file, a)?, name, workers),
        Command::Cluster(a) => cluster(merge(file, a)?, name, workers),
        Command::Cv(a) => cv(merge(file, a)?, name, workers),
        Command::Fit(a) => fit(merge(file, a)?, name, workers),
        Command::Lmtest(a) => lmtest(merge(file, a)?, name, workers),
        Command::Predict(a) => predict(merge(file, a)?, name, workers),
        Command::Simulate(a) => simulate(merge(file, a)?, name, workers),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn output_dir(out: &mut Option<PathBuf>) -> Result<PathBuf, Failure> {
    ensure_dir(out.get_or_insert_with(|| PathBuf::from(".")))
}

fn check_level(level: f64) -> Result<f64, Failure> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(Failure::Validation(format!("--level {level} must lie in (0, 1)")))
    }
}

fn fit_options(max_iter: &mut Option<usize>, tol: &mut Option<f64>) -> Result<FitOptions, Failure> {
    let defaults = FitOptions::default();
    let options = FitOptions {
        max_iter: *max_iter.get_or_insert(defaults.max_iter),
        tol: *tol.get_or_insert(defaults.tol),
        ..defaults
    };
    if options.max_iter == 0 || !(options.tol > 0.0) {
        return Err(Failure::Validation("--max-iter must be positive and --tol must be > 0".into()));
    }
    Ok(options)
}

/// Loads a panel and its metadata (default: `panel_meta.json` beside it).
fn load_panel(panel: &Option<PathBuf>, meta: &mut Option<PathBuf>) -> Result<WeeklyPanel, Failure> {
    let panel_path = required(panel, "panel", "panel CSV")?;
    let meta_path = meta
        .get_or_insert_with(|| panel_path.with_file_name("panel_meta.json"))
        .clone();
    let meta: PanelMeta = read_json(&meta_path, "panel metadata")?;
    Ok(WeeklyPanel::read_csv(&panel_path, &meta)?)
}

fn write_panel(panel: &WeeklyPanel, out: &Path) -> Result<(), Failure> {
    panel.write_csv_file(out.join("panel.csv"))?;
    write_json(&out.join("panel_meta.json"), &panel.meta())
}

fn ingest(mut a: IngestArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let stations_path = required(&a.stations, "stations", "stations CSV")?;
    let readings_path = required(&a.readings, "readings", "readings CSV")?;
    let stations = parse_stations(&stations_path)?;
    let readings = parse_readings(&readings_path)?;
    let dates = readings.iter().map(|r| r.timestamp.date_naive());
    let (first, last) = match (dates.clone().min(), dates.max()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Failure::Validation(format!("{} has no readings", readings_path.display()))),
    };
    let start = *a.start.get_or_insert(first);
    let end = *a.end.get_or_insert(last);
    let policy = *a.missing_policy.get_or_insert(MissingPolicy::Error);
    let metric = *a.metric.get_or_insert(Metric::GreatCircle);
    let k = *a.k.get_or_insert(choose_k(stations.len())?);
    let seed = *a.seed.get_or_insert(DEFAULT_SEED);
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let calendar = WeekCalendar::between(start, end)?;
    let raw = aggregate_weekly(&readings, &calendar, &stations)?;
    let clusters = kmeans(&stations.coords(), k, metric, seed)?;
    let panel = build_panel(&raw, &clusters, policy)?;
    info!(
        "panel: {} sites x {} weeks, {} regions, {} imputed cells",
        panel.n_sites(),
        panel.n_weeks(),
        clusters.k(),
        panel.imputed.len()
    );
    write_panel(&panel, &out)?;
    clusters.write_members_csv(&stations, create(&out.join("clusters.csv"))?)?;
    clusters.write_centroids_csv(create(&out.join("centroids.csv"))?)?;
    Ok(())
}

fn cluster(mut a: ClusterArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let stations = parse_stations(required(&a.stations, "stations", "stations CSV")?)?;
    let metric = *a.metric.get_or_insert(Metric::GreatCircle);
    let k = *a.k.get_or_insert(choose_k(stations.len())?);
    let seed = *a.seed.get_or_insert(DEFAULT_SEED);
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let clusters = kmeans(&stations.coords(), k, metric, seed)?;
    clusters.write_members_csv(&stations, create(&out.join("clusters.csv"))?)?;
    clusters.write_centroids_csv(create(&out.join("centroids.csv"))?)?;
    Ok(())
}

fn fit(mut a: FitArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let panel = load_panel(&a.panel, &mut a.meta)?;
    let phi_s = *a.phi_s.get_or_insert(DEFAULT_PHI_S);
    let phi_t = *a.phi_t.get_or_insert(DEFAULT_PHI_T);
    let level = check_level(*a.level.get_or_insert(DEFAULT_LEVEL))?;
    let options = fit_options(&mut a.max_iter, &mut a.tol)?;
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let design = build_design(&panel)?;
    let model = fit_panel(&panel, &design, phi_s, phi_t, &options)?;
    if !model.converged {
        warn!("fit did not converge within {} passes", options.max_iter);
    }
    write_json(&out.join("fit.json"), &model.report_at(1.0 - level)?)?;
    let rows = residual_table(&model, &panel)?;
    write_residuals(&rows, create(&out.join("residuals.csv"))?)?;
    let standardized: Vec<f64> = rows.iter().map(|r| r.standardized).collect();
    write_qq(&qq_points(&standardized), create(&out.join("qq.csv"))?)?;
    Ok(())
}

fn lmtest(mut a: LmTestArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let panel = load_panel(&a.panel, &mut a.meta)?;
    let phi_s = *a.phi_s.get_or_insert(DEFAULT_PHI_S);
    let phi_t = *a.phi_t.get_or_insert(DEFAULT_PHI_T);
    let level = check_level(*a.level.get_or_insert(DEFAULT_LEVEL))?;
    let options = fit_options(&mut a.max_iter, &mut a.tol)?;
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let design = build_design(&panel)?;
    let result = lm_test_panel(&panel, &design, phi_s, phi_t, &options)?;
    if !result.restricted_fit.converged {
        warn!("restricted fit did not converge within {} passes", options.max_iter);
    }
    write_json(&out.join("lmtest.json"), &result.report(level))
}

#[derive(Serialize)]
struct CvSummary {
    n_train: usize,
    n_test: usize,
    best_phi_s: f64,
    best_phi_t: f64,
    best_mse: f64,
    unconverged: Vec<(f64, f64)>,
}

fn cv(mut a: CvArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let panel = load_panel(&a.panel, &mut a.meta)?;
    let grid_s = a.grid_s.get_or_insert_with(|| DEFAULT_PHI_S_GRID.to_vec()).clone();
    let grid_t = a.grid_t.get_or_insert_with(|| DEFAULT_PHI_T_GRID.to_vec()).clone();
    let options = fit_options(&mut a.max_iter, &mut a.tol)?;
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let report = cross_validate_decay(&panel, &grid_s, &grid_t, &options)?;
    report.write_csv(create(&out.join("cv.csv"))?)?;
    let unconverged: Vec<(f64, f64)> = report
        .grid
        .iter()
        .filter(|c| !c.converged)
        .map(|c| (c.phi_s, c.phi_t))
        .collect();
    if !unconverged.is_empty() {
        warn!("{} grid cells did not converge", unconverged.len());
    }
    write_json(
        &out.join("cv.json"),
        &CvSummary {
            n_train: report.split.n_train,
            n_test: report.split.n_test,
            best_phi_s: report.best_phi_s,
            best_phi_t: report.best_phi_t,
            best_mse: report.best_mse,
            unconverged,
        },
    )
}

fn predict(mut a: PredictArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let panel = load_panel(&a.panel, &mut a.meta)?;
    let report: FitReport = read_json(&required(&a.fit, "fit", "fit.json")?, "fit report")?;
    let requests_path = required(&a.requests, "requests", "requests CSV")?;
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    let predictor = Predictor::from_report(&panel, &report)?;
    let requests = read_requests(&requests_path, &panel.covariate_names)?;
    let predictions = predictor.predict_all(&requests)?;
    write_predictions(&predictions, create(&out.join("predictions.csv"))?)?;
    Ok(())
}

fn simulate(mut a: SimulateArgs, name: &str, workers: usize) -> Result<(), Failure> {
    let sizes = a.n.get_or_insert_with(|| vec![10]).clone();
    let weeks = a.weeks.get_or_insert_with(|| vec![52]).clone();
    let interactions = a.interaction.get_or_insert_with(|| vec![Interaction::None]).clone();
    if sizes.is_empty() || weeks.is_empty() || interactions.is_empty() {
        return Err(Failure::Validation("--n, --weeks and --interaction need at least one value".into()));
    }
    let reps = *a.reps.get_or_insert(DEFAULT_REPS);
    let seed = *a.seed.get_or_insert(DEFAULT_SEED);
    let level = check_level(*a.level.get_or_insert(DEFAULT_LEVEL))?;
    let template = SimSpec::new(sizes[0], weeks[0], interactions[0]);
    let phi_s = *a.phi_s.get_or_insert(template.phi_s);
    let phi_t = *a.phi_t.get_or_insert(template.phi_t);
    let options = fit_options(&mut a.max_iter, &mut a.tol)?;
    let emit_panel = *a.emit_panel.get_or_insert(false);
    if reps == 0 && !emit_panel {
        return Err(Failure::Validation("--reps must be positive".into()));
    }
    let base = SimSpec { phi_s, phi_t, ..template };
    base.validate()?;
    let out = output_dir(&mut a.out)?;
    write_resolved(&out, name, workers, &a)?;

    if emit_panel {
        let sim = simulate_panel(&base, seed)?;
        write_panel(&sim.panel, &out)?;
        return write_json(&out.join("truth.json"), &sim.truth);
    }

    let mut cells = Vec::with_capacity(sizes.len() * weeks.len() * interactions.len());
    for &n_sites in &sizes {
        for &n_weeks in &weeks {
            for &interaction in &interactions {
                cells.push(StudyCell { n_sites, n_weeks, interaction });
            }
        }
    }
    let config = StudyConfig {
        level,
        fit: options,
        base,
        ..StudyConfig::new(reps, seed)
    };
    let study = size_power_study(&cells, &config)?;
    for cell in &study.cells {
        info!(
            "n={} T={} {}: rejection rate {:.3} ({} excluded)",
            cell.cell.n_sites,
            cell.cell.n_weeks,
            cell.cell.interaction.name(),
            cell.rejection_rate,
            cell.excluded
        );
    }
    study.write_csv(create(&out.join("study.csv"))?)?;
    study.write_replicates_csv(create(&out.join("replicates.csv"))?)?;
    Ok(())
}
