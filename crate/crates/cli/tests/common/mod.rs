//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run stix")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let out = stix(dir, args);
    assert!(
        out.status.success(),
        "stix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Nine stations with six-hourly readings over 56 weeks, a few hours missing.
pub fn write_raw_inputs(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut stations = String::from("station_id,latitude,longitude\n");
    let ids: Vec<String> = (0..9).map(|i| format!("P{i:02}")).collect();
    for id in &ids {
        writeln!(stations, "{id},{:.4},{:.4}", 34.0 + rng.random::<f64>(), -118.5 + rng.random::<f64>()).unwrap();
    }
    fs::write(dir.join("stations.csv"), stations).unwrap();

    let start = chrono::NaiveDate::from_ymd_opt(2012, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut readings = String::from("station_id,timestamp,pm25,temperature,humidity,wind_speed\n");
    for day in 0..7 * 56 {
        for hour in [0, 6, 12, 18] {
            let ts = start + chrono::Duration::days(day) + chrono::Duration::hours(hour);
            for id in &ids {
                let pm25 = if rng.random::<f64>() < 0.02 { String::new() } else { format!("{:.2}", rng.random_range(1.0..45.0)) };
                writeln!(
                    readings,
                    "{id},{}Z,{pm25},{:.1},{:.1},{:.1}",
                    ts.format("%Y-%m-%dT%H:%M:%S"),
                    rng.random_range(0.0..30.0),
                    rng.random_range(20.0..90.0),
                    rng.random_range(0.0..10.0)
                )
                .unwrap();
            }
        }
    }
    fs::write(dir.join("readings.csv"), readings).unwrap();
}
