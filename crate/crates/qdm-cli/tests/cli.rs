//! End-to-end tests against the compiled binary. Exit codes are part of
//! the contract: 0 success, 2 configuration, 3 I/O, 4 malformed files,
//! 5 numerical failure.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qdm_core::io::{load_field_map, load_stack, save_field_map, save_stack};
use qdm_core::map::{FieldMap, OdmrStack};
use qdm_core::spectra::Mode;
use tempfile::TempDir;

fn qdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Axial-projection run over an 8x9 sensor; the window comfortably brackets
/// both lines unless the caller narrows it.
fn pmm_config(sources: &str, window: (f64, f64), photons: Option<f64>) -> String {
    let photons = match photons {
        Some(p) => format!("\"photons_per_pixel\": {p},"),
        None => String::new(),
    };
    format!(
        r#"{{
  "geometry": {{"standoff_m": 4.0e-6, "nv_layer_thickness_m": 1.0e-6, "nv_layer_depth_m": 0.5e-6, "pixel_pitch_m": 2.4e-6, "m": 8, "n": 9}},
  "mode": "pmm",
  "bias_field_t": [0.0, 0.0, 1.2e-3],
  "sources": [{sources}],
  "template": {{
    "mode": "pmm",
    "amplitudes": [0.004, 0.005, 0.0042, 0.0045, 0.0052, 0.0043],
    "res_freqs_ghz": [2.8359, 2.9041],
    "linewidths_mhz": [0.6, 0.65],
    "offset": 0.001,
    "hyperfine_mhz": 2.16
  }},
  "freq_window": {{"lo_ghz": {}, "hi_ghz": {}, "q": 300}},
  {photons}
  "seed": 42
}}"#,
        window.0, window.1
    )
}

const DIPOLE: &str =
    r#"{"position": [0.0, 0.0, -4.0e-6], "moment": [0.0, 0.0, 2.0e-14]}"#;

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn simulate_uniform_bias_yields_identical_pixels() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    let stack_path = dir.path().join("out.qdms");
    write(&cfg, &pmm_config("", (2.80, 2.94), None));

    let out = qdm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--stack",
        stack_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let stack = load_stack(&stack_path).unwrap();
    let mn = stack.m * stack.n;
    for f in 0..stack.q() {
        let first = stack.data[f * mn];
        assert!(stack.data[f * mn..(f + 1) * mn]
            .iter()
            .all(|&v| v.to_bits() == first.to_bits()));
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    write(&cfg, &pmm_config(DIPOLE, (2.80, 2.94), Some(5.0e5)));

    let mut paths = Vec::new();
    for run in 0..2 {
        let stack = dir.path().join(format!("s{run}.qdms"));
        let truth = dir.path().join(format!("t{run}.qdmf"));
        let out = qdm(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--stack",
            stack.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        paths.push((stack, truth));
    }
    assert_eq!(fs::read(&paths[0].0).unwrap(), fs::read(&paths[1].0).unwrap());
    assert_eq!(fs::read(&paths[0].1).unwrap(), fs::read(&paths[1].1).unwrap());
}

#[test]
fn simulate_reports_out_of_window_pixels() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    let stack_path = dir.path().join("out.qdms");
    // both lines sit near 2.870 +/- 0.019 GHz; this window excludes them
    write(&cfg, &pmm_config("", (2.86, 2.88), None));

    let out = qdm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--stack",
        stack_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("72 pixels"), "stderr: {err}");
    assert!(err.contains("outside the sweep window"), "stderr: {err}");

    // the stack is still written so the run can be inspected
    let stack = load_stack(&stack_path).unwrap();
    assert_eq!(stack.metadata["out_of_window_count"], "72");
}

#[test]
fn simulate_then_fit_recovers_truth() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    let stack_path = dir.path().join("out.qdms");
    let truth_path = dir.path().join("truth.qdmf");
    let fit_path = dir.path().join("fit.qdmf");
    write(&cfg, &pmm_config(DIPOLE, (2.80, 2.94), None));

    let out = qdm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--stack",
        stack_path.to_str().unwrap(),
        "--truth",
        truth_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = qdm(&[
        "fit",
        stack_path.to_str().unwrap(),
        "--output",
        fit_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    assert!(report.contains("fitted 72 of 72 pixels"), "stdout: {report}");
    assert!(report.contains("0 masked"), "stdout: {report}");
    assert!(report.contains("wall time"), "stdout: {report}");

    let truth = load_field_map(&truth_path).unwrap();
    let fitted = load_field_map(&fit_path).unwrap();
    let worst = truth.components[0]
        .iter()
        .zip(&fitted.components[0])
        .map(|(t, f)| (t - f).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1.0e-9, "worst error {worst:.3e} T");
}

#[test]
fn corrupt_stack_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.qdms");
    let fit_path = dir.path().join("fit.qdmf");
    write(&junk, "not a stack at all");
    let out = qdm(&[
        "fit",
        junk.to_str().unwrap(),
        "--output",
        fit_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));

    // a valid header with a truncated payload is also malformed, not an I/O error
    let cfg = dir.path().join("run.json");
    let good = dir.path().join("good.qdms");
    write(&cfg, &pmm_config("", (2.80, 2.94), None));
    let out = qdm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--stack",
        good.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let bytes = fs::read(&good).unwrap();
    fs::write(&junk, &bytes[..bytes.len() / 2]).unwrap();
    let out = qdm(&[
        "fit",
        junk.to_str().unwrap(),
        "--output",
        fit_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("out");
    for args in [
        vec!["fit", "/nonexistent/x.qdms", "--output"],
        vec!["filter", "/nonexistent/x.qdmf", "--output"],
        vec!["export", "/nonexistent/x.qdmf", "--output"],
    ] {
        let mut args = args;
        args.push(out_path.to_str().unwrap());
        let out = qdm(&args);
        assert_eq!(code(&out), 3, "args {args:?}: {}", stderr(&out));
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    let base = pmm_config("", (2.80, 2.94), None);
    write(&cfg, &base.replacen("\"seed\"", "\"bogus\": 1,\n  \"seed\"", 1));

    let out = qdm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--stack",
        dir.path().join("s.qdms").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown field"), "{}", stderr(&out));
}

#[test]
fn missing_required_argument_is_a_usage_error() {
    let out = qdm(&["fit"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_override_must_be_a_count() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    write(&cfg, &pmm_config("", (2.80, 2.94), None));
    let out = Command::new(env!("CARGO_BIN_EXE_qdm"))
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--stack",
            dir.path().join("s.qdms").to_str().unwrap(),
        ])
        .env("QDM_THREADS", "three")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("QDM_THREADS"), "{}", stderr(&out));
}

#[test]
fn fit_of_featureless_stack_exits_nonconverged() {
    let dir = TempDir::new().unwrap();
    let stack_path = dir.path().join("flat.qdms");
    let fit_path = dir.path().join("fit.qdmf");
    let freqs: Vec<f64> = (0..200).map(|k| 2.80 + 0.14 * k as f64 / 199.0).collect();
    let stack = OdmrStack::new(Mode::Pmm, freqs, vec![1.0; 200 * 6 * 5], 6, 5, 2.4e-6).unwrap();
    save_stack(&stack_path, &stack).unwrap();

    let out = qdm(&[
        "fit",
        stack_path.to_str().unwrap(),
        "--output",
        fit_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stdout(&out).contains("fitted 0 of 30"), "{}", stdout(&out));
    assert!(stderr(&out).contains("masked fraction"), "{}", stderr(&out));

    // the map is still written with every pixel flagged invalid
    let map = load_field_map(&fit_path).unwrap();
    assert!(map.mask.iter().all(|&ok| !ok));
}

#[test]
fn filter_passthrough_when_both_stages_disabled() {
    let dir = TempDir::new().unwrap();
    let in_path = dir.path().join("in.qdmf");
    let out_path = dir.path().join("out.qdmf");
    let mut map = FieldMap::new_scalar(12, 10, 2.4e-6);
    for (px, v) in map.components[0].iter_mut().enumerate() {
        *v = (px as f64 * 0.7).sin() * 1.0e-6;
    }
    save_field_map(&in_path, &map).unwrap();

    let out = qdm(&[
        "filter",
        in_path.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
        "--no-lowpass",
        "--no-highpass",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let round = load_field_map(&out_path).unwrap();
    for (a, b) in map.components[0].iter().zip(&round.components[0]) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // default stages run clean on the same map
    let out = qdm(&[
        "filter",
        in_path.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let filtered = load_field_map(&out_path).unwrap();
    assert_eq!((filtered.m, filtered.n), (12, 10));
}

#[test]
fn decompose_recovers_exact_split() {
    let dir = TempDir::new().unwrap();
    let q = (2.0f64).powi(-40);
    let mut plus = FieldMap::new_scalar(6, 7, 2.4e-6);
    let mut minus = FieldMap::new_scalar(6, 7, 2.4e-6);
    let mut remanent = Vec::new();
    let mut induced = Vec::new();
    for px in 0..42usize {
        let r = (px as f64 - 7.0) * q;
        let i = ((3 * px % 11) as f64 - 5.0) * q;
        remanent.push(r);
        induced.push(i);
        plus.components[0][px] = r + i;
        minus.components[0][px] = r - i;
    }
    let p_path = dir.path().join("p.qdmf");
    let m_path = dir.path().join("m.qdmf");
    let r_path = dir.path().join("r.qdmf");
    let i_path = dir.path().join("i.qdmf");
    save_field_map(&p_path, &plus).unwrap();
    save_field_map(&m_path, &minus).unwrap();

    let out = qdm(&[
        "decompose",
        p_path.to_str().unwrap(),
        m_path.to_str().unwrap(),
        "--remanent",
        r_path.to_str().unwrap(),
        "--induced",
        i_path.to_str().unwrap(),
        "--source-free-margin",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("residual bias"), "{}", stdout(&out));

    let r_map = load_field_map(&r_path).unwrap();
    let i_map = load_field_map(&i_path).unwrap();
    for px in 0..42 {
        assert_eq!(r_map.components[0][px].to_bits(), remanent[px].to_bits());
        assert_eq!(i_map.components[0][px].to_bits(), induced[px].to_bits());
    }
}

#[test]
fn calibrate_reports_slopes_and_verdict() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("cal.csv");
    write(
        &csv,
        "current_mA,measured_field_uT\n-100,-7.11\n-50,-3.55\n0,0.01\n50,3.56\n100,7.10\n",
    );
    let out = qdm(&[
        "calibrate",
        csv.to_str().unwrap(),
        "--radius-mm",
        "15.5",
        "--radius-sigma-mm",
        "0.05",
        "--h0-mm",
        "20.9",
        "--h0-sigma-mm",
        "0.1",
        "--delta-h-mm",
        "0.48",
        "--delta-h-sigma-mm",
        "0.02",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    for needle in ["expected slope", "fitted slope", "normalized", "consistent"] {
        assert!(report.contains(needle), "missing {needle:?} in: {report}");
    }
    // the synthetic curve was drawn at the expected slope
    assert!(report.contains("consistent with the expected slope"), "{report}");
}

#[test]
fn resolution_tabulates_a_decaying_profile() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("profile.csv");
    let out = qdm(&[
        "resolution",
        "--tau",
        "0.5",
        "--beta-s",
        "1.0",
        "--points",
        "7",
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rho,phi_pk");
    assert_eq!(lines.len(), 8);
    let phi: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(phi.windows(2).all(|w| w[1] <= w[0]), "{phi:?}");

    // without --output the table lands on stdout
    let out = qdm(&["resolution", "--tau", "0.5", "--beta-s", "1.0", "--points", "3"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("rho,phi_pk\n"));
}

#[test]
fn export_csv_has_one_row_per_pixel() {
    let dir = TempDir::new().unwrap();
    let map_path = dir.path().join("m.qdmf");
    let csv = dir.path().join("m.csv");
    let mut map = FieldMap::new_scalar(4, 5, 2.4e-6);
    for (px, v) in map.components[0].iter_mut().enumerate() {
        *v = px as f64 * 1.0e-7;
    }
    map.mask_pixel(2, 3);
    save_field_map(&map_path, &map).unwrap();

    let out = qdm(&[
        "export",
        map_path.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 20);
    assert_eq!(lines[0], "0,0,0");
    assert_eq!(lines[13], "2,3,NaN");
    // every valid value survives the decimal round trip bit for bit
    for (px, line) in lines.iter().enumerate() {
        if px == 13 {
            continue;
        }
        let val: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(val.to_bits(), map.components[0][px].to_bits(), "row {px}");
    }
}

#[test]
fn export_pgm_saturates_at_range_edges() {
    let dir = TempDir::new().unwrap();
    let map_path = dir.path().join("m.qdmf");
    let pgm = dir.path().join("m.pgm");
    let mut map = FieldMap::new_scalar(2, 3, 2.4e-6);
    for (px, v) in map.components[0].iter_mut().enumerate() {
        *v = px as f64 * 1.0e-6;
    }
    save_field_map(&map_path, &map).unwrap();

    let out = qdm(&[
        "export",
        map_path.to_str().unwrap(),
        "--output",
        pgm.to_str().unwrap(),
        "--format",
        "pgm",
        "--range",
        "1e-6:4e-6",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = fs::read(&pgm).unwrap();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    // values below the range floor clamp to 0, above the ceiling to 255
    assert_eq!(&bytes[header.len()..], &[0, 0, 85, 170, 255, 255]);
}

#[test]
fn export_rejects_bad_selections() {
    let dir = TempDir::new().unwrap();
    let map_path = dir.path().join("m.qdmf");
    save_field_map(&map_path, &FieldMap::new_scalar(2, 2, 2.4e-6)).unwrap();
    let out_path = dir.path().join("out");

    // scalar maps have no x component
    let out = qdm(&[
        "export",
        map_path.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
        "--component",
        "x",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // inverted range
    let out = qdm(&[
        "export",
        map_path.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
        "--range",
        "5:1",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
