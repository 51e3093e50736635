//! Subcommand implementations. Each handler maps library errors onto the
//! documented exit-code classes at the point where the failing stage is
//! known: configuration problems are 2, missing or unwritable files 3,
//! violated container invariants 4, non-convergence 5.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use qdm_core::calibration::{fit_calibration, solenoid_slope, SolenoidGeometry, Uncertain};
use qdm_core::io::{load_field_map, load_stack, read_calibration_csv, save_field_map, save_stack};
use qdm_core::map::{
    apply_filters, bias_reversal_decompose, fit_stack, FieldMap, FilterSpec, StackFitOptions,
};
use qdm_core::nv::nv_orientations;
use qdm_core::sim::{peak_shift_profile, sample_field_map, synthesize_stack, ReducedProfileParams, SynthesisOptions};
use qdm_core::spectra::Mode;

use crate::config::RunConfig;
use crate::{CliError, Component, ExportFormat};

/// Post-processing defaults matching the reference pipeline.
const DEFAULT_LOWPASS_FWHM_UM: f64 = 5.0;
const DEFAULT_HIGHPASS_CUTOFF_UM: f64 = 200.0;
const DEFAULT_HIGHPASS_ORDER: usize = 3;

/// Worker pool size: QDM_THREADS wins over the config key; unset means
/// one worker per logical core.
fn init_threads(config_threads: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var("QDM_THREADS") {
        Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
            CliError::config(format!("QDM_THREADS must be a positive integer, got {s:?}"))
        })?),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(config_threads) {
        if n == 0 {
            return Err(CliError::config("thread count must be at least 1"));
        }
        // a second call in the same process keeps the first pool; fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn simulate(config_path: &Path, stack_path: &Path, truth_path: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    init_threads(cfg.threads)?;
    let geom = cfg.geometry.to_sensor()?;
    let sources = cfg.sources()?;
    let bias = cfg.bias();
    let vector = sample_field_map(&sources, &geom, bias).map_err(CliError::config)?;

    let truth = match cfg.mode {
        Mode::Vmm => vector,
        Mode::Pmm => {
            if cfg.pmm_orientation >= 4 {
                return Err(CliError::config(format!(
                    "pmm_orientation {} out of range 0..3",
                    cfg.pmm_orientation
                )));
            }
            let axis = nv_orientations().axis(cfg.pmm_orientation);
            let mut map = FieldMap::new_scalar(geom.m, geom.n, geom.pixel_pitch_m);
            for px in 0..geom.m * geom.n {
                map.components[0][px] = axis.x * vector.components[0][px]
                    + axis.y * vector.components[1][px]
                    + axis.z * vector.components[2][px];
            }
            map
        }
        Mode::Cpmm => {
            let mut map = FieldMap::new_scalar(geom.m, geom.n, geom.pixel_pitch_m);
            map.components[0].copy_from_slice(&vector.components[2]);
            map
        }
    };

    let freqs = cfg.freq_window.axis()?;
    let opts = SynthesisOptions {
        bias_field_t: bias,
        polarization: cfg.polarization,
        seed: cfg.seed,
    };
    let stack = synthesize_stack(&truth, cfg.mode, &cfg.template, cfg.photons_per_pixel, &freqs, &opts)
        .map_err(CliError::config)?;

    save_stack(stack_path, &stack).map_err(|e| CliError::io(format!("{}: {e}", stack_path.display())))?;
    if let Some(p) = truth_path {
        save_field_map(p, &truth).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
    }
    println!(
        "wrote {} ({} x {} px, {} channels, {:?})",
        stack_path.display(),
        stack.m,
        stack.n,
        stack.q(),
        cfg.mode
    );

    if let Some(count) = stack.metadata.get("out_of_window_count") {
        return Err(CliError::config(format!(
            "{count} pixels have resonances outside the sweep window"
        )));
    }
    Ok(())
}

pub fn fit(
    stack_path: &Path,
    output: &Path,
    config_path: Option<&Path>,
    pmm_orientation: Option<usize>,
    max_masked_fraction: f64,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&max_masked_fraction) {
        return Err(CliError::config(format!(
            "--max-masked-fraction {max_masked_fraction} must lie in [0, 1]"
        )));
    }
    let mut opts = StackFitOptions::default();
    let mut threads = None;
    if let Some(cp) = config_path {
        let cfg = RunConfig::load(cp)?;
        threads = cfg.threads;
        opts.pmm_orientation = cfg.pmm_orientation;
        if let Some(lm) = &cfg.lm {
            opts.pixel.lm = lm.apply(opts.pixel.lm);
            opts.vector_lm = lm.apply(opts.vector_lm);
        }
    }
    if let Some(k) = pmm_orientation {
        opts.pmm_orientation = k;
    }
    init_threads(threads)?;

    let stack = load_stack(stack_path).map_err(CliError::from_read)?;
    let t0 = Instant::now();
    let map = fit_stack(&stack, &opts).map_err(CliError::config)?;
    let wall = t0.elapsed();
    save_field_map(output, &map).map_err(|e| CliError::io(format!("{}: {e}", output.display())))?;

    let total = map.m * map.n;
    let masked = map.mask.iter().filter(|&&ok| !ok).count();
    println!(
        "fitted {} of {total} pixels, {masked} masked, wall time {:.2?}",
        total - masked,
        wall
    );

    let fraction = masked as f64 / total as f64;
    if fraction > max_masked_fraction {
        return Err(CliError::numerics(format!(
            "masked fraction {fraction:.3} exceeds the accepted {max_masked_fraction}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn filter(
    map_path: &Path,
    output: &Path,
    lowpass_fwhm_um: Option<f64>,
    highpass_cutoff_um: Option<f64>,
    order: Option<usize>,
    no_lowpass: bool,
    no_highpass: bool,
    config_path: Option<&Path>,
) -> Result<(), CliError> {
    let file_defaults = match config_path {
        Some(cp) => RunConfig::load(cp)?.filter.unwrap_or_default(),
        None => Default::default(),
    };
    let fwhm_um = lowpass_fwhm_um
        .or(file_defaults.lowpass_fwhm_um)
        .unwrap_or(DEFAULT_LOWPASS_FWHM_UM);
    let cutoff_um = highpass_cutoff_um
        .or(file_defaults.highpass_cutoff_um)
        .unwrap_or(DEFAULT_HIGHPASS_CUTOFF_UM);
    let order = order.or(file_defaults.order).unwrap_or(DEFAULT_HIGHPASS_ORDER);

    let spec = FilterSpec {
        lowpass_fwhm_m: (!no_lowpass).then_some(fwhm_um * 1.0e-6),
        highpass_cutoff_m: (!no_highpass).then_some(cutoff_um * 1.0e-6),
        highpass_order: order,
    };
    let map = load_field_map(map_path).map_err(CliError::from_read)?;
    let out = apply_filters(&map, &spec).map_err(CliError::config)?;
    save_field_map(output, &out).map_err(|e| CliError::io(format!("{}: {e}", output.display())))?;
    println!(
        "wrote {} (smoothing {}, background removal {})",
        output.display(),
        if no_lowpass { "off".into() } else { format!("{fwhm_um} um FWHM") },
        if no_highpass { "off".into() } else { format!("{cutoff_um} um cutoff, order {order}") },
    );
    Ok(())
}

pub fn decompose(
    plus_path: &Path,
    minus_path: &Path,
    remanent_out: &Path,
    induced_out: &Path,
    margin: usize,
) -> Result<(), CliError> {
    let plus = load_field_map(plus_path).map_err(CliError::from_read)?;
    let minus = load_field_map(minus_path).map_err(CliError::from_read)?;
    if margin > 0 && (2 * margin >= plus.m || 2 * margin >= plus.n) {
        return Err(CliError::config(format!(
            "--source-free-margin {margin} leaves no interior in a {} x {} map",
            plus.m, plus.n
        )));
    }
    let region: Vec<bool> = (0..plus.m * plus.n)
        .map(|px| {
            let (i, j) = (px / plus.n, px % plus.n);
            margin == 0
                || i < margin
                || j < margin
                || i >= plus.m - margin
                || j >= plus.n - margin
        })
        .collect();
    let dec = bias_reversal_decompose(&plus, &minus, Some(&region)).map_err(CliError::config)?;
    save_field_map(remanent_out, &dec.remanent)
        .map_err(|e| CliError::io(format!("{}: {e}", remanent_out.display())))?;
    save_field_map(induced_out, &dec.induced)
        .map_err(|e| CliError::io(format!("{}: {e}", induced_out.display())))?;

    let labels = ["x", "y", "z"];
    let residual = dec.residual_bias.expect("region was supplied");
    let parts: Vec<String> = residual
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let name = if residual.len() == 1 { "projection" } else { labels[c] };
            format!("{name} {:.4e} T", v)
        })
        .collect();
    println!("residual bias over the source-free region: {}", parts.join(", "));
    Ok(())
}

pub fn calibrate(
    csv_path: &Path,
    radius_mm: [f64; 2],
    h0_mm: [f64; 2],
    delta_h_mm: [f64; 2],
    loops: usize,
) -> Result<(), CliError> {
    let geom = SolenoidGeometry::new(
        Uncertain { value: radius_mm[0] * 1.0e-3, sigma: radius_mm[1] * 1.0e-3 },
        Uncertain { value: h0_mm[0] * 1.0e-3, sigma: h0_mm[1] * 1.0e-3 },
        Uncertain { value: delta_h_mm[0] * 1.0e-3, sigma: delta_h_mm[1] * 1.0e-3 },
        loops,
    )
    .map_err(CliError::config)?;
    let expected = solenoid_slope(&geom);

    let mut file = File::open(csv_path).map_err(|e| CliError::io(format!("{}: {e}", csv_path.display())))?;
    let points = read_calibration_csv(&mut file).map_err(CliError::from_read)?;
    let curve = fit_calibration(&points, expected).map_err(CliError::numerics)?;
    let norm = curve.normalized_slope();

    // nT/mA reads directly off T/A scaled by 1e6
    println!("expected slope : {:.4} +/- {:.4} nT/mA", expected.value * 1.0e6, curve.expected_slope.sigma * 1.0e6);
    println!("fitted slope   : {:.4} +/- {:.4} nT/mA", curve.fit_slope.value * 1.0e6, curve.fit_slope.sigma * 1.0e6);
    println!("intercept      : {:.4} +/- {:.4} uT", curve.fit_intercept.value * 1.0e6, curve.fit_intercept.sigma * 1.0e6);
    println!("residual rms   : {:.4} uT over {} points", curve.residual_rms_t * 1.0e6, curve.points.len());
    println!("normalized     : {:.5} +/- {:.5}", norm.value, norm.sigma);
    println!(
        "verdict        : {}",
        if curve.consistent_with_expected(2.0) {
            "consistent with the expected slope within 2 sigma"
        } else {
            "NOT consistent with the expected slope at 2 sigma"
        }
    );
    Ok(())
}

pub fn resolution(
    tau: f64,
    beta_s: f64,
    rho_max: f64,
    points: usize,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let params = ReducedProfileParams::new(tau, beta_s).map_err(CliError::config)?;
    if !(rho_max.is_finite() && rho_max > 0.0) {
        return Err(CliError::config(format!("--rho-max {rho_max} must be positive")));
    }
    if points < 2 {
        return Err(CliError::config(format!("--points {points} must be at least 2")));
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| rho_max * i as f64 / (points - 1) as f64)
        .collect();
    let profile = peak_shift_profile(&grid, &params);

    let mut text = String::from("rho,phi_pk\n");
    for (rho, phi) in grid.iter().zip(&profile) {
        text.push_str(&format!("{rho},{phi}\n"));
    }
    match output {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_range(spec: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::config(format!("--range {spec:?} must be lo:hi in tesla with lo < hi"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub fn export(
    map_path: &Path,
    output: &Path,
    format: ExportFormat,
    component: Component,
    range: Option<&str>,
) -> Result<(), CliError> {
    let map = load_field_map(map_path).map_err(CliError::from_read)?;
    let plane = match (map.components.len(), component) {
        (1, Component::Z) => &map.components[0],
        (1, _) => {
            return Err(CliError::config(
                "projection maps carry a single scalar; only --component z applies",
            ))
        }
        (_, Component::X) => &map.components[0],
        (_, Component::Y) => &map.components[1],
        (_, Component::Z) => &map.components[2],
    };
    let range = range.map(parse_range).transpose()?;

    let file = File::create(output).map_err(|e| CliError::io(format!("{}: {e}", output.display())))?;
    let mut w = BufWriter::new(file);
    let write_err = |e: std::io::Error| CliError::io(format!("{}: {e}", output.display()));
    match format {
        ExportFormat::Csv => {
            // one row per pixel, row-major, no header
            for i in 0..map.m {
                for j in 0..map.n {
                    writeln!(w, "{},{},{}", i, j, plane[i * map.n + j]).map_err(write_err)?;
                }
            }
        }
        ExportFormat::Pgm => {
            let (lo, hi) = match range {
                Some(r) => r,
                None => {
                    let valid = plane.iter().zip(&map.mask).filter(|&(_, &ok)| ok);
                    valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
                        (lo.min(v), hi.max(v))
                    })
                }
            };
            write!(w, "P5\n{} {}\n255\n", map.n, map.m).map_err(write_err)?;
            let bytes: Vec<u8> = (0..map.m * map.n)
                .map(|px| {
                    let v = plane[px];
                    if !map.mask[px] || !v.is_finite() || hi <= lo {
                        0
                    } else {
                        // saturating, never wrapping
                        (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
                    }
                })
                .collect();
            w.write_all(&bytes).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)?;
    Ok(())
}
