//! `qdm` command-line tool: simulate, invert, filter, and export widefield
//! NV magnetometry data.
//!
//! Exit codes are a stable contract: 0 success, 2 bad configuration or
//! flags, 3 I/O failure, 4 corrupt input file, 5 numerical non-convergence
//! above the accepted threshold.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl ToString) -> Self {
        CliError { code: 2, message: message.to_string() }
    }

    pub fn io(message: impl ToString) -> Self {
        CliError { code: 3, message: message.to_string() }
    }

    pub fn format(message: impl ToString) -> Self {
        CliError { code: 4, message: message.to_string() }
    }

    pub fn numerics(message: impl ToString) -> Self {
        CliError { code: 5, message: message.to_string() }
    }

    /// For errors raised while reading an input container: missing or
    /// unreadable file is I/O, anything else is a violated format invariant.
    pub fn from_read(err: qdm_core::error::Error) -> Self {
        match err {
            qdm_core::error::Error::Io(e) => CliError::io(e),
            other => CliError::format(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qdm", version, about = "Widefield NV magnetometry simulation and inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Csv,
    Pgm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Component {
    Z,
    X,
    Y,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic ODMR stack and the exact forward field map it
    /// was generated from.
    Simulate {
        /// JSON job description; unknown keys are rejected
        #[arg(long)]
        config: PathBuf,
        /// Destination for the rendered stack
        #[arg(long)]
        stack: PathBuf,
        /// Optional destination for the ground-truth field map
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit a stored stack pixel by pixel and write the field map.
    Fit {
        /// Input stack
        stack: PathBuf,
        /// Destination for the fitted field map
        #[arg(long)]
        output: PathBuf,
        /// Optional job config supplying solver overrides and the
        /// projection orientation
        #[arg(long)]
        config: Option<PathBuf>,
        /// Orientation measured by a projection stack (0..3); overrides
        /// the config
        #[arg(long)]
        pmm_orientation: Option<usize>,
        /// Fraction of masked pixels above which the run is reported as
        /// non-converged (exit code 5)
        #[arg(long, default_value_t = 0.5)]
        max_masked_fraction: f64,
    },
    /// Smooth and background-subtract a field map.
    Filter {
        /// Input field map
        map: PathBuf,
        /// Destination for the filtered map
        #[arg(long)]
        output: PathBuf,
        /// Gaussian smoothing width, micrometers [default: 5]
        #[arg(long)]
        lowpass_fwhm_um: Option<f64>,
        /// Butterworth background cutoff wavelength, micrometers
        /// [default: 200]
        #[arg(long)]
        highpass_cutoff_um: Option<f64>,
        /// Butterworth order [default: 3]
        #[arg(long)]
        order: Option<usize>,
        /// Skip the smoothing stage
        #[arg(long)]
        no_lowpass: bool,
        /// Skip the background-removal stage
        #[arg(long)]
        no_highpass: bool,
        /// Optional job config supplying filter defaults
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split maps taken under opposed bias fields into remanent and
    /// induced parts and report the residual bias.
    Decompose {
        /// Map acquired under the forward bias
        plus: PathBuf,
        /// Map acquired under the reversed bias
        minus: PathBuf,
        /// Destination for the remanent (bias-surviving) map
        #[arg(long)]
        remanent: PathBuf,
        /// Destination for the induced (bias-tracking) map
        #[arg(long)]
        induced: PathBuf,
        /// Border width, pixels, treated as source-free for the residual
        /// bias estimate; 0 uses the whole map
        #[arg(long, default_value_t = 0)]
        source_free_margin: usize,
    },
    /// Check a measured coil calibration curve against the field expected
    /// from the coil geometry.
    Calibrate {
        /// CSV with current_mA,measured_field_uT columns
        csv: PathBuf,
        /// Loop radius, millimeters [reference rig: 15.5]
        #[arg(long)]
        radius_mm: f64,
        /// Loop radius uncertainty, millimeters [reference rig: 0.05]
        #[arg(long, default_value_t = 0.0)]
        radius_sigma_mm: f64,
        /// Distance from the first loop to the sensor, millimeters
        /// [reference rig: 20.9]
        #[arg(long)]
        h0_mm: f64,
        /// Uncertainty on that distance, millimeters [reference rig: 0.1]
        #[arg(long, default_value_t = 0.0)]
        h0_sigma_mm: f64,
        /// Spacing between adjacent loops, millimeters [reference rig: 0.48]
        #[arg(long)]
        delta_h_mm: f64,
        /// Uncertainty on the spacing, millimeters [reference rig: 0.02]
        #[arg(long, default_value_t = 0.0)]
        delta_h_sigma_mm: f64,
        /// Number of loops [reference rig: 10]
        #[arg(long, default_value_t = 10)]
        loops: usize,
    },
    /// Tabulate the apparent peak shift against lateral distance for a
    /// buried source under a thick sensing layer.
    Resolution {
        /// Layer thickness over standoff
        #[arg(long)]
        tau: f64,
        /// Source strength in half-linewidth units at unit depth
        #[arg(long)]
        beta_s: f64,
        /// Largest lateral distance, in standoffs [default: 5]
        #[arg(long, default_value_t = 5.0)]
        rho_max: f64,
        /// Number of grid points [default: 101]
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Destination CSV; stdout when omitted
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump one component of a field map as CSV or an 8-bit PGM image.
    Export {
        /// Input field map
        map: PathBuf,
        /// Destination file
        #[arg(long)]
        output: PathBuf,
        /// Output encoding
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
        /// Field component; projection maps carry only their measured
        /// scalar, exported as z
        #[arg(long, value_enum, default_value_t = Component::Z)]
        component: Component,
        /// Display range lo:hi in tesla; values outside saturate.
        /// Defaults to the data range
        #[arg(long)]
        range: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, stack, truth } => {
            commands::simulate(&config, &stack, truth.as_deref())
        }
        Command::Fit { stack, output, config, pmm_orientation, max_masked_fraction } => {
            commands::fit(&stack, &output, config.as_deref(), pmm_orientation, max_masked_fraction)
        }
        Command::Filter {
            map,
            output,
            lowpass_fwhm_um,
            highpass_cutoff_um,
            order,
            no_lowpass,
            no_highpass,
            config,
        } => commands::filter(
            &map,
            &output,
            lowpass_fwhm_um,
            highpass_cutoff_um,
            order,
            no_lowpass,
            no_highpass,
            config.as_deref(),
        ),
        Command::Decompose { plus, minus, remanent, induced, source_free_margin } => {
            commands::decompose(&plus, &minus, &remanent, &induced, source_free_margin)
        }
        Command::Calibrate {
            csv,
            radius_mm,
            radius_sigma_mm,
            h0_mm,
            h0_sigma_mm,
            delta_h_mm,
            delta_h_sigma_mm,
            loops,
        } => commands::calibrate(
            &csv,
            [radius_mm, radius_sigma_mm],
            [h0_mm, h0_sigma_mm],
            [delta_h_mm, delta_h_sigma_mm],
            loops,
        ),
        Command::Resolution { tau, beta_s, rho_max, points, output } => {
            commands::resolution(tau, beta_s, rho_max, points, output.as_deref())
        }
        Command::Export { map, output, format, component, range } => {
            commands::export(&map, &output, format, component, range.as_deref())
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
