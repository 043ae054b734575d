//! `hblab`: dataset generation, training, evaluation and timing.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hblab_core::Error;

#[derive(Parser, Debug)]
#[command(name = "hblab", version, about = "Deep antenna selection and hybrid precoding lab")]
struct Cli {
    /// Worker threads for the data-parallel paths (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the selection and precoder training sets.
    GenData(GenDataArgs),
    /// Train the selection (`as`) or analog-precoder (`rf`) network.
    Train(TrainArgs),
    /// Monte Carlo spectral-efficiency sweep.
    Eval(EvalArgs),
    /// Online latency per channel.
    Bench(BenchArgs),
    /// Print the manifest of an HBDS file.
    Manifest { file: PathBuf },
}

/// Array and RF-chain dimensions.
#[derive(Args, Debug, Clone)]
pub struct Dims {
    /// Transmit antennas.
    #[arg(long, default_value_t = 16)]
    pub nt: usize,
    /// Receive antennas.
    #[arg(long, default_value_t = 8)]
    pub nr: usize,
    /// Receive antennas to select.
    #[arg(long, default_value_t = 4)]
    pub nsel: usize,
    /// Transmit RF chains.
    #[arg(long, default_value_t = 4)]
    pub nrf: usize,
    /// Data streams.
    #[arg(long, default_value_t = 4)]
    pub ns: usize,
    /// Propagation paths per channel.
    #[arg(long, default_value_t = 4)]
    pub paths: usize,
    /// Use N_T=144, N_R=16, N_r=8, n_rf=4 (overrides the dimension flags).
    #[arg(long)]
    pub paper_scale: bool,
}

impl Dims {
    pub fn resolved(&self) -> Dims {
        let mut d = self.clone();
        if d.paper_scale {
            d.nt = 144;
            d.nr = 16;
            d.nsel = 8;
            d.nrf = 4;
        }
        d
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub dims: Dims,
    /// Channel realizations.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Noisy copies per realization.
    #[arg(long, default_value_t = 100)]
    pub l: usize,
    /// SNR in dB at which the selection labels are computed.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub label_snr: f64,
    /// SNR in dB of the noisy training copies.
    #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
    pub noise_snr: f64,
    /// Fraction of the data held out for validation.
    #[arg(long, default_value_t = 0.3)]
    pub val_fraction: f64,
    /// Split validation by whole realization or by individual sample.
    #[arg(long, default_value = "realization", value_parser = ["realization", "sample"])]
    pub split: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `as` (antenna selection) or `rf` (analog precoder).
    #[arg(long, value_parser = ["as", "rf"])]
    pub task: String,
    /// HBDS training file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub batch: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Declared transmit antennas; must match the dataset when given.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Declared receive antennas (`as`) or selected antennas (`rf`).
    #[arg(long)]
    pub rows: Option<usize>,
    /// Model output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV (default: next to the model, `.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Comma-separated methods (aliases: full, oracle-pe, oracle-sic, cnn, sic, cnn-pe, ras-cnn, ras-sic, ras-pe).
    #[arg(long, default_value = "full,oracle-pe,cnn,sic,ras-sic")]
    pub methods: String,
    /// SNR grid in dB: `start:step:stop` or a comma list.
    #[arg(long, default_value = "-15:5:10", allow_hyphen_values = true)]
    pub snr: String,
    /// Channel-estimate SNR in dB; perfect CSI when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub csi_snr: Option<f64>,
    /// Selection model (HBNN).
    #[arg(long)]
    pub as_model: Option<PathBuf>,
    /// Analog-precoder model (HBNN).
    #[arg(long)]
    pub rf_model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value = "cnn,sic")]
    pub methods: String,
    /// SNR in dB at which the pipelines run.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub snr: f64,
    /// Selection model; a randomly initialized one is used when omitted.
    #[arg(long)]
    pub as_model: Option<PathBuf>,
    /// Analog-precoder model; a randomly initialized one is used when omitted.
    #[arg(long)]
    pub rf_model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Timing CSV (printed to stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Contract(_) | Error::Budget { .. } => 2,
        Error::NumericFailure { .. } | Error::Overflow { .. } | Error::Diverged { .. } => 3,
        Error::Io(_) | Error::Format(_) => 4,
        Error::At { .. } => unreachable!("root unwraps context"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Manifest { file } => commands::manifest(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
