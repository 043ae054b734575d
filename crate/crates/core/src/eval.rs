//! Monte Carlo comparison of selection + precoding pipelines.
//!
//! Every trial draws one channel (seed `base + trial`) and runs every
//! requested method at every SNR on it, so per-trial rates are paired.
//! Timing covers the online stages only: subset choice and precoder design.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::add_channel_noise;
use crate::dataset::{encode_channel, DatasetConfig};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, try_map_indexed};
use crate::linalg::CMatrix;
use crate::nn::{LayerSpec, Model, Real, Tensor4};
use crate::precoder::{
    hybrid_from_rf, optimal_precoder, phase_extraction_precoder, rf_from_target, sic_precoder, spectral_efficiency,
    HybridPrecoder, PartitionSpec,
};
use crate::selection::{
    apply_selection, exhaustive_search, random_subset, subset_count, subset_from_class, AntennaSubset, DEFAULT_BUDGET,
};

const CSI_STREAM: u64 = 0x4353_4931;
const RAS_STREAM: u64 = 0x5241_5331;

pub const CSV_HEADER: &str = "method,snr_db,mean_rate_bps_hz,std_rate,trials,mean_time_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// All receive antennas, unconstrained SVD precoder (upper bound).
    FullArrayOptimal,
    /// Exhaustive search for the subset maximizing the phase-extraction pipeline rate.
    OracleDasPhaseExtraction,
    /// Exhaustive search for the subset maximizing the SIC pipeline rate.
    OracleDasSic,
    CnnDasCnnRf,
    CnnDasSic,
    CnnDasPhaseExtraction,
    RasCnnRf,
    RasSic,
    RasPhaseExtraction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SelectStage {
    All,
    Oracle,
    Cnn,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PrecodeStage {
    Optimal,
    PhaseExtraction,
    Sic,
    CnnRf,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::FullArrayOptimal,
        Method::OracleDasPhaseExtraction,
        Method::OracleDasSic,
        Method::CnnDasCnnRf,
        Method::CnnDasSic,
        Method::CnnDasPhaseExtraction,
        Method::RasCnnRf,
        Method::RasSic,
        Method::RasPhaseExtraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FullArrayOptimal => "full_array_optimal",
            Method::OracleDasPhaseExtraction => "oracle_das_phase_extraction",
            Method::OracleDasSic => "oracle_das_sic",
            Method::CnnDasCnnRf => "cnn_das_cnn_rf",
            Method::CnnDasSic => "cnn_das_sic",
            Method::CnnDasPhaseExtraction => "cnn_das_phase_extraction",
            Method::RasCnnRf => "ras_cnn_rf",
            Method::RasSic => "ras_sic",
            Method::RasPhaseExtraction => "ras_phase_extraction",
        }
    }

    /// Short command-line alias.
    pub fn alias(self) -> &'static str {
        match self {
            Method::FullArrayOptimal => "full",
            Method::OracleDasPhaseExtraction => "oracle-pe",
            Method::OracleDasSic => "oracle-sic",
            Method::CnnDasCnnRf => "cnn",
            Method::CnnDasSic => "sic",
            Method::CnnDasPhaseExtraction => "cnn-pe",
            Method::RasCnnRf => "ras-cnn",
            Method::RasSic => "ras-sic",
            Method::RasPhaseExtraction => "ras-pe",
        }
    }

    fn stages(self) -> (SelectStage, PrecodeStage) {
        use PrecodeStage as P;
        use SelectStage as S;
        match self {
            Method::FullArrayOptimal => (S::All, P::Optimal),
            Method::OracleDasPhaseExtraction => (S::Oracle, P::PhaseExtraction),
            Method::OracleDasSic => (S::Oracle, P::Sic),
            Method::CnnDasCnnRf => (S::Cnn, P::CnnRf),
            Method::CnnDasSic => (S::Cnn, P::Sic),
            Method::CnnDasPhaseExtraction => (S::Cnn, P::PhaseExtraction),
            Method::RasCnnRf => (S::Random, P::CnnRf),
            Method::RasSic => (S::Random, P::Sic),
            Method::RasPhaseExtraction => (S::Random, P::PhaseExtraction),
        }
    }

    pub fn needs_selector(self) -> bool {
        self.stages().0 == SelectStage::Cnn
    }

    pub fn needs_precoder(self) -> bool {
        self.stages().1 == PrecodeStage::CnnRf
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.alias() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_sel: usize,
    pub n_rf: usize,
    pub n_s: usize,
    pub num_paths: usize,
    pub pathloss: f64,
    /// SNR grid in dB (the reporting axis); pipelines receive linear ratios.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Channel-estimate SNR seen by the designers; `None` is perfect CSI.
    pub csi_snr_db: Option<f64>,
    pub budget: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_t: 16,
            n_r: 8,
            n_sel: 4,
            n_rf: 4,
            n_s: 4,
            num_paths: 4,
            pathloss: 1.0,
            snr_db: vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            trials: 100,
            seed: 1_000_000,
            methods: vec![
                Method::FullArrayOptimal,
                Method::OracleDasPhaseExtraction,
                Method::CnnDasCnnRf,
                Method::CnnDasSic,
                Method::RasSic,
            ],
            csi_snr_db: None,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let as_data = DatasetConfig {
            n_t: self.n_t,
            n_r: self.n_r,
            n_sel: self.n_sel,
            n_rf: self.n_rf,
            n_s: self.n_s,
            num_paths: self.num_paths,
            pathloss: self.pathloss,
            ..DatasetConfig::default()
        };
        as_data.validate()?;
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("the SNR grid must be non-empty and finite"));
        }
        if self.trials == 0 || self.methods.is_empty() {
            return Err(Error::config("need at least one trial and one method"));
        }
        if let Some(s) = self.csi_snr_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return Err(Error::config(format!("channel-estimate SNR {s} dB is not usable")));
            }
        }
        Ok(())
    }

    fn sorted_grid(&self) -> Vec<f64> {
        let mut g = self.snr_db.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

/// Trained networks available to the CNN stages.
#[derive(Clone, Debug, Default)]
pub struct Models {
    pub selector: Option<Model>,
    pub precoder: Option<Model>,
}

impl Models {
    /// Checks that every requested CNN stage has a model of the right shape.
    pub fn check(&self, cfg: &EvalConfig) -> Result<()> {
        let classes = subset_count(cfg.n_r, cfg.n_sel)? as usize;
        for &m in &cfg.methods {
            if m.needs_selector() {
                let model = self
                    .selector
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("method {} needs a selection model", m.name())))?;
                check_shape(model, "selection", (cfg.n_r, cfg.n_t, 3), LayerSpec::SoftmaxOutput { classes })?;
            }
            if m.needs_precoder() {
                let model = self
                    .precoder
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("method {} needs a precoder model", m.name())))?;
                check_shape(
                    model,
                    "precoder",
                    (cfg.n_sel, cfg.n_t, 3),
                    LayerSpec::RegressionOutput { dim: 2 * cfg.n_t },
                )?;
            }
        }
        Ok(())
    }
}

fn check_shape(model: &Model, what: &str, input: (usize, usize, usize), output: LayerSpec) -> Result<()> {
    let s = model.spec().input_shape();
    let have = (s.height, s.width, s.channels);
    if have != input || *model.spec().output() != output {
        return Err(Error::config(format!(
            "{what} model maps {}x{}x{} to {:?}, the configuration needs {}x{}x{} to {:?}",
            have.0,
            have.1,
            have.2,
            model.spec().output(),
            input.0,
            input.1,
            input.2,
            output
        )));
    }
    Ok(())
}

/// The channel a pipeline is rated on and what its designers get to see.
#[derive(Clone, Debug)]
pub struct Trial {
    pub h: CMatrix,
    /// Channel estimate used for selection and precoder design.
    pub observed: CMatrix,
    /// Subset used by the random-selection methods.
    pub random: AntennaSubset,
}

impl Trial {
    /// Channel `seed`, plus its estimate and random subset derived from the same seed.
    pub fn draw(cfg: &EvalConfig, seed: u64) -> Result<Trial> {
        let dc = DatasetConfig {
            n_t: cfg.n_t,
            n_r: cfg.n_r,
            num_paths: cfg.num_paths,
            pathloss: cfg.pathloss,
            ..DatasetConfig::default()
        };
        let h = dc.channel_model()?.realize(seed)?.h;
        let observed = match cfg.csi_snr_db {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[CSI_STREAM]));
                add_channel_noise(&h, s, &mut rng)?.h_tilde
            }
            None => h.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[RAS_STREAM]));
        let random = random_subset(cfg.n_r, cfg.n_sel, &mut rng)?;
        Ok(Trial { h, observed, random })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub rate: f64,
    pub elapsed: f64,
    /// Selected antennas (`None` for the full array).
    pub subset: Option<AntennaSubset>,
}

fn encode_for(model: &Model, h: &CMatrix) -> Result<Tensor4> {
    let data: Vec<Real> = encode_channel(h, model.meta.input_scale).into_iter().map(|v| v as Real).collect();
    Tensor4::from_vec([1, h.rows(), h.cols(), 3], data)
}

/// Subset chosen by the selection network for channel estimate `h`.
pub fn cnn_select(model: &Model, h: &CMatrix, n_sel: usize) -> Result<AntennaSubset> {
    let pred = model.predict_class(&encode_for(model, h)?)?;
    subset_from_class(pred[0].class as u64, h.rows(), n_sel)
}

/// Hybrid precoder whose analog stage comes from the regression network.
pub fn cnn_precoder(model: &Model, h_sel: &CMatrix, spec: &PartitionSpec, n_s: usize) -> Result<HybridPrecoder> {
    let out = model.predict_regression(&encode_for(model, h_sel)?)?;
    let target: Vec<f64> = out[0].iter().map(|&v| v as f64).collect();
    let f_rf = rf_from_target(&target, spec)?;
    hybrid_from_rf(h_sel, f_rf, n_s)
}

fn design(
    stage: PrecodeStage,
    h_sel: &CMatrix,
    spec: &PartitionSpec,
    snr: f64,
    n_s: usize,
    models: &Models,
) -> Result<CMatrix> {
    Ok(match stage {
        PrecodeStage::Optimal => optimal_precoder(h_sel, n_s)?.f,
        PrecodeStage::PhaseExtraction => phase_extraction_precoder(h_sel, spec, n_s)?.product(),
        PrecodeStage::Sic => sic_precoder(h_sel, spec, snr, n_s)?.product(),
        PrecodeStage::CnnRf => {
            let model = models.precoder.as_ref().ok_or_else(|| Error::config("no precoder model loaded"))?;
            cnn_precoder(model, h_sel, spec, n_s)?.product()
        }
    })
}

/// Runs one method on one channel at linear `snr`.
pub fn run_pipeline(
    trial: &Trial,
    method: Method,
    snr: f64,
    cfg: &EvalConfig,
    models: &Models,
) -> Result<PipelineOutcome> {
    let spec = PartitionSpec::new(cfg.n_t, cfg.n_rf)?;
    let (select, precode) = method.stages();
    let start = Instant::now();
    let subset = match select {
        SelectStage::All => None,
        SelectStage::Random => Some(trial.random.clone()),
        SelectStage::Cnn => {
            let model = models
                .selector
                .as_ref()
                .ok_or_else(|| Error::config(format!("method {} needs a selection model", method.name())))?;
            Some(cnn_select(model, &trial.observed, cfg.n_sel)?)
        }
        SelectStage::Oracle => {
            let (best, _) = exhaustive_search(cfg.n_r, cfg.n_sel, cfg.budget, |s| {
                let f = design(precode, &apply_selection(&trial.observed, s)?, &spec, snr, cfg.n_s, models)?;
                spectral_efficiency(&apply_selection(&trial.observed, s)?, &f, snr, cfg.n_s)
            })?;
            Some(best)
        }
    };
    let (h_design, h_true) = match &subset {
        Some(s) => (apply_selection(&trial.observed, s)?, apply_selection(&trial.h, s)?),
        None => (trial.observed.clone(), trial.h.clone()),
    };
    let f = design(precode, &h_design, &spec, snr, cfg.n_s, models)?;
    let elapsed = start.elapsed().as_secs_f64();
    let rate = spectral_efficiency(&h_true, &f, snr, cfg.n_s)?;
    Ok(PipelineOutcome { rate, elapsed, subset })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub methods: Vec<Method>,
    /// Ascending.
    pub snr_db: Vec<f64>,
    /// Method-major, then ascending SNR.
    pub cells: Vec<Cell>,
    /// Mean online seconds per channel, per method.
    pub mean_time: Vec<f64>,
    /// `rates[trial][method][snr]`
    pub rates: Vec<Vec<Vec<f64>>>,
}

impl EvalResult {
    pub fn cell(&self, method: Method, snr_db: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.snr_db == snr_db)
    }
}

/// Paired Monte Carlo sweep.
pub fn sweep(cfg: &EvalConfig, models: &Models) -> Result<EvalResult> {
    cfg.validate()?;
    models.check(cfg)?;
    let grid = cfg.sorted_grid();
    let per_trial = try_map_indexed(cfg.trials, |t| {
        let run = || -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
            let trial = Trial::draw(cfg, cfg.seed.wrapping_add(t as u64))?;
            let mut rates = Vec::with_capacity(cfg.methods.len());
            let mut times = Vec::with_capacity(cfg.methods.len());
            for &m in &cfg.methods {
                let mut row = Vec::with_capacity(grid.len());
                let mut time = 0.0;
                for &s in &grid {
                    let out = run_pipeline(&trial, m, 10f64.powf(s / 10.0), cfg, models)?;
                    row.push(out.rate);
                    time += out.elapsed;
                }
                rates.push(row);
                times.push(time);
            }
            Ok((rates, times))
        };
        run().map_err(Error::at("trial", t))
    })?;

    let n = cfg.trials as f64;
    let mut cells = Vec::with_capacity(cfg.methods.len() * grid.len());
    let mut mean_time = Vec::with_capacity(cfg.methods.len());
    for (mi, &m) in cfg.methods.iter().enumerate() {
        for (si, &s) in grid.iter().enumerate() {
            let mut sum = 0.0;
            for (r, _) in &per_trial {
                sum += r[mi][si];
            }
            let mean = sum / n;
            let mut var = 0.0;
            for (r, _) in &per_trial {
                var += (r[mi][si] - mean).powi(2);
            }
            cells.push(Cell { method: m, snr_db: s, mean_rate: mean, std_rate: (var / n).sqrt(), trials: cfg.trials });
        }
        let mut total = 0.0;
        for (_, t) in &per_trial {
            total += t[mi];
        }
        mean_time.push(total / (n * grid.len() as f64));
    }
    Ok(EvalResult {
        methods: cfg.methods.clone(),
        snr_db: grid,
        cells,
        mean_time,
        rates: per_trial.into_iter().map(|(r, _)| r).collect(),
    })
}

/// CSV text: header plus one row per (method, snr).
pub fn csv_string(result: &EvalResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &result.cells {
        let mi = result.methods.iter().position(|&m| m == c.method).unwrap_or(0);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.method.name(),
            c.snr_db,
            c.mean_rate,
            c.std_rate,
            c.trials,
            result.mean_time.get(mi).copied().unwrap_or(0.0)
        );
    }
    out
}

pub fn emit_csv(result: &EvalResult, path: &Path) -> Result<()> {
    fs::write(path, csv_string(result))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub method: Method,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub trials: usize,
    pub mean_time: f64,
}

/// Parses text produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format("missing or unexpected CSV header"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::format(format!("`{s}`: {e}")));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::format(format!("row `{line}` does not have 6 fields")));
            }
            Ok(CsvRow {
                method: f[0].parse().map_err(|_| Error::format(format!("unknown method `{}`", f[0])))?,
                snr_db: num(f[1])?,
                mean_rate: num(f[2])?,
                std_rate: num(f[3])?,
                trials: f[4].parse().map_err(|e| Error::format(format!("`{}`: {e}", f[4])))?,
                mean_time: num(f[5])?,
            })
        })
        .collect()
}
