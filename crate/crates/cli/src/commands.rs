use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hblab_core::dataset::{generate, Dataset, DatasetConfig, SplitMode, Task};
use hblab_core::eval::{csv_string, run_pipeline, sweep, EvalConfig, EvalResult, Method, Models, Trial};
use hblab_core::nn::{load_model, model_to_bytes, train as train_model, EpochStats, Model, NetworkSpec, TrainConfig};
use hblab_core::selection::{exhaustive_best_subset_with_budget, subset_count, DEFAULT_BUDGET};
use hblab_core::{Error, Result};

use crate::grid::{parse_grid, parse_methods};
use crate::{BenchArgs, Dims, EvalArgs, GenDataArgs, TrainArgs};

/// Channel seeds for eval and bench start here so they never overlap the
/// realizations of a dataset generated from the same base seed.
const EVAL_SEED_OFFSET: u64 = 1_000_000;

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(())
}

/// Explicit flag, else `HBLAB_SEED`, else 0.
fn base_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("HBLAB_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("HBLAB_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn channel_seed(flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(base_seed(None)?.wrapping_add(EVAL_SEED_OFFSET)),
    }
}

/// Files written by a command; removed again unless the command commits.
struct Outputs {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new() -> Self {
        Outputs { paths: Vec::new(), committed: false }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.paths.push(path.to_path_buf());
        fs::write(path, bytes).map_err(|e| io_error(path, e))
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Dataset::from_bytes(&bytes)
}

fn read_model(path: &Path) -> Result<Model> {
    load_model(path).map_err(|e| match e {
        Error::Io(io) => io_error(path, io),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let d = a.dims.resolved();
    let cfg = DatasetConfig {
        n_t: d.nt,
        n_r: d.nr,
        n_sel: d.nsel,
        n_rf: d.nrf,
        n_s: d.ns,
        num_paths: d.paths,
        label_snr_db: a.label_snr,
        noise_snr_db: a.noise_snr,
        realizations: a.n,
        copies: a.l,
        seed: base_seed(a.seed)?,
        validation_fraction: a.val_fraction,
        split: if a.split == "sample" { SplitMode::BySample } else { SplitMode::ByRealization },
        ..DatasetConfig::default()
    };
    cfg.validate()?;
    let (sel, pre) = generate(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let mut out = Outputs::new();
    for (name, ds) in [("sel", &sel), ("rf", &pre)] {
        out.write(&a.out.join(format!("{name}.hbds")), &ds.to_bytes())?;
        let mut text = ds.manifest.to_text();
        text.push('\n');
        out.write(&a.out.join(format!("{name}.manifest.json")), text.as_bytes())?;
    }
    out.commit();
    println!("wrote {} selection and {} precoder samples to {}", sel.len(), pre.len(), a.out.display());
    Ok(())
}

pub fn manifest(path: &Path) -> Result<()> {
    println!("{}", read_dataset(path)?.manifest.to_text());
    Ok(())
}

fn network_for(ds: &Dataset, task: &str, nt: Option<usize>, rows: Option<usize>) -> Result<NetworkSpec> {
    let m = &ds.manifest;
    let expected = if task == "as" { Task::Selection } else { Task::Precoder };
    if m.task != expected {
        return Err(Error::Config(format!(
            "--task {task} needs a {expected:?} dataset, the file holds {:?} data",
            m.task
        )));
    }
    let [h, w, _] = m.input_dims;
    let declared = (rows.unwrap_or(h), nt.unwrap_or(w));
    if declared != (h, w) {
        return Err(Error::Config(format!(
            "declared dims {}x{} do not match the dataset inputs {h}x{w}",
            declared.0, declared.1
        )));
    }
    match m.task {
        Task::Selection => NetworkSpec::selection_classifier(h, w, m.output_len),
        Task::Precoder => {
            if m.output_len != 2 * w {
                return Err(Error::Config(format!(
                    "precoder targets of length {} for {w} transmit antennas",
                    m.output_len
                )));
            }
            NetworkSpec::precoder_regressor(h, w)
        }
    }
}

fn loss_csv(history: &[EpochStats]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in history {
        let _ = writeln!(s, "{},{},{},{}", e.epoch + 1, e.train_loss, opt(e.val_loss), opt(e.val_accuracy));
    }
    s
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let spec = network_for(&ds, &a.task, a.nt, a.rows)?;
    let cfg = TrainConfig { epochs: a.epochs, batch_size: a.batch, learning_rate: a.lr, seed: base_seed(a.seed)? };
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("--batch and --lr must be positive".into()));
    }
    let (tr, va) = ds.split()?;
    let mut model = Model::new(spec, cfg.seed)?;
    model.meta.input_scale = ds.manifest.input_scale;
    eprintln!("training {} parameters on {} samples ({} validation)", model.param_count(), tr.len(), va.len());
    let started = Instant::now();
    let history = train_model(&mut model, &tr, Some(&va), &cfg)?;
    if let Some(last) = history.last() {
        eprintln!(
            "epoch {}: train loss {:.6}, validation loss {:.6}{} ({:.1} s)",
            last.epoch + 1,
            last.train_loss,
            last.val_loss.unwrap_or(f64::NAN),
            last.val_accuracy.map(|x| format!(", accuracy {x:.4}")).unwrap_or_default(),
            started.elapsed().as_secs_f64()
        );
    }
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut out = Outputs::new();
    out.write(&a.out, &model_to_bytes(&model)?)?;
    out.write(&csv_path, loss_csv(&history).as_bytes())?;
    out.commit();
    Ok(())
}

fn eval_config(d: &Dims, methods: Vec<Method>, snr_db: Vec<f64>, trials: usize, seed: u64) -> EvalConfig {
    EvalConfig {
        n_t: d.nt,
        n_r: d.nr,
        n_sel: d.nsel,
        n_rf: d.nrf,
        n_s: d.ns,
        num_paths: d.paths,
        snr_db,
        trials,
        seed,
        methods,
        ..EvalConfig::default()
    }
}

fn load_models(as_model: Option<&Path>, rf_model: Option<&Path>) -> Result<Models> {
    Ok(Models { selector: as_model.map(read_model).transpose()?, precoder: rf_model.map(read_model).transpose()? })
}

fn summary(result: &EvalResult) -> String {
    let width = result.methods.iter().map(|m| m.name().len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:>8}", "snr_db");
    for m in &result.methods {
        let _ = write!(s, "  {:>width$}", m.name());
    }
    s.push('\n');
    for &snr in &result.snr_db {
        let _ = write!(s, "{snr:>8}");
        for &m in &result.methods {
            let rate = result.cell(m, snr).map_or(f64::NAN, |c| c.mean_rate);
            let _ = write!(s, "  {rate:>width$.4}");
        }
        s.push('\n');
    }
    s.push('\n');
    for &snr in &result.snr_db {
        let mut order: Vec<_> = result.methods.iter().filter_map(|&m| result.cell(m, snr)).collect();
        order.sort_by(|a, b| b.mean_rate.total_cmp(&a.mean_rate));
        let names: Vec<_> = order.iter().map(|c| c.method.name()).collect();
        let _ = writeln!(s, "{snr} dB: {}", names.join(" > "));
    }
    s
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let d = a.dims.resolved();
    let mut cfg = eval_config(&d, parse_methods(&a.methods)?, parse_grid(&a.snr)?, a.trials, channel_seed(a.seed)?);
    cfg.csi_snr_db = a.csi_snr;
    cfg.validate()?;
    let models = load_models(a.as_model.as_deref(), a.rf_model.as_deref())?;
    models.check(&cfg)?;
    let result = sweep(&cfg, &models)?;
    let mut out = Outputs::new();
    out.write(&a.out, csv_string(&result).as_bytes())?;
    out.commit();
    print!("{}", summary(&result));
    Ok(())
}

struct Timing {
    name: String,
    times: Vec<f64>,
}

impl Timing {
    fn mean(&self) -> f64 {
        self.times.iter().sum::<f64>() / self.times.len() as f64
    }

    fn median(&self) -> f64 {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            (t[n / 2 - 1] + t[n / 2]) / 2.0
        }
    }
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let d = a.dims.resolved();
    let methods = parse_methods(&a.methods)?;
    let seed = channel_seed(a.seed)?;
    let cfg = eval_config(&d, methods.clone(), vec![a.snr], a.trials, seed);
    cfg.validate()?;
    let mut models = load_models(a.as_model.as_deref(), a.rf_model.as_deref())?;
    let init_seed = base_seed(a.seed)?;
    if models.selector.is_none() && methods.iter().any(|m| m.needs_selector()) {
        eprintln!("no selection model given; timing a randomly initialized one");
        let classes = subset_count(d.nr, d.nsel)? as usize;
        models.selector = Some(Model::new(NetworkSpec::selection_classifier(d.nr, d.nt, classes)?, init_seed)?);
    }
    if models.precoder.is_none() && methods.iter().any(|m| m.needs_precoder()) {
        eprintln!("no precoder model given; timing a randomly initialized one");
        models.precoder = Some(Model::new(NetworkSpec::precoder_regressor(d.nsel, d.nt)?, init_seed.wrapping_add(1))?);
    }
    models.check(&cfg)?;

    let snr = 10f64.powf(a.snr / 10.0);
    let trials = (0..a.trials)
        .map(|t| Trial::draw(&cfg, seed.wrapping_add(t as u64)).map_err(Error::at("trial", t)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &m in &methods {
        // One untimed run pages in the model weights.
        run_pipeline(&trials[0], m, snr, &cfg, &models)?;
        let mut times = Vec::with_capacity(trials.len());
        for (t, trial) in trials.iter().enumerate() {
            times.push(run_pipeline(trial, m, snr, &cfg, &models).map_err(Error::at("trial", t))?.elapsed);
        }
        rows.push(Timing { name: m.name().to_string(), times });
    }
    if subset_count(d.nr, d.nsel)? <= DEFAULT_BUDGET {
        let mut times = Vec::with_capacity(trials.len());
        for trial in &trials {
            let start = Instant::now();
            exhaustive_best_subset_with_budget(&trial.observed, d.nsel, snr, d.ns, DEFAULT_BUDGET)?;
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(Timing { name: "exhaustive_selection".into(), times });
    }

    let mut csv = String::from("method,n_t,n_r,n_sel,trials,mean_time_s,median_time_s\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", r.name, d.nt, d.nr, d.nsel, r.times.len(), r.mean(), r.median());
    }
    match &a.out {
        Some(path) => {
            let mut out = Outputs::new();
            out.write(path, csv.as_bytes())?;
            out.commit();
            for r in &rows {
                println!("{:<24} mean {:>10.3} ms  median {:>10.3} ms", r.name, r.mean() * 1e3, r.median() * 1e3);
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}
