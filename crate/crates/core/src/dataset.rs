//! Training data for the selection classifier and the analog-precoder
//! regressor, and the HBDS container they are stored in.
//!
//! Each of the `N` channel realizations is labeled on the clean channel and
//! then observed `L` times through additive noise. Sample `i` comes from
//! realization `i / L`, noisy copy `i % L`. Inputs are NHWC with three
//! channels `(|h̃|, Re h̃, Im h̃)`, divided by the largest `|h̃|` in the file.
//!
//! HBDS layout (little endian):
//!
//! ```text
//! "HBDS"  u32 version  u32 manifest_len  manifest (JSON text)
//! per sample: f32 input tensor, then a u32 class or f64 target vector
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{add_channel_noise, ChannelModel};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, try_map_indexed};
use crate::linalg::CMatrix;
use crate::nn::{Examples, Real, Targets, Tensor4};
use crate::precoder::{optimal_precoder, phase_extraction_rf, rf_to_target, PartitionSpec};
use crate::selection::{apply_selection, exhaustive_best_subset_with_budget, subset_count, DEFAULT_BUDGET};

pub const MAGIC: &[u8; 4] = b"HBDS";
pub const VERSION: u32 = 1;

const NOISE_STREAM: u64 = 0x4e4f_4953;
const SPLIT_STREAM: u64 = 0x5350_4c54;
const MAX_MANIFEST: usize = 64 << 20;

/// How samples are assigned to the validation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Whole realizations (all `L` noisy copies together).
    ByRealization,
    /// Individual samples; noisy siblings of a training channel can land in
    /// validation.
    BySample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Selection,
    Precoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_sel: usize,
    pub n_rf: usize,
    pub n_s: usize,
    pub num_paths: usize,
    pub pathloss: f64,
    /// SNR at which subsets are ranked for the selection label.
    pub label_snr_db: f64,
    /// SNR of the noisy training observations.
    pub noise_snr_db: f64,
    pub realizations: usize,
    pub copies: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub split: SplitMode,
    pub budget: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_t: 16,
            n_r: 8,
            n_sel: 4,
            n_rf: 4,
            n_s: 4,
            num_paths: 4,
            pathloss: 1.0,
            label_snr_db: 0.0,
            noise_snr_db: 15.0,
            realizations: 100,
            copies: 100,
            seed: 0,
            validation_fraction: 0.3,
            split: SplitMode::ByRealization,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        PartitionSpec::new(self.n_t, self.n_rf)?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sel == 0 || self.n_sel > self.n_r {
            return bad(format!("cannot select {} of {} receive antennas", self.n_sel, self.n_r));
        }
        if self.n_rf > self.n_sel {
            return bad(format!(
                "{} RF chains need at least as many selected antennas (got {})",
                self.n_rf, self.n_sel
            ));
        }
        if self.n_s == 0 || self.n_s > self.n_rf {
            return bad(format!("{} streams with {} RF chains", self.n_s, self.n_rf));
        }
        if self.num_paths == 0 || !(self.pathloss > 0.0) || !self.pathloss.is_finite() {
            return bad("need at least one path and a positive pathloss".into());
        }
        if !self.label_snr_db.is_finite() || self.noise_snr_db.is_nan() || self.noise_snr_db == f64::NEG_INFINITY {
            return bad("label SNR must be finite and noise SNR a number or +inf".into());
        }
        if self.realizations == 0 || self.copies == 0 {
            return bad("need at least one realization and one noisy copy".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        let count = subset_count(self.n_r, self.n_sel)?;
        if count > u32::MAX as u64 {
            return bad(format!("{count} classes do not fit a 32-bit label"));
        }
        Ok(())
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        let mut model = ChannelModel::new(self.n_t, self.n_r)?;
        model.num_paths = self.num_paths;
        model.pathloss = self.pathloss;
        Ok(model)
    }

    pub fn samples(&self) -> usize {
        self.realizations * self.copies
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: String,
    pub task: Task,
    pub config: DatasetConfig,
    pub samples: usize,
    /// `[height, width, channels]` of one input.
    pub input_dims: [usize; 3],
    /// Number of classes, or the regression target length.
    pub output_len: usize,
    /// Divisor applied to the raw channel entries.
    pub input_scale: f64,
    /// Validation realizations (by-realization split) or validation samples
    /// (by-sample split), ascending.
    pub validation: Vec<usize>,
}

impl DatasetManifest {
    /// Canonical text form (pretty JSON, fixed field order).
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes(Vec<u32>),
    Targets(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// NHWC inputs, `samples · h · w · 3` values.
    pub inputs: Vec<f32>,
    pub labels: Labels,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.manifest.input_dims.iter().product::<usize>();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Realization that produced sample `i`.
    pub fn realization_of(&self, i: usize) -> usize {
        i / self.manifest.config.copies
    }

    /// Sample indices of the (train, validation) partition recorded in the manifest.
    pub fn split_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let mut is_val = vec![false; n];
        match self.manifest.config.split {
            SplitMode::ByRealization => {
                let l = self.manifest.config.copies;
                for &r in &self.manifest.validation {
                    is_val[r * l..(r + 1) * l].iter_mut().for_each(|v| *v = true);
                }
            }
            SplitMode::BySample => {
                for &i in &self.manifest.validation {
                    is_val[i] = true;
                }
            }
        }
        (0..n).partition(|&i| !is_val[i])
    }

    /// Converts the given samples to engine tensors.
    pub fn examples(&self, idx: &[usize]) -> Result<Examples> {
        let [h, w, c] = self.manifest.input_dims;
        let data: Vec<Real> = idx.iter().flat_map(|&i| self.input(i).iter().map(|&v| v as Real)).collect();
        let inputs = Tensor4::from_vec([idx.len(), h, w, c], data)?;
        let targets = match &self.labels {
            Labels::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => {
                let d = self.manifest.output_len;
                Targets::Values {
                    dim: d,
                    data: idx.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().map(|&v| v as Real)).collect(),
                }
            }
        };
        Examples::new(inputs, targets)
    }

    /// (train, validation) examples per the recorded split.
    pub fn split(&self) -> Result<(Examples, Examples)> {
        let (tr, va) = self.split_indices();
        Ok((self.examples(&tr)?, self.examples(&va)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.manifest.to_text();
        let mut out = Vec::with_capacity(12 + text.len() + self.inputs.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for i in 0..self.len() {
            for v in self.input(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            match &self.labels {
                Labels::Classes(c) => out.extend_from_slice(&c[i].to_le_bytes()),
                Labels::Targets(t) => {
                    let d = self.manifest.output_len;
                    for v in &t[i * d..(i + 1) * d] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format("not an HBDS dataset file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(format!("unsupported HBDS version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if len > MAX_MANIFEST || bytes.len() < 12 + len {
            return Err(Error::format("truncated manifest"));
        }
        let manifest: DatasetManifest =
            serde_json::from_slice(&bytes[12..12 + len]).map_err(|e| Error::format(format!("manifest: {e}")))?;
        check_manifest(&manifest)?;
        let per_input: usize = manifest.input_dims.iter().product();
        let per_label = match manifest.task {
            Task::Selection => 4,
            Task::Precoder => 8 * manifest.output_len,
        };
        let record = per_input * 4 + per_label;
        let payload = &bytes[12 + len..];
        if payload.len() != record * manifest.samples {
            return Err(Error::format(format!(
                "payload is {} bytes, manifest promises {} samples of {record} bytes",
                payload.len(),
                manifest.samples
            )));
        }
        let mut inputs = Vec::with_capacity(per_input * manifest.samples);
        let mut classes = Vec::new();
        let mut targets = Vec::new();
        for rec in payload.chunks_exact(record) {
            let (x, y) = rec.split_at(per_input * 4);
            inputs.extend(x.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))));
            match manifest.task {
                Task::Selection => classes.push(u32::from_le_bytes(y.try_into().expect("4 bytes"))),
                Task::Precoder => {
                    targets.extend(y.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                }
            }
        }
        let labels = match manifest.task {
            Task::Selection => {
                if classes.iter().any(|&c| c as usize >= manifest.output_len) {
                    return Err(Error::format("class label out of range"));
                }
                Labels::Classes(classes)
            }
            Task::Precoder => Labels::Targets(targets),
        };
        Ok(Dataset { manifest, inputs, labels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}

fn check_manifest(m: &DatasetManifest) -> Result<()> {
    let c = &m.config;
    let ok = c.copies > 0
        && m.samples == c.realizations * c.copies
        && m.input_dims[2] == 3
        && m.input_dims[1] == c.n_t
        && m.output_len > 0
        && match m.task {
            Task::Selection => m.input_dims[0] == c.n_r,
            Task::Precoder => m.input_dims[0] == c.n_sel && m.output_len == 2 * c.n_t,
        }
        && match c.split {
            SplitMode::ByRealization => m.validation.iter().all(|&r| r < c.realizations),
            SplitMode::BySample => m.validation.iter().all(|&i| i < m.samples),
        };
    if ok {
        Ok(())
    } else {
        Err(Error::format("manifest is inconsistent with its configuration"))
    }
}

/// Three-channel encoding `(|h|, Re h, Im h) / scale`, NHWC for one sample.
pub fn encode_channel(h: &CMatrix, scale: f64) -> Vec<f32> {
    let mut out = Vec::with_capacity(h.rows() * h.cols() * 3);
    for z in h.as_slice() {
        out.push((z.norm() / scale) as f32);
        out.push((z.re / scale) as f32);
        out.push((z.im / scale) as f32);
    }
    out
}

/// Validation members for `count` items: a seeded shuffle, first
/// `round(fraction · count)` taken, returned ascending.
pub fn split_members(count: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SPLIT_STREAM])));
    let take = ((count as f64) * fraction).round() as usize;
    let mut val = order[..take.min(count)].to_vec();
    val.sort_unstable();
    val
}

struct Realization {
    class: u32,
    target: Vec<f64>,
    noisy: Vec<CMatrix>,
    selected: Vec<CMatrix>,
}

/// Generates the (selection, precoder) dataset pair.
pub fn generate(cfg: &DatasetConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let model = cfg.channel_model()?;
    let spec = PartitionSpec::new(cfg.n_t, cfg.n_rf)?;
    let classes = subset_count(cfg.n_r, cfg.n_sel)? as usize;
    let label_snr = 10f64.powf(cfg.label_snr_db / 10.0);

    let reals = try_map_indexed(cfg.realizations, |n| -> Result<Realization> {
        let run = || -> Result<Realization> {
            let h = model.realize(cfg.seed.wrapping_add(n as u64))?.h;
            let (subset, _) = exhaustive_best_subset_with_budget(&h, cfg.n_sel, label_snr, cfg.n_s, cfg.budget)?;
            let h_sel = apply_selection(&h, &subset)?;
            let f_opt = optimal_precoder(&h_sel, cfg.n_rf)?;
            let target = rf_to_target(&phase_extraction_rf(&f_opt.f, &spec)?, &spec);
            let mut noisy = Vec::with_capacity(cfg.copies);
            let mut selected = Vec::with_capacity(cfg.copies);
            for l in 0..cfg.copies {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[NOISE_STREAM, n as u64, l as u64]));
                let h_tilde = add_channel_noise(&h, cfg.noise_snr_db, &mut rng)?.h_tilde;
                selected.push(apply_selection(&h_tilde, &subset)?);
                noisy.push(h_tilde);
            }
            Ok(Realization { class: subset.class_index() as u32, target, noisy, selected })
        };
        run().map_err(Error::at("realization", n))
    })?;

    let validation = match cfg.split {
        SplitMode::ByRealization => split_members(cfg.realizations, cfg.validation_fraction, cfg.seed),
        SplitMode::BySample => split_members(cfg.samples(), cfg.validation_fraction, cfg.seed),
    };
    let max_abs = |pick: &dyn Fn(&Realization) -> &Vec<CMatrix>| {
        reals.iter().flat_map(|r| pick(r).iter().map(CMatrix::max_abs)).fold(0.0f64, f64::max)
    };
    let scale_of = |m: f64| if m > 0.0 { m } else { 1.0 };
    let sel_scale = scale_of(max_abs(&|r| &r.noisy));
    let pre_scale = scale_of(max_abs(&|r| &r.selected));

    let manifest = |task, input_dims, output_len, input_scale| DatasetManifest {
        generator: concat!("hblab-core ", env!("CARGO_PKG_VERSION")).to_string(),
        task,
        config: cfg.clone(),
        samples: cfg.samples(),
        input_dims,
        output_len,
        input_scale,
        validation: validation.clone(),
    };
    let selection = Dataset {
        manifest: manifest(Task::Selection, [cfg.n_r, cfg.n_t, 3], classes, sel_scale),
        inputs: reals.iter().flat_map(|r| r.noisy.iter().flat_map(|h| encode_channel(h, sel_scale))).collect(),
        labels: Labels::Classes(reals.iter().flat_map(|r| std::iter::repeat_n(r.class, cfg.copies)).collect()),
    };
    let precoder = Dataset {
        manifest: manifest(Task::Precoder, [cfg.n_sel, cfg.n_t, 3], 2 * cfg.n_t, pre_scale),
        inputs: reals.iter().flat_map(|r| r.selected.iter().flat_map(|h| encode_channel(h, pre_scale))).collect(),
        labels: Labels::Targets(
            reals.iter().flat_map(|r| (0..cfg.copies).flat_map(move |_| r.target.iter().copied())).collect(),
        ),
    };
    Ok((selection, precoder))
}
