//! Acceptance criteria 1-8. Each test prints one PASS/FAIL line on stderr
//! (uncaptured) and fails when its criterion does. The tests take a shared
//! lock so timing measurements never overlap with training.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use hblab_core::channel::{complex_normal, ChannelModel};
use hblab_core::dataset::{generate, Dataset, DatasetConfig};
use hblab_core::eval::{
    cnn_precoder, cnn_select, csv_string, emit_csv, parse_csv, sweep, EvalConfig, Method, Models, Trial, CSV_HEADER,
};
use hblab_core::linalg::{svd, CMatrix, C64};
use hblab_core::nn::layers::{
    conv2d_backward, conv2d_forward, dropout, dropout_backward, fc_backward, fc_forward, relu_backward, relu_forward,
    ConvGeometry, Mode,
};
use hblab_core::nn::loss::{mse_loss, softmax_cross_entropy};
use hblab_core::nn::train::evaluate_chunked;
use hblab_core::nn::{
    model_from_bytes, model_to_bytes, train, Examples, Model, NetworkSpec, Padding, Targets, Tensor4, TrainConfig,
};
use hblab_core::precoder::{
    hybrid_from_rf, phase_extraction_precoder, power_norm, rf_from_target, sic_precoder, spectral_efficiency,
    HybridPrecoder, PartitionSpec,
};
use hblab_core::selection::{
    exhaustive_best_subset, optimal_rate_from_gram, random_subset, subset_count, subset_rate, AntennaSubset,
};
use hblab_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict}  {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

fn fro(a: &CMatrix) -> f64 {
    a.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_numeric_kernels() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_svd: f64 = 0.0;
    let mut worst_logdet: f64 = 0.0;
    for _ in 0..1000 {
        let (m, n) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let a = random_matrix(&mut rng, m, n);
        let d = svd(&a).unwrap();
        worst_svd = worst_svd.max(fro(&a.sub(&d.reconstruct()).unwrap()) / fro(&a));
    }
    for _ in 0..200 {
        let (n_r, n_t) = (rng.random_range(1..=16), rng.random_range(2..=32));
        let n_s = rng.random_range(1..=n_r.min(n_t));
        let h = random_matrix(&mut rng, n_r, n_t);
        let f = random_matrix(&mut rng, n_t, n_s);
        let snr = 10f64.powf(rng.random_range(-2.0..2.0));
        let lhs = spectral_efficiency(&h, &f, snr, n_s).unwrap();
        let rhs: f64 =
            svd(&h.matmul(&f).unwrap()).unwrap().s.iter().map(|s| (1.0 + snr / n_s as f64 * s * s).log2()).sum();
        worst_logdet = worst_logdet.max((lhs - rhs).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst_svd <= 1e-9 && worst_logdet <= 1e-8 && secs < 60.0,
        &format!("max SVD rel. error {worst_svd:.2e}, max log-det gap {worst_logdet:.2e}, {secs:.1} s"),
    );
}

// ---------------------------------------------------------------- 2

fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    const EPS: f64 = 1e-5;
    (0..x.len())
        .map(|i| {
            let v = x[i];
            x[i] = v + EPS;
            let up = f(x);
            x[i] = v - EPS;
            let down = f(x);
            x[i] = v;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn dot(a: &Tensor4, p: &[f64]) -> f64 {
    a.as_slice().iter().zip(p).map(|(x, y)| x * y).sum()
}

/// Worst relative error over every layer type's input and parameter gradients.
fn layer_gradient_errors(rng: &mut ChaCha8Rng) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    let g = ConvGeometry { in_channels: 3, filters: 4, kernel_h: 2, kernel_w: 2, stride: 1, padding: Padding::Same };
    let dims = [2, 3, 5, 3];
    let mut x = normals(rng, dims.iter().product());
    let mut w = normals(rng, g.weight_len());
    let mut b = normals(rng, 4);
    let (y, cache) = conv2d_forward(&Tensor4::from_vec(dims, x.clone()).unwrap(), &w, &b, &g).unwrap();
    let proj = normals(rng, y.as_slice().len());
    let grads = conv2d_backward(&cache, &w, &g, &Tensor4::from_vec(y.dims(), proj.clone()).unwrap()).unwrap();
    let conv = |x: &[f64], w: &[f64], b: &[f64]| {
        dot(&conv2d_forward(&Tensor4::from_vec(dims, x.to_vec()).unwrap(), w, b, &g).unwrap().0, &proj)
    };
    let (w0, b0) = (w.clone(), b.clone());
    let nx = numeric_grad(&mut x, |x| conv(x, &w0, &b0));
    let nw = numeric_grad(&mut w, |w| conv(&x, w, &b0));
    let nb = numeric_grad(&mut b, |b| conv(&x, &w0, b));
    out.push((
        "conv",
        rel_err(grads.input.as_slice(), &nx).max(rel_err(&grads.weights, &nw)).max(rel_err(&grads.bias, &nb)),
    ));

    let dims = [3, 2, 2, 3];
    let mut x = normals(rng, 36);
    let mut w = normals(rng, 12 * 5);
    let mut b = normals(rng, 5);
    let proj = normals(rng, 15);
    let grads = fc_backward(
        &Tensor4::from_vec(dims, x.clone()).unwrap(),
        &w,
        &Tensor4::from_vec([3, 1, 1, 5], proj.clone()).unwrap(),
    )
    .unwrap();
    let fc = |x: &[f64], w: &[f64], b: &[f64]| {
        dot(&fc_forward(&Tensor4::from_vec(dims, x.to_vec()).unwrap(), w, b).unwrap(), &proj)
    };
    let (w0, b0) = (w.clone(), b.clone());
    let nx = numeric_grad(&mut x, |x| fc(x, &w0, &b0));
    let nw = numeric_grad(&mut w, |w| fc(&x, w, &b0));
    let nb = numeric_grad(&mut b, |b| fc(&x, &w0, b));
    out.push((
        "fully connected",
        rel_err(grads.input.as_slice(), &nx).max(rel_err(&grads.weights, &nw)).max(rel_err(&grads.bias, &nb)),
    ));

    // Keep inputs away from the kink so the difference quotient is smooth.
    let mut x: Vec<f64> = normals(rng, 40).into_iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }).collect();
    let proj = normals(rng, 40);
    let rd = [2, 2, 2, 5];
    let ga = relu_backward(&Tensor4::from_vec(rd, x.clone()).unwrap(), &Tensor4::from_vec(rd, proj.clone()).unwrap())
        .unwrap();
    let nx = numeric_grad(&mut x, |x| dot(&relu_forward(&Tensor4::from_vec(rd, x.to_vec()).unwrap()), &proj));
    out.push(("relu", rel_err(ga.as_slice(), &nx)));

    let mut x = normals(rng, 40);
    let proj = normals(rng, 40);
    let seed = rng.random::<u64>();
    let drop = |x: &[f64]| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        dropout(&Tensor4::from_vec(rd, x.to_vec()).unwrap(), 0.5, Mode::Train, &mut r).unwrap()
    };
    let (_, mask) = drop(&x);
    let ga = dropout_backward(&mask, &Tensor4::from_vec(rd, proj.clone()).unwrap());
    let nx = numeric_grad(&mut x, |x| dot(&drop(x).0, &proj));
    out.push(("dropout", rel_err(ga.as_slice(), &nx)));

    let mut z = normals(rng, 7);
    let (_, ga) = softmax_cross_entropy(&z, 3).unwrap();
    let nz = numeric_grad(&mut z, |z| softmax_cross_entropy(z, 3).unwrap().0);
    out.push(("softmax cross-entropy", rel_err(&ga, &nz)));

    let mut p = normals(rng, 6);
    let t = normals(rng, 6);
    let (_, ga) = mse_loss(&p, &t).unwrap();
    let np = numeric_grad(&mut p, |p| mse_loss(p, &t).unwrap().0);
    out.push(("mean squared error", rel_err(&ga, &np)));
    out
}

fn param(model: &mut Model, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let p = &mut model.params_mut()[layer];
    if bias {
        &mut p.bias[i]
    } else {
        &mut p.weights[i]
    }
}

/// Relative error of the full-stack gradient on sampled parameters.
fn stack_gradient_error(model: &mut Model, ex: &Examples, rng: &mut ChaCha8Rng) -> f64 {
    const EPS: f64 = 1e-5;
    let seed = 77;
    let (_, grads) = model.loss_and_gradients(ex, Some(seed)).unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for layer in 0..model.params().len() {
        for bias in [false, true] {
            let len = {
                let p = &model.params()[layer];
                if bias {
                    p.bias.len()
                } else {
                    p.weights.len()
                }
            };
            for _ in 0..len.min(12) {
                let i = rng.random_range(0..len);
                let v = *param(model, layer, bias, i);
                *param(model, layer, bias, i) = v + EPS;
                let up = model.loss_and_gradients(ex, Some(seed)).unwrap().0;
                *param(model, layer, bias, i) = v - EPS;
                let down = model.loss_and_gradients(ex, Some(seed)).unwrap().0;
                *param(model, layer, bias, i) = v;
                numeric.push((up - down) / (2.0 * EPS));
                let g = &grads.layers[layer];
                analytic.push(if bias { g.bias[i] } else { g.weights[i] });
            }
        }
    }
    rel_err(&analytic, &numeric)
}

#[test]
fn criterion_2_gradients() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layers = layer_gradient_errors(&mut rng);

    let inputs = |rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize| {
        Tensor4::from_vec([n, h, w, 3], normals(rng, n * h * w * 3)).unwrap()
    };
    let mut sel = Model::new(NetworkSpec::selection_classifier(4, 6, 15).unwrap(), 3).unwrap();
    let ex = Examples::new(inputs(&mut rng, 3, 4, 6), Targets::Classes(vec![0, 7, 14])).unwrap();
    let sel_err = stack_gradient_error(&mut sel, &ex, &mut rng);
    let mut pre = Model::new(NetworkSpec::precoder_regressor(2, 8).unwrap(), 4).unwrap();
    let ex =
        Examples::new(inputs(&mut rng, 3, 2, 8), Targets::Values { dim: 16, data: normals(&mut rng, 48) }).unwrap();
    let pre_err = stack_gradient_error(&mut pre, &ex, &mut rng);

    let secs = start.elapsed().as_secs_f64();
    let layer_ok = layers.iter().all(|(_, e)| *e < 1e-6);
    let detail: Vec<String> = layers.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(
        2,
        layer_ok && sel_err < 1e-4 && pre_err < 1e-4 && secs < 300.0,
        &format!(
            "layers [{}]; selection stack {sel_err:.1e}, precoder stack {pre_err:.1e}; {secs:.1} s",
            detail.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- 3

/// Independent check of block structure (exact), unit-modulus entries and
/// total power.
fn constraint_violation(hp: &HybridPrecoder, spec: &PartitionSpec, n_s: usize) -> Option<String> {
    let m = spec.m();
    let modulus = 1.0 / (m as f64).sqrt();
    for r in 0..spec.n_t() {
        for c in 0..spec.n_rf() {
            let v = hp.f_rf[(r, c)];
            if r / m != c {
                if v != C64::new(0.0, 0.0) {
                    return Some(format!("off-block entry ({r},{c}) = {v}"));
                }
            } else if (v.norm() - modulus).abs() > 1e-9 {
                return Some(format!("entry ({r},{c}) has modulus {}", v.norm()));
            }
        }
    }
    let power = fro(&hp.product());
    if (power - power_norm(n_s)).abs() > 1e-9 {
        return Some(format!("power {power} != {}", power_norm(n_s)));
    }
    None
}

#[test]
fn criterion_3_constraints() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let desk = PartitionSpec::new(16, 4).unwrap();
    let net = Model::new(NetworkSpec::precoder_regressor(4, 16).unwrap(), 5).unwrap();
    let mut counts = [0usize; 3];
    let mut failure = None;
    for i in 0..10_000 {
        let kind = i % 3;
        let (hp, spec, n_s) = if kind == 2 {
            let h = ChannelModel::new(16, 4).unwrap().realize(i as u64).unwrap().h;
            let n_s = rng.random_range(1..=4);
            (cnn_precoder(&net, &h, &desk, n_s).unwrap(), desk.clone(), n_s)
        } else {
            let n_rf = rng.random_range(1..=4);
            let n_t = n_rf * rng.random_range(1..=6);
            let n_r = rng.random_range(n_rf..=8);
            let n_s = rng.random_range(1..=n_rf);
            let spec = PartitionSpec::new(n_t, n_rf).unwrap();
            let h = random_matrix(&mut rng, n_r, n_t);
            let hp = if kind == 0 {
                phase_extraction_precoder(&h, &spec, n_s).unwrap()
            } else if i % 2 == 0 {
                sic_precoder(&h, &spec, 10f64.powf(rng.random_range(-1.5..1.5)), n_s).unwrap()
            } else {
                // Arbitrary regression output mapped onto the constraint set.
                let target: Vec<f64> = (0..2 * n_t).map(|_| rng.random_range(-3.0..3.0)).collect();
                hybrid_from_rf(&h, rf_from_target(&target, &spec).unwrap(), n_s).unwrap()
            };
            (hp, spec, n_s)
        };
        counts[kind] += 1;
        if let Some(v) = constraint_violation(&hp, &spec, n_s) {
            failure = Some(format!("construction {i}: {v}"));
            break;
        }
    }
    report(
        3,
        failure.is_none(),
        &failure.unwrap_or_else(|| {
            format!(
                "10000 constructions ({} phase extraction, {} SIC/target, {} CNN) within tolerance",
                counts[0], counts[1], counts[2]
            )
        }),
    );
}

// ---------------------------------------------------------------- 4

fn brute_force(h: &CMatrix, n_sel: usize, snr: f64, n_s: usize) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let n = h.rows();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n_sel {
            continue;
        }
        let rows: Vec<usize> = (0..n).filter(|r| mask >> r & 1 == 1).collect();
        let sub = nalgebra::DMatrix::from_fn(n_sel, h.cols(), |r, c| h[(rows[r], c)]);
        let mut s: Vec<f64> = sub.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let rate: f64 = s.iter().take(n_s).map(|x| (1.0 + snr / n_s as f64 * x * x).log2()).sum();
        // Lexicographically smallest subset wins ties, as in the library.
        if rate > best.1 + 1e-12 || (rate > best.1 - 1e-12 && rows < best.0) {
            best = (rows, rate);
        }
    }
    best
}

#[test]
fn criterion_4_selection_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut mismatches, mut dominance_failures) = (Vec::new(), 0);
    for t in 0..500 {
        let h = random_matrix(&mut rng, 6, 4);
        let snr = 10f64.powf(rng.random_range(-1.5..2.0));
        let n_s = 1 + t % 3;
        let (das, das_rate) = exhaustive_best_subset(&h, 3, snr, n_s).unwrap();
        let (rows, rate) = brute_force(&h, 3, snr, n_s);
        if das.indices() != rows.as_slice() || (das_rate - rate).abs() > 1e-9 {
            mismatches.push(t);
        }
        let ras = random_subset(6, 3, &mut rng).unwrap();
        let gram = h.matmul(&h.adjoint()).unwrap();
        let sub = |s: &AntennaSubset| {
            let i = s.indices();
            CMatrix::from_fn(3, 3, |r, c| gram[(i[r], i[c])])
        };
        let ras_rate = optimal_rate_from_gram(&sub(&ras), snr, n_s).unwrap();
        if das_rate < ras_rate {
            dominance_failures += 1;
        }
    }
    report(
        4,
        mismatches.is_empty() && dominance_failures == 0,
        &format!(
            "500 channels: {} oracle mismatches {:?}, {} DAS < RAS cases",
            mismatches.len(),
            &mismatches[..mismatches.len().min(5)],
            dominance_failures
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_desk_scale_learning() {
    let _g = serial();
    let start = Instant::now();
    let cfg = DatasetConfig::default();
    let (sel_data, pre_data) = generate(&cfg).unwrap();
    let train_cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };

    let (tr, va) = sel_data.split().unwrap();
    let mut selector = Model::new(NetworkSpec::selection_classifier(8, 16, 70).unwrap(), 11).unwrap();
    selector.meta.input_scale = sel_data.manifest.input_scale;
    train(&mut selector, &tr, Some(&va), &train_cfg).unwrap();
    let (_, correct) = evaluate_chunked(&selector, &va).unwrap();
    let split_acc = correct.unwrap() as f64 / va.len() as f64;

    let (tr, va) = pre_data.split().unwrap();
    let mut precoder = Model::new(NetworkSpec::precoder_regressor(4, 16).unwrap(), 12).unwrap();
    precoder.meta.input_scale = pre_data.manifest.input_scale;
    train(&mut precoder, &tr, Some(&va), &train_cfg).unwrap();
    let trained = start.elapsed().as_secs_f64();

    let grid = vec![-10.0, -5.0, 0.0, 5.0, 10.0];
    let eval = EvalConfig {
        snr_db: grid.clone(),
        trials: 100,
        methods: vec![Method::CnnDasCnnRf, Method::CnnDasSic, Method::RasCnnRf, Method::RasSic],
        ..EvalConfig::default()
    };
    let models = Models { selector: Some(selector), precoder: Some(precoder) };
    let selector = models.selector.as_ref().unwrap();

    // (a) and (b): CNN subsets against the exhaustive optimum on fresh channels.
    let label_snr = 10f64.powf(cfg.label_snr_db / 10.0);
    let (mut hits, mut cnn_sum, mut best_sum) = (0usize, 0.0, 0.0);
    for t in 0..eval.trials {
        let trial = Trial::draw(&eval, eval.seed + t as u64).unwrap();
        let picked = cnn_select(selector, &trial.observed, eval.n_sel).unwrap();
        let (label, _) = exhaustive_best_subset(&trial.h, eval.n_sel, label_snr, eval.n_s).unwrap();
        hits += usize::from(picked == label);
        for &s in &grid {
            let snr = 10f64.powf(s / 10.0);
            cnn_sum += subset_rate(&trial.h, &picked, snr, eval.n_s).unwrap();
            best_sum += exhaustive_best_subset(&trial.h, eval.n_sel, snr, eval.n_s).unwrap().1;
        }
    }
    let accuracy = hits as f64 / eval.trials as f64;
    let chance = 1.0 / subset_count(8, 4).unwrap() as f64;
    let rate_ratio = cnn_sum / best_sum;

    // (c) and (d): paired pipeline sweep.
    let result = sweep(&eval, &models).unwrap();
    let mean = |m: Method, s: f64| result.cell(m, s).unwrap().mean_rate;
    let ratios: Vec<f64> = grid.iter().map(|&s| mean(Method::CnnDasCnnRf, s) / mean(Method::CnnDasSic, s)).collect();
    let c_ok = ratios.iter().all(|&r| r >= 0.95) && 2 * ratios.iter().filter(|&&r| r >= 1.0).count() >= ratios.len();
    let d_ok = grid.iter().all(|&s| {
        mean(Method::CnnDasSic, s) > mean(Method::RasSic, s) && mean(Method::CnnDasCnnRf, s) > mean(Method::RasCnnRf, s)
    });
    let das_gaps: Vec<String> =
        grid.iter().map(|&s| format!("{:+.3}", mean(Method::CnnDasSic, s) - mean(Method::RasSic, s))).collect();

    let a_ok = accuracy >= 10.0 * chance;
    let b_ok = rate_ratio >= 0.97;
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        a_ok && b_ok && c_ok && d_ok && secs <= 1800.0,
        &format!(
            "(a) accuracy {accuracy:.3} vs 10x chance {:.3} [{}] (held-out split {split_acc:.3}); \
             (b) CNN/exhaustive subset rate {rate_ratio:.4} [{}]; \
             (c) CNN/SIC pipeline {:?} [{}]; (d) DAS-RAS (SIC) {:?} [{}]; \
             training {trained:.0} s, total {secs:.0} s",
            10.0 * chance,
            verdict(a_ok),
            verdict(b_ok),
            ratios.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>(),
            verdict(c_ok),
            das_gaps,
            verdict(d_ok),
        ),
    );
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "not met"
    }
}

// ---------------------------------------------------------------- 6

fn hblab(args: &[&str]) -> String {
    let out =
        Command::new(env!("CARGO_BIN_EXE_hblab")).args(args).env_remove("HBLAB_SEED").output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn criterion_6_paper_scale_timing() {
    let _g = serial();
    let csv = hblab(&["bench", "--paper-scale", "--trials", "100", "--methods", "cnn,sic"]);
    let mean = |method: &str| -> f64 {
        let line = csv.lines().find(|l| l.starts_with(&format!("{method},"))).expect("timing row");
        line.split(',').nth(5).unwrap().parse().unwrap()
    };
    let (cnn, sic) = (mean("cnn_das_cnn_rf"), mean("cnn_das_sic"));
    let exhaustive = csv
        .lines()
        .find(|l| l.starts_with("exhaustive_selection,"))
        .map(|l| l.split(',').nth(5).unwrap().to_string())
        .unwrap_or_else(|| "n/a".into());
    report(
        6,
        cnn <= 0.050 && cnn <= 5.0 * sic,
        &format!(
            "N_T=144: CNN pipeline {:.1} ms (limit 50 ms), SIC pipeline {:.1} ms, ratio {:.2} (limit 5); exhaustive selection {exhaustive} s",
            cnn * 1e3,
            sic * 1e3,
            cnn / sic
        ),
    );
}

// ---------------------------------------------------------------- 7

/// Eval CSV with the wall-clock column removed.
fn without_timing(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect()
}

fn pipeline_run(dir: &Path) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    hblab(&["gen-data", "--n", "20", "--l", "10", "--seed", "3", "--out", &p("")]);
    for (task, data, model) in [("as", "sel.hbds", "as.hbnn"), ("rf", "rf.hbds", "rf.hbnn")] {
        hblab(&[
            "--threads",
            "1",
            "train",
            "--task",
            task,
            "--data",
            &p(data),
            "--epochs",
            "2",
            "--batch",
            "50",
            "--seed",
            "5",
            "--out",
            &p(model),
        ]);
    }
    hblab(&[
        "eval",
        "--trials",
        "10",
        "--snr",
        "-10:5:10",
        "--methods",
        "full,oracle-pe,cnn,sic,ras-sic,ras-cnn",
        "--as-model",
        &p("as.hbnn"),
        "--rf-model",
        &p("rf.hbnn"),
        "--out",
        &p("eval.csv"),
    ]);
}

#[test]
fn criterion_7_determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline_run(&a);
    pipeline_run(&b);
    let mut differing = Vec::new();
    let files = [
        "sel.hbds",
        "rf.hbds",
        "sel.manifest.json",
        "rf.manifest.json",
        "as.hbnn",
        "rf.hbnn",
        "as.loss.csv",
        "rf.loss.csv",
    ];
    for f in files {
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            differing.push(f.to_string());
        }
    }
    if without_timing(&a.join("eval.csv")) != without_timing(&b.join("eval.csv")) {
        differing.push("eval.csv".into());
    }
    report(
        7,
        differing.is_empty(),
        &format!(
            "{} artifacts compared byte for byte (eval CSV without its wall-clock column); differing: {differing:?}",
            files.len() + 1
        ),
    );
}

// ---------------------------------------------------------------- 8

fn rejects<T>(r: hblab_core::Result<T>) -> bool {
    matches!(r, Err(Error::Format(_)))
}

#[test]
fn criterion_8_formats() {
    let _g = serial();
    let mut problems = Vec::new();
    let cfg = DatasetConfig { realizations: 6, copies: 3, ..DatasetConfig::default() };
    let (sel, pre) = generate(&cfg).unwrap();
    for ds in [&sel, &pre] {
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        if back != *ds || back.to_bytes() != bytes {
            problems.push("HBDS round trip".to_string());
        }
        let mut bad = bytes.clone();
        bad[1] ^= 0xff;
        let mut version = bytes.clone();
        version[4] = 7;
        let mut manifest_len = bytes.clone();
        manifest_len[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        let mut extra = bytes.clone();
        extra.push(0);
        for (what, b) in [
            ("magic", bad),
            ("version", version),
            ("manifest length", manifest_len),
            ("truncated", bytes[..bytes.len() - 3].to_vec()),
            ("trailing", extra),
        ] {
            if !rejects(Dataset::from_bytes(&b)) {
                problems.push(format!("HBDS accepted corrupted {what}"));
            }
        }
    }

    let mut model = Model::new(NetworkSpec::precoder_regressor(4, 16).unwrap(), 8).unwrap();
    model.meta.input_scale = sel.manifest.input_scale;
    let bytes = model_to_bytes(&model).unwrap();
    let back = model_from_bytes(&bytes).unwrap();
    if back != model || model_to_bytes(&back).unwrap() != bytes {
        problems.push("HBNN round trip".into());
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let mut version = bytes.clone();
    version[4] = 2;
    let mut count = bytes.clone();
    count[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    for (what, b) in
        [("magic", bad), ("version", version), ("layer count", count), ("truncated", bytes[..bytes.len() - 8].to_vec())]
    {
        if !rejects(model_from_bytes(&b)) {
            problems.push(format!("HBNN accepted corrupted {what}"));
        }
    }

    let eval = EvalConfig {
        trials: 4,
        snr_db: vec![10.0, -5.0, 0.0],
        methods: vec![Method::FullArrayOptimal, Method::RasSic, Method::OracleDasPhaseExtraction],
        ..EvalConfig::default()
    };
    let result = sweep(&eval, &Models::default()).unwrap();
    let text = csv_string(&result);
    let lines: Vec<&str> = text.lines().collect();
    if lines[0] != CSV_HEADER || lines.len() != 10 {
        problems.push("CSV header or row count".into());
    }
    let expected_order: Vec<(Method, f64)> =
        eval.methods.iter().flat_map(|&m| [-5.0, 0.0, 10.0].map(|s| (m, s))).collect();
    match parse_csv(&text) {
        Ok(rows) => {
            let order: Vec<(Method, f64)> = rows.iter().map(|r| (r.method, r.snr_db)).collect();
            if order != expected_order {
                problems.push("CSV row order".into());
            }
            for (r, c) in rows.iter().zip(&result.cells) {
                if (r.mean_rate - c.mean_rate).abs() > 1e-9 || (r.std_rate - c.std_rate).abs() > 1e-9 || r.trials != 4 {
                    problems.push("CSV values do not round-trip".into());
                    break;
                }
            }
        }
        Err(e) => problems.push(format!("CSV parse: {e}")),
    }
    let tmp = tempfile::tempdir().unwrap();
    let (x, y) = (tmp.path().join("x.csv"), tmp.path().join("y.csv"));
    emit_csv(&result, &x).unwrap();
    emit_csv(&result, &y).unwrap();
    if fs::read(&x).unwrap() != fs::read(&y).unwrap() || fs::read_to_string(&x).unwrap() != text {
        problems.push("CSV re-emission differs".into());
    }
    report(
        8,
        problems.is_empty(),
        &if problems.is_empty() {
            "HBDS (both tasks) and HBNN round-trip bit-exactly; 13 corruptions rejected; CSV schema, order and re-emission hold"
                .to_string()
        } else {
            problems.join("; ")
        },
    );
}
