use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{
    conv2d_backward, conv2d_forward, dropout, dropout_backward, fc_backward, fc_forward, relu_backward, relu_forward,
    ConvCache, ConvGeometry, Mode,
};
use super::loss::{mse_loss, softmax, softmax_cross_entropy};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Tensor4;
use super::Real;

/// Weights and biases of one layer; both empty for parameter-free layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<Real>,
    pub bias: Vec<Real>,
}

impl LayerParams {
    fn zeros(w: usize, b: usize) -> Self {
        LayerParams { weights: vec![0.0; w], bias: vec![0.0; b] }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer gradients, laid out like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients { layers: model.params.iter().map(|p| LayerParams::zeros(p.weights.len(), p.bias.len())).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: Real) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub init_seed: u64,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Divisor applied to raw channel entries before they reach the input layer.
    pub input_scale: f64,
}

/// Supervision for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<u32>),
    Values { dim: usize, data: Vec<Real> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values { dim, data } => data.len() / dim.max(&1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values { dim, data } => Targets::Values {
                dim: *dim,
                data: idx.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied()).collect(),
            },
        }
    }
}

/// Inputs paired with targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Examples {
    pub inputs: Tensor4,
    pub targets: Targets,
}

impl Examples {
    pub fn new(inputs: Tensor4, targets: Targets) -> Result<Self> {
        if inputs.batch() != targets.len() {
            return Err(Error::contract(format!("{} inputs but {} targets", inputs.batch(), targets.len())));
        }
        if let Targets::Values { dim, data } = &targets {
            if *dim == 0 || data.len() != inputs.batch() * dim {
                return Err(Error::contract("regression targets do not match their dimension"));
            }
        }
        Ok(Examples { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Examples {
        let [_, h, w, c] = self.inputs.dims();
        let data = idx.iter().flat_map(|&i| self.inputs.sample(i).iter().copied()).collect();
        Examples {
            inputs: Tensor4::from_vec([idx.len(), h, w, c], data).expect("gathered dims"),
            targets: self.targets.gather(idx),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrediction {
    pub class: usize,
    pub probabilities: Vec<Real>,
}

enum Cache {
    None,
    Conv(ConvCache),
    Relu(Tensor4),
    Affine(Tensor4),
    Dropout(Vec<Real>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
    pub meta: TrainingMeta,
}

impl Model {
    /// He-initialized weights (`N(0, 2/fan_in)`), zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let act = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let (w, b) = shapes[i];
                let fan_in = match *layer {
                    LayerSpec::Conv { kernel_h, kernel_w, .. } => kernel_h * kernel_w * act[i - 1].channels,
                    _ if w > 0 => act[i - 1].len(),
                    _ => 1,
                };
                let std = (2.0 / fan_in as f64).sqrt();
                let weights = (0..w)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (z * std) as Real
                    })
                    .collect();
                LayerParams { weights, bias: vec![0.0; b] }
            })
            .collect();
        Ok(Model {
            spec,
            params,
            meta: TrainingMeta {
                init_seed: seed,
                epochs: 0,
                final_train_loss: None,
                final_val_loss: None,
                input_scale: 1.0,
            },
        })
    }

    /// Assembles a model from stored parameters, checking their shapes.
    pub fn from_parts(spec: NetworkSpec, params: Vec<LayerParams>, meta: TrainingMeta) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if params.len() != shapes.len()
            || params.iter().zip(&shapes).any(|(p, &(w, b))| p.weights.len() != w || p.bias.len() != b)
        {
            return Err(Error::contract("parameter shapes do not match the network spec"));
        }
        Ok(Model { spec, params, meta })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let s = self.spec.input_shape();
        let [_, h, w, c] = x.dims();
        if (h, w, c) != (s.height, s.width, s.channels) {
            return Err(Error::contract(format!(
                "input of shape {h}x{w}x{c}, network expects {}x{}x{}",
                s.height, s.width, s.channels
            )));
        }
        Ok(())
    }

    fn conv_geometry(&self, i: usize, in_channels: usize) -> ConvGeometry {
        match self.spec.layers[i] {
            LayerSpec::Conv { filters, kernel_h, kernel_w, stride, padding } => {
                ConvGeometry { in_channels, filters, kernel_h, kernel_w, stride, padding }
            }
            _ => unreachable!("not a conv layer"),
        }
    }

    /// Runs the stack up to the output layer's affine map (logits for the
    /// classifier). `dropout_seed = None` means inference mode.
    fn forward(&self, x: &Tensor4, dropout_seed: Option<u64>, keep: bool) -> Result<(Tensor4, Vec<Cache>)> {
        self.check_input(x)?;
        let mode = if dropout_seed.is_some() { Mode::Train } else { Mode::Infer };
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
        let mut caches = Vec::with_capacity(if keep { self.spec.layers.len() } else { 0 });
        let mut act = x.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let p = &self.params[i];
            let (next, cache) = match *layer {
                LayerSpec::Input { .. } => (act, Cache::None),
                LayerSpec::Conv { .. } => {
                    let g = self.conv_geometry(i, act.dims()[3]);
                    let (y, c) = conv2d_forward(&act, &p.weights, &p.bias, &g)?;
                    (y, if keep { Cache::Conv(c) } else { Cache::None })
                }
                LayerSpec::Relu if keep => {
                    let y = relu_forward(&act);
                    (y.clone(), Cache::Relu(y))
                }
                LayerSpec::Relu => {
                    let mut y = act;
                    y.as_mut_slice().iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
                    (y, Cache::None)
                }
                LayerSpec::Dropout { .. } if mode == Mode::Infer => (act, Cache::Dropout(Vec::new())),
                LayerSpec::Dropout { rate } => {
                    let (y, mask) = dropout(&act, rate, mode, &mut rng)?;
                    (y, Cache::Dropout(mask))
                }
                LayerSpec::FullyConnected { .. }
                | LayerSpec::SoftmaxOutput { .. }
                | LayerSpec::RegressionOutput { .. } => {
                    let y = fc_forward(&act, &p.weights, &p.bias)?;
                    (y, if keep { Cache::Affine(act) } else { Cache::None })
                }
            };
            if keep {
                caches.push(cache);
            }
            act = next;
        }
        Ok((act, caches))
    }

    fn backward(&self, caches: Vec<Cache>, d_out: Tensor4) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        let mut d = d_out;
        for (i, cache) in caches.into_iter().enumerate().rev() {
            d = match cache {
                Cache::None => d,
                Cache::Relu(y) => relu_backward(&y, &d)?,
                Cache::Dropout(mask) => dropout_backward(&mask, &d),
                Cache::Affine(x) => {
                    let g = fc_backward(&x, &self.params[i].weights, &d)?;
                    grads.layers[i] = LayerParams { weights: g.weights, bias: g.bias };
                    g.input
                }
                Cache::Conv(c) => {
                    let in_channels = self.spec.shapes()?[i - 1].channels;
                    let geom = self.conv_geometry(i, in_channels);
                    let g = conv2d_backward(&c, &self.params[i].weights, &geom, &d)?;
                    grads.layers[i] = LayerParams { weights: g.weights, bias: g.bias };
                    g.input
                }
            };
        }
        Ok(grads)
    }

    /// Summed loss over the batch and the gradient of that sum.
    ///
    /// Classifier loss is softmax cross-entropy on the logits; regression
    /// loss is the per-sample mean squared error.
    pub fn loss_and_gradients(&self, ex: &Examples, dropout_seed: Option<u64>) -> Result<(f64, Gradients)> {
        let (out, caches) = self.forward(&ex.inputs, dropout_seed, true)?;
        let (loss, d) = self.output_loss(&out, &ex.targets)?;
        let grads = self.backward(caches, d)?;
        Ok((loss, grads))
    }

    /// Summed loss in inference mode and, for classifiers, the number of
    /// correctly ranked samples.
    pub fn evaluate(&self, ex: &Examples) -> Result<(f64, Option<usize>)> {
        let (out, _) = self.forward(&ex.inputs, None, false)?;
        let (loss, _) = self.output_loss(&out, &ex.targets)?;
        let correct = match &ex.targets {
            Targets::Classes(labels) => {
                Some(labels.iter().enumerate().filter(|&(b, &l)| argmax(out.sample(b)) == l as usize).count())
            }
            Targets::Values { .. } => None,
        };
        Ok((loss, correct))
    }

    fn output_loss(&self, out: &Tensor4, targets: &Targets) -> Result<(f64, Tensor4)> {
        let n = out.batch();
        let width = out.sample_len();
        if targets.len() != n {
            return Err(Error::contract(format!("{} targets for {n} samples", targets.len())));
        }
        let mut loss = 0.0;
        let mut d = Vec::with_capacity(n * width);
        match (self.spec.output(), targets) {
            (LayerSpec::SoftmaxOutput { .. }, Targets::Classes(labels)) => {
                for (b, &l) in labels.iter().enumerate() {
                    let (lo, g) = softmax_cross_entropy(out.sample(b), l as usize)?;
                    loss += lo;
                    d.extend(g);
                }
            }
            (LayerSpec::RegressionOutput { dim }, Targets::Values { dim: td, data }) if dim == td => {
                for b in 0..n {
                    let (lo, g) = mse_loss(out.sample(b), &data[b * dim..(b + 1) * dim])?;
                    loss += lo;
                    d.extend(g);
                }
            }
            _ => return Err(Error::contract("targets do not match the network's output layer")),
        }
        Ok((loss, Tensor4::from_vec(out.dims(), d)?))
    }

    /// `w <- w - lr·g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: Real) -> Result<()> {
        if grads.layers.len() != self.params.len()
            || grads
                .layers
                .iter()
                .zip(&self.params)
                .any(|(g, p)| g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len())
        {
            return Err(Error::contract("gradient shapes do not match the parameters"));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            for (w, d) in p.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
            }
            for (w, d) in p.bias.iter_mut().zip(&g.bias) {
                *w -= lr * d;
            }
        }
        Ok(())
    }

    /// Class and probability vector per sample (inference mode).
    pub fn predict_class(&self, x: &Tensor4) -> Result<Vec<ClassPrediction>> {
        if !matches!(self.spec.output(), LayerSpec::SoftmaxOutput { .. }) {
            return Err(Error::contract("predict_class on a regression network"));
        }
        let (out, _) = self.forward(x, None, false)?;
        Ok((0..out.batch())
            .map(|b| {
                let probabilities = softmax(out.sample(b));
                ClassPrediction { class: argmax(&probabilities), probabilities }
            })
            .collect())
    }

    /// Regression output per sample (inference mode).
    pub fn predict_regression(&self, x: &Tensor4) -> Result<Vec<Vec<Real>>> {
        if !matches!(self.spec.output(), LayerSpec::RegressionOutput { .. }) {
            return Err(Error::contract("predict_regression on a classification network"));
        }
        let (out, _) = self.forward(x, None, false)?;
        Ok((0..out.batch()).map(|b| out.sample(b).to_vec()).collect())
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[Real]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;
    use crate::nn::spec::Padding;
    use rand::Rng;

    fn random_examples(spec: &NetworkSpec, n: usize, seed: u64) -> Examples {
        let s = spec.input_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * s.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let inputs = Tensor4::from_vec([n, s.height, s.width, s.channels], x).unwrap();
        let targets = match *spec.output() {
            LayerSpec::SoftmaxOutput { classes } => {
                Targets::Classes((0..n).map(|_| rng.random_range(0..classes as u32)).collect())
            }
            LayerSpec::RegressionOutput { dim } => {
                Targets::Values { dim, data: (0..n * dim).map(|_| rng.random::<f64>() - 0.5).collect() }
            }
            _ => unreachable!(),
        };
        Examples::new(inputs, targets).unwrap()
    }

    fn small_spec() -> NetworkSpec {
        NetworkSpec::new(vec![
            LayerSpec::Input { height: 3, width: 4, channels: 2 },
            LayerSpec::Conv { filters: 3, kernel_h: 2, kernel_w: 2, stride: 1, padding: Padding::Same },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { nodes: 6 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::SoftmaxOutput { classes: 4 },
        ])
        .unwrap()
    }

    #[test]
    fn he_init_shapes_and_scale() {
        let spec = NetworkSpec::selection_classifier(8, 16, 70).unwrap();
        let m = Model::new(spec.clone(), 3).unwrap();
        assert_eq!(m.param_count(), spec.param_count().unwrap());
        // fc after the conv stack: fan_in = 8*16*64
        let w = &m.params()[7].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var / (2.0 / 8192.0) - 1.0).abs() < 0.02, "{var}");
        assert!(m.params()[7].bias.iter().all(|&b| b == 0.0));
        assert_eq!(Model::new(spec, 3).unwrap(), m);
    }

    #[test]
    fn predictions_are_distributions() {
        let spec = small_spec();
        let m = Model::new(spec.clone(), 1).unwrap();
        let ex = random_examples(&spec, 5, 2);
        let preds = m.predict_class(&ex.inputs).unwrap();
        for p in &preds {
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let max = p.probabilities.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(p.probabilities[p.class], max);
        }
        assert_eq!(m.predict_class(&ex.inputs).unwrap(), preds);
        assert!(m.predict_regression(&ex.inputs).is_err());
        let wrong = Tensor4::zeros(1, 4, 3, 2);
        assert!(m.predict_class(&wrong).is_err());
    }

    #[test]
    fn sgd_step_cases() {
        let spec = small_spec();
        let mut m = Model::new(spec, 1).unwrap();
        let before = m.clone();
        m.sgd_step(&Gradients::zeros_like(&m), 0.1).unwrap();
        assert_eq!(m, before);
        let g = Gradients { layers: m.params().to_vec() };
        m.sgd_step(&g, 1.0).unwrap();
        assert!(m.params().iter().all(|p| p.weights.iter().chain(&p.bias).all(|&v| v == 0.0)));
    }

    #[test]
    fn sgd_on_scalar_quadratic() {
        // One-weight regressor y = w·x with x = 1, target 0: loss w², grad 2w.
        let spec = NetworkSpec::new(vec![
            LayerSpec::Input { height: 1, width: 1, channels: 1 },
            LayerSpec::RegressionOutput { dim: 1 },
        ])
        .unwrap();
        let meta = Model::new(spec.clone(), 0).unwrap().meta;
        let mut m = Model::from_parts(
            spec,
            vec![LayerParams::zeros(0, 0), LayerParams { weights: vec![3.0], bias: vec![0.0] }],
            meta,
        )
        .unwrap();
        let ex = Examples::new(
            Tensor4::from_vec([1, 1, 1, 1], vec![1.0]).unwrap(),
            Targets::Values { dim: 1, data: vec![0.0] },
        )
        .unwrap();
        let (loss, g) = m.loss_and_gradients(&ex, None).unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g.layers[1].weights, vec![6.0]);
        m.sgd_step(&g, 0.1).unwrap();
        assert!((m.params()[1].weights[0] - 2.4).abs() < 1e-15);
    }

    #[test]
    fn inference_ignores_dropout() {
        let spec = small_spec();
        let m = Model::new(spec.clone(), 4).unwrap();
        let ex = random_examples(&spec, 3, 5);
        let (a, _) = m.evaluate(&ex).unwrap();
        let (b, _) = m.evaluate(&ex).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let (c, _) = m.loss_and_gradients(&ex, None).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn gather_and_mismatch() {
        let spec = small_spec();
        let ex = random_examples(&spec, 4, 6);
        let g = ex.gather(&[2, 0]);
        assert_eq!(g.inputs.sample(0), ex.inputs.sample(2));
        assert_eq!(g.targets.len(), 2);
        assert!(Examples::new(ex.inputs.clone(), Targets::Classes(vec![0])).is_err());
        let reg = Targets::Values { dim: 2, data: vec![0.0; 8] };
        let m = Model::new(spec, 0).unwrap();
        let bad = Examples::new(ex.inputs.clone(), reg).unwrap();
        assert!(m.evaluate(&bad).is_err());
    }
}
