use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd totals put the
    /// extra row/column after the input.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    Conv {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    FullyConnected {
        nodes: usize,
    },
    Dropout {
        rate: f64,
    },
    /// Affine map to `classes` logits followed by softmax.
    SoftmaxOutput {
        classes: usize,
    },
    /// Affine map to `dim` real outputs.
    RegressionOutput {
        dim: usize,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. }
                | LayerSpec::FullyConnected { .. }
                | LayerSpec::SoftmaxOutput { .. }
                | LayerSpec::RegressionOutput { .. }
        )
    }

    pub fn is_output(&self) -> bool {
        matches!(self, LayerSpec::SoftmaxOutput { .. } | LayerSpec::RegressionOutput { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::SoftmaxOutput { .. } => "softmax",
            LayerSpec::RegressionOutput { .. } => "regression",
        }
    }
}

/// Per-sample activation shape (height, width, channels). Fully connected
/// outputs are `(1, 1, nodes)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output extent and leading padding along one axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// The 14-layer stack shared by both networks:
    /// input, 3 x (conv 2x2/64 + relu), 2 x (fc 512 + relu + dropout 0.5), output.
    pub fn fourteen_layer(height: usize, width: usize, channels: usize, output: LayerSpec) -> Result<Self> {
        let conv = LayerSpec::Conv { filters: 64, kernel_h: 2, kernel_w: 2, stride: 1, padding: Padding::Same };
        Self::new(vec![
            LayerSpec::Input { height, width, channels },
            conv,
            LayerSpec::Relu,
            conv,
            LayerSpec::Relu,
            conv,
            LayerSpec::Relu,
            LayerSpec::FullyConnected { nodes: 512 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::FullyConnected { nodes: 512 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            output,
        ])
    }

    /// Antenna-selection classifier over `classes` subsets.
    pub fn selection_classifier(n_r: usize, n_t: usize, classes: usize) -> Result<Self> {
        Self::fourteen_layer(n_r, n_t, 3, LayerSpec::SoftmaxOutput { classes })
    }

    /// Analog-precoder regressor with a (cos, sin) pair per transmit antenna.
    pub fn precoder_regressor(n_sel: usize, n_t: usize) -> Result<Self> {
        Self::fourteen_layer(n_sel, n_t, 3, LayerSpec::RegressionOutput { dim: 2 * n_t })
    }

    pub fn input_shape(&self) -> Shape {
        match self.layers.first() {
            Some(LayerSpec::Input { height, width, channels }) => {
                Shape { height: *height, width: *width, channels: *channels }
            }
            _ => Shape { height: 0, width: 0, channels: 0 },
        }
    }

    pub fn output(&self) -> &LayerSpec {
        self.layers.last().expect("validated spec is non-empty")
    }

    pub fn output_len(&self) -> usize {
        match self.output() {
            LayerSpec::SoftmaxOutput { classes } => *classes,
            LayerSpec::RegressionOutput { dim } => *dim,
            _ => 0,
        }
    }

    /// Output shape of every layer; fails if the stack does not chain.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |i: usize, msg: String| Error::contract(format!("layer {i}: {msg}"));
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        if self.layers.len() < 2 {
            return Err(Error::contract("a network needs an input and an output layer"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if i == 0 && !matches!(layer, LayerSpec::Input { .. }) {
                return Err(bad(i, "first layer must be the input".into()));
            }
            if i > 0 && matches!(layer, LayerSpec::Input { .. }) {
                return Err(bad(i, "input layer may only appear first".into()));
            }
            let last = i + 1 == self.layers.len();
            if layer.is_output() != last {
                return Err(bad(i, "exactly one output layer, in last position".into()));
            }
            let shape = match *layer {
                LayerSpec::Input { height, width, channels } => Shape { height, width, channels },
                LayerSpec::Conv { filters, kernel_h, kernel_w, stride, padding } => {
                    let prev = shapes[i - 1];
                    if filters == 0 {
                        return Err(bad(i, "conv needs at least one filter".into()));
                    }
                    let (oh, _) = conv_extent(prev.height, kernel_h, stride, padding)
                        .ok_or_else(|| bad(i, format!("kernel {kernel_h}x{kernel_w} does not fit {prev:?}")))?;
                    let (ow, _) = conv_extent(prev.width, kernel_w, stride, padding)
                        .ok_or_else(|| bad(i, format!("kernel {kernel_h}x{kernel_w} does not fit {prev:?}")))?;
                    Shape { height: oh, width: ow, channels: filters }
                }
                LayerSpec::Relu => shapes[i - 1],
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(i, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    shapes[i - 1]
                }
                LayerSpec::FullyConnected { nodes: n }
                | LayerSpec::SoftmaxOutput { classes: n }
                | LayerSpec::RegressionOutput { dim: n } => {
                    if n == 0 {
                        return Err(bad(i, "zero-width affine layer".into()));
                    }
                    Shape { height: 1, width: 1, channels: n }
                }
            };
            if shape.is_empty() {
                return Err(bad(i, "empty activation".into()));
            }
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// (weight count, bias count) per layer.
    pub fn param_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match *layer {
                LayerSpec::Conv { filters, kernel_h, kernel_w, .. } => {
                    (kernel_h * kernel_w * shapes[i - 1].channels * filters, filters)
                }
                LayerSpec::FullyConnected { nodes: n }
                | LayerSpec::SoftmaxOutput { classes: n }
                | LayerSpec::RegressionOutput { dim: n } => (shapes[i - 1].len() * n, n),
                _ => (0, 0),
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|(w, b)| w + b).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_layers_preserve_spatial_dims() {
        let spec = NetworkSpec::selection_classifier(8, 16, 70).unwrap();
        assert_eq!(spec.layers.len(), 14);
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[5], Shape { height: 8, width: 16, channels: 64 });
        assert_eq!(shapes[13].channels, 70);
        let reg = NetworkSpec::precoder_regressor(4, 16).unwrap();
        assert_eq!(reg.output_len(), 32);
    }

    #[test]
    fn same_padding_extents() {
        assert_eq!(conv_extent(8, 2, 1, Padding::Same), Some((8, 0)));
        assert_eq!(conv_extent(5, 3, 1, Padding::Same), Some((5, 1)));
        assert_eq!(conv_extent(5, 3, 2, Padding::Same), Some((3, 1)));
        assert_eq!(conv_extent(2, 2, 1, Padding::Valid), Some((1, 0)));
        assert_eq!(conv_extent(1, 2, 1, Padding::Valid), None);
    }

    #[test]
    fn malformed_stacks_are_rejected() {
        let input = LayerSpec::Input { height: 2, width: 2, channels: 1 };
        let out = LayerSpec::SoftmaxOutput { classes: 2 };
        assert!(NetworkSpec::new(vec![out]).is_err());
        assert!(NetworkSpec::new(vec![input, LayerSpec::Relu]).is_err());
        assert!(NetworkSpec::new(vec![input, out, out]).is_err());
        let big = LayerSpec::Conv { filters: 1, kernel_h: 3, kernel_w: 3, stride: 1, padding: Padding::Valid };
        assert!(NetworkSpec::new(vec![input, big, out]).is_err());
        assert!(NetworkSpec::new(vec![input, LayerSpec::Dropout { rate: 1.0 }, out]).is_err());
        assert!(NetworkSpec::new(vec![input, out]).is_ok());
    }
}
