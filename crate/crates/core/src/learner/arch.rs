use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Convolution {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Convolution { .. } => "convolution",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// (weight count, bias count) for parametrized layers.
    pub fn param_counts(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Convolution {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                ..
            } => Some((
                out_channels * in_channels * kernel_h * kernel_w,
                out_channels,
            )),
            LayerSpec::FullyConnected { inputs, outputs } => Some((inputs * outputs, outputs)),
            _ => None,
        }
    }

    /// Glorot fan-in and fan-out.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Convolution {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                ..
            } => Some((
                in_channels * kernel_h * kernel_w,
                out_channels * kernel_h * kernel_w,
            )),
            LayerSpec::FullyConnected { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }
    }
}

/// Input shape `[channels, height, width]` plus an ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

pub(crate) fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl ArchitectureDescriptor {
    /// 3×size×size → conv3×3×16/relu/pool2 → conv3×3×32/relu/pool2 → fc128/relu → fc K → softmax.
    pub fn reference(input_channels: usize, size: usize, classes: usize) -> Self {
        let pooled = size / 2 / 2;
        ArchitectureDescriptor {
            input: [input_channels, size, size],
            layers: vec![
                LayerSpec::Convolution {
                    kernel_h: 3,
                    kernel_w: 3,
                    in_channels: input_channels,
                    out_channels: 16,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Convolution {
                    kernel_h: 3,
                    kernel_w: 3,
                    in_channels: 16,
                    out_channels: 32,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    inputs: 32 * pooled * pooled,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    inputs: 128,
                    outputs: classes,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Linear softmax classifier over flat feature vectors.
    pub fn linear_head(features: usize, classes: usize) -> Self {
        ArchitectureDescriptor {
            input: [features, 1, 1],
            layers: vec![
                LayerSpec::FullyConnected {
                    inputs: features,
                    outputs: classes,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Output shape of every layer; errors name the first layer that does not compose.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        if shape.contains(&0) {
            return Err(Error::Shape {
                layer: 0,
                kind: "input",
                detail: format!("zero input dimension {shape:?}"),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |detail: String| Error::Shape {
                layer: i,
                kind: layer.kind(),
                detail,
            };
            let [c, h, w] = shape;
            shape = match *layer {
                LayerSpec::Convolution {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                } => {
                    if in_channels != c {
                        return Err(fail(format!(
                            "expects {in_channels} input channels, gets {c}"
                        )));
                    }
                    if kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                        return Err(fail("zero kernel or channel count".into()));
                    }
                    match (
                        conv_out(h, kernel_h, stride, padding),
                        conv_out(w, kernel_w, stride, padding),
                    ) {
                        (Some(oh), Some(ow)) => [out_channels, oh, ow],
                        _ => return Err(fail(format!("kernel does not fit {h}x{w} input"))),
                    }
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { size, stride } => {
                    match (conv_out(h, size, stride, 0), conv_out(w, size, stride, 0)) {
                        (Some(oh), Some(ow)) if size > 0 => [c, oh, ow],
                        _ => {
                            return Err(fail(format!("pool {size}/{stride} does not fit {h}x{w}")))
                        }
                    }
                }
                LayerSpec::Flatten => [c * h * w, 1, 1],
                LayerSpec::FullyConnected { inputs, outputs } => {
                    if inputs != c * h * w {
                        return Err(fail(format!("expects {inputs} inputs, gets {}", c * h * w)));
                    }
                    if outputs == 0 {
                        return Err(fail("zero outputs".into()));
                    }
                    [outputs, 1, 1]
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(fail("softmax must be the final layer".into()));
                    }
                    if !(h == 1 && w == 1) {
                        return Err(fail("softmax needs a flat input".into()));
                    }
                    shape
                }
            };
            out.push(shape);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Shape {
                layer: self.layers.len(),
                kind: "softmax",
                detail: "architecture must end with softmax".into(),
            });
        }
        Ok(out)
    }

    pub fn class_count(&self) -> Result<usize> {
        Ok(self.shapes()?.last().expect("non-empty")[0])
    }

    /// Index of the last fully connected layer.
    pub fn head_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::FullyConnected { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shapes() {
        let a = ArchitectureDescriptor::reference(3, 64, 3);
        let s = a.shapes().unwrap();
        assert_eq!(s[0], [16, 64, 64]);
        assert_eq!(s[2], [16, 32, 32]);
        assert_eq!(s[5], [32, 16, 16]);
        assert_eq!(s[6], [8192, 1, 1]);
        assert_eq!(a.class_count().unwrap(), 3);
        assert_eq!(a.head_index(), Some(9));
    }

    #[test]
    fn mismatch_names_layer() {
        let mut a = ArchitectureDescriptor::reference(3, 64, 3);
        a.layers[7] = LayerSpec::FullyConnected {
            inputs: 100,
            outputs: 128,
        };
        match a.shapes() {
            Err(Error::Shape { layer, kind, .. }) => {
                assert_eq!(layer, 7);
                assert_eq!(kind, "fully_connected");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn must_end_in_softmax() {
        let mut a = ArchitectureDescriptor::linear_head(4, 2);
        a.layers.pop();
        assert!(a.shapes().is_err());
        let mut a = ArchitectureDescriptor::linear_head(4, 2);
        a.layers.insert(0, LayerSpec::Softmax);
        assert!(a.shapes().is_err());
    }

    #[test]
    fn descriptor_json_is_tagged() {
        let a = ArchitectureDescriptor::linear_head(4, 2);
        let j = serde_json::to_string(&a).unwrap();
        assert!(
            j.contains(r#"{"type":"fully_connected","inputs":4,"outputs":2}"#),
            "{j}"
        );
        let back: ArchitectureDescriptor = serde_json::from_str(&j).unwrap();
        assert_eq!(back, a);
    }
}
