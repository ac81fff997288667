use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// One layer of a sequential network, hyperparameters only.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d { in_ch: usize, out_ch: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2], bias: bool },
    ConvTranspose2d { in_ch: usize, out_ch: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2], bias: bool },
    BatchNorm2d { channels: usize, eps: f64, momentum: f64 },
    Dense { inputs: usize, outputs: usize },
    Act(Activation),
    MaxPool2d { kernel: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        LayerSpec::Conv2d { in_ch, out_ch, kernel: [kernel; 2], stride: [stride; 2], padding: [padding; 2], bias }
    }

    pub fn conv_transpose(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel: [kernel; 2], stride: [stride; 2], padding: [padding; 2], bias }
    }

    /// Names and shapes of the trainable tensors this layer owns.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, bias, .. } => {
                let mut v = vec![("weight", vec![out_ch, in_ch, kernel[0], kernel[1]])];
                if bias {
                    v.push(("bias", vec![out_ch]));
                }
                v
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, bias, .. } => {
                let mut v = vec![("weight", vec![in_ch, out_ch, kernel[0], kernel[1]])];
                if bias {
                    v.push(("bias", vec![out_ch]));
                }
                v
            }
            LayerSpec::BatchNorm2d { channels, .. } => vec![("gamma", vec![channels]), ("beta", vec![channels])],
            LayerSpec::Dense { inputs, outputs } => vec![("weight", vec![outputs, inputs]), ("bias", vec![outputs])],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (running statistics).
    pub fn buffer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::BatchNorm2d { channels, .. } => vec![("running_mean", vec![channels]), ("running_var", vec![channels])],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = |what: &str| -> std::result::Result<[usize; 3], String> {
            match input {
                &[c, h, w] => Ok([c, h, w]),
                _ => Err(format!("{what} expects a [C,H,W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => {
                let [c, h, w] = spatial("conv2d")?;
                if c != in_ch {
                    return Err(format!("conv2d expects {in_ch} channels, got {c}"));
                }
                let dim = |len: usize, i: usize| {
                    (len + 2 * padding[i]).checked_sub(kernel[i]).filter(|_| stride[i] > 0).map(|d| d / stride[i] + 1)
                };
                match (dim(h, 0), dim(w, 1)) {
                    (Some(oh), Some(ow)) => Ok(vec![out_ch, oh, ow]),
                    _ => Err(format!("conv2d output would be empty for input {input:?}")),
                }
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding, .. } => {
                let [c, h, w] = spatial("conv_transpose2d")?;
                if c != in_ch {
                    return Err(format!("conv_transpose2d expects {in_ch} channels, got {c}"));
                }
                let dim = |len: usize, i: usize| ((len - 1) * stride[i] + kernel[i]).checked_sub(2 * padding[i]).filter(|&d| d >= 1);
                match (dim(h, 0), dim(w, 1)) {
                    (Some(oh), Some(ow)) => Ok(vec![out_ch, oh, ow]),
                    _ => Err(format!("conv_transpose2d output would be empty for input {input:?}")),
                }
            }
            LayerSpec::BatchNorm2d { channels, .. } => {
                let [c, _, _] = spatial("batchnorm2d")?;
                if c != channels {
                    return Err(format!("batchnorm2d expects {channels} channels, got {c}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dense { inputs, outputs } => match input {
                &[n] if n == inputs => Ok(vec![outputs]),
                _ => Err(format!("dense expects [{inputs}], got {input:?}")),
            },
            LayerSpec::Act(_) => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { kernel, stride } => {
                let [c, h, w] = spatial("maxpool2d")?;
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return Err(format!("maxpool2d window {kernel} does not fit input {input:?}"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn pair(v: [usize; 2]) -> String {
    format!("{}x{}", v[0], v[1])
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bias = |b: bool| if b { "bias" } else { "nobias" };
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, bias: b } => {
                write!(f, "conv2d:{in_ch}:{out_ch}:{}:{}:{}:{}", pair(kernel), pair(stride), pair(padding), bias(b))
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding, bias: b } => {
                write!(f, "convt2d:{in_ch}:{out_ch}:{}:{}:{}:{}", pair(kernel), pair(stride), pair(padding), bias(b))
            }
            LayerSpec::BatchNorm2d { channels, eps, momentum } => write!(f, "bn2d:{channels}:{eps:e}:{momentum:e}"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense:{inputs}:{outputs}"),
            LayerSpec::Act(Activation::Relu) => write!(f, "relu"),
            LayerSpec::Act(Activation::LeakyRelu(a)) => write!(f, "leaky_relu:{a:e}"),
            LayerSpec::Act(Activation::Tanh) => write!(f, "tanh"),
            LayerSpec::Act(Activation::Sigmoid) => write!(f, "sigmoid"),
            LayerSpec::MaxPool2d { kernel, stride } => write!(f, "maxpool2d:{kernel}:{stride}"),
            LayerSpec::Flatten => write!(f, "flatten"),
        }
    }
}

fn bad(s: &str) -> Error {
    Error::CorruptFile(format!("unrecognized layer descriptor {s:?}"))
}

fn parse_pair(s: &str, whole: &str) -> Result<[usize; 2]> {
    let (a, b) = s.split_once('x').ok_or_else(|| bad(whole))?;
    Ok([a.parse().map_err(|_| bad(whole))?, b.parse().map_err(|_| bad(whole))?])
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<usize> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(|| bad(s)) };
        let float = |i: usize| -> Result<f64> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(|| bad(s)) };
        let conv_fields = || -> Result<(usize, usize, [usize; 2], [usize; 2], [usize; 2], bool)> {
            if parts.len() != 7 {
                return Err(bad(s));
            }
            let bias = match parts[6] {
                "bias" => true,
                "nobias" => false,
                _ => return Err(bad(s)),
            };
            Ok((num(1)?, num(2)?, parse_pair(parts[3], s)?, parse_pair(parts[4], s)?, parse_pair(parts[5], s)?, bias))
        };
        let expect = |n: usize| if parts.len() == n { Ok(()) } else { Err(bad(s)) };
        Ok(match parts[0] {
            "conv2d" => {
                let (in_ch, out_ch, kernel, stride, padding, bias) = conv_fields()?;
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, bias }
            }
            "convt2d" => {
                let (in_ch, out_ch, kernel, stride, padding, bias) = conv_fields()?;
                LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding, bias }
            }
            "bn2d" => {
                expect(4)?;
                LayerSpec::BatchNorm2d { channels: num(1)?, eps: float(2)?, momentum: float(3)? }
            }
            "dense" => {
                expect(3)?;
                LayerSpec::Dense { inputs: num(1)?, outputs: num(2)? }
            }
            "relu" => {
                expect(1)?;
                LayerSpec::Act(Activation::Relu)
            }
            "leaky_relu" => {
                expect(2)?;
                LayerSpec::Act(Activation::LeakyRelu(float(1)?))
            }
            "tanh" => {
                expect(1)?;
                LayerSpec::Act(Activation::Tanh)
            }
            "sigmoid" => {
                expect(1)?;
                LayerSpec::Act(Activation::Sigmoid)
            }
            "maxpool2d" => {
                expect(3)?;
                LayerSpec::MaxPool2d { kernel: num(1)?, stride: num(2)? }
            }
            "flatten" => {
                expect(1)?;
                LayerSpec::Flatten
            }
            _ => return Err(bad(s)),
        })
    }
}

/// A sequential architecture: per-sample input shape plus ordered layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: &[usize], layers: Vec<LayerSpec>) -> Self {
        Self { input: input.to_vec(), layers }
    }

    /// Per-sample output shape of every layer, or the first incompatibility.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::InvalidShape(self.input.clone()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input.clone();
        for (layer, spec) in self.layers.iter().enumerate() {
            cur = spec.output_shape(&cur).map_err(|reason| Error::ShapeChain { layer, reason })?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shape_chain()?.pop().unwrap_or_else(|| self.input.clone()))
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv2d { .. })).count()
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool2d { .. })).count()
    }

    pub fn dense_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count()
    }

    /// Layers that own at least one trainable tensor.
    pub fn learnable_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.param_shapes().is_empty()).count()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.param_shapes()).map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Single-line text form, e.g. `input=3x16x16;conv2d:3:8:3x3:1x1:1x1:bias;relu`.
    pub fn descriptor(&self) -> String {
        let input: Vec<String> = self.input.iter().map(|d| d.to_string()).collect();
        let mut out = format!("input={}", input.join("x"));
        for l in &self.layers {
            out.push(';');
            out.push_str(&l.to_string());
        }
        out
    }

    pub fn parse(descriptor: &str) -> Result<Self> {
        let mut parts = descriptor.split(';');
        let head = parts.next().unwrap_or_default();
        let dims = head.strip_prefix("input=").ok_or_else(|| bad(head))?;
        let input = dims.split('x').map(|d| d.parse::<usize>().map_err(|_| bad(head))).collect::<Result<Vec<_>>>()?;
        let layers = parts.map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(Self { input, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_size() {
        let l = LayerSpec::conv(3, 8, 4, 2, 1, false);
        assert_eq!(l.output_shape(&[3, 64, 64]).unwrap(), vec![8, 32, 32]);
        assert!(l.output_shape(&[4, 64, 64]).is_err());
        let t = LayerSpec::conv_transpose(8, 3, 4, 2, 1, false);
        assert_eq!(t.output_shape(&[8, 32, 32]).unwrap(), vec![3, 64, 64]);
        let seed = LayerSpec::conv_transpose(100, 16, 4, 1, 0, false);
        assert_eq!(seed.output_shape(&[100, 1, 1]).unwrap(), vec![16, 4, 4]);
    }

    #[test]
    fn pool_chain_224_to_7() {
        let pool = LayerSpec::MaxPool2d { kernel: 2, stride: 2 };
        let mut s = vec![1, 224, 224];
        let mut sides = vec![224];
        for _ in 0..5 {
            s = pool.output_shape(&s).unwrap();
            sides.push(s[1]);
        }
        assert_eq!(sides, vec![224, 112, 56, 28, 14, 7]);
    }

    #[test]
    fn chain_rejects_mismatch() {
        let spec = NetworkSpec::new(&[3, 8, 8], vec![LayerSpec::conv(3, 4, 3, 1, 1, true), LayerSpec::Flatten, LayerSpec::Dense { inputs: 100, outputs: 2 }]);
        match spec.shape_chain() {
            Err(Error::ShapeChain { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = NetworkSpec::new(
            &[3, 16, 16],
            vec![
                LayerSpec::conv(3, 8, 4, 2, 1, false),
                LayerSpec::BatchNorm2d { channels: 8, eps: 1e-5, momentum: 0.1 },
                LayerSpec::Act(Activation::LeakyRelu(0.2)),
                LayerSpec::conv_transpose(8, 4, 4, 2, 1, true),
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::Act(Activation::Tanh),
                LayerSpec::Act(Activation::Sigmoid),
                LayerSpec::Act(Activation::Relu),
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 64, outputs: 3 },
            ],
        );
        let text = spec.descriptor();
        assert_eq!(NetworkSpec::parse(&text).unwrap(), spec);
        assert!(NetworkSpec::parse("input=3x4;bogus").is_err());
    }
}
