use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NormStats, Rng, Tape, Tensor, Var};

/// Parameter initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights ~ N(0, 0.02), γ ~ N(1, 0.02), β and biases zero.
    Dcgan,
    /// Weights ~ N(0, 2/fan_in), γ = 1, β and biases zero.
    He,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, value: Tensor<T>) -> Self {
        let grad = vec![T::zero(); value.numel()];
        Self { name, value, grad }
    }
}

#[derive(Clone, Debug)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Vec<Param<T>>,
    /// Running mean and variance for batch norm; empty otherwise.
    pub buffers: Vec<(String, Tensor<T>)>,
}

/// Output of a forward pass plus the tape handles of every parameter used.
pub struct Forward {
    pub output: Var,
    bindings: Vec<(usize, usize, Var)>,
}

/// A sequential network with parameter storage.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

fn fan_in(spec: &LayerSpec) -> usize {
    match *spec {
        LayerSpec::Conv2d { in_ch, kernel, .. } | LayerSpec::ConvTranspose2d { in_ch, kernel, .. } => in_ch * kernel[0] * kernel[1],
        LayerSpec::Dense { inputs, .. } => inputs,
        _ => 1,
    }
}

impl<T: Scalar> Network<T> {
    /// Validates the shape chain, then allocates and initializes parameters.
    pub fn init(spec: NetworkSpec, rng: &mut Rng, scheme: InitScheme) -> Result<Self> {
        spec.shape_chain()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (idx, ls) in spec.layers.iter().enumerate() {
            let mut params = Vec::new();
            for (role, shape) in ls.param_shapes() {
                let value = match (role, scheme) {
                    ("bias", _) | ("beta", _) => Tensor::zeros(&shape)?,
                    ("gamma", InitScheme::Dcgan) => Tensor::randn_scaled(&shape, T::one(), T::lit(0.02), rng)?,
                    ("gamma", InitScheme::He) => Tensor::ones(&shape)?,
                    (_, InitScheme::Dcgan) => Tensor::randn_scaled(&shape, T::zero(), T::lit(0.02), rng)?,
                    (_, InitScheme::He) => {
                        let std = (2.0 / fan_in(ls) as f64).sqrt();
                        Tensor::randn_scaled(&shape, T::zero(), T::lit(std), rng)?
                    }
                };
                params.push(Param::new(format!("{idx}.{role}"), value));
            }
            let buffers = ls
                .buffer_shapes()
                .into_iter()
                .map(|(role, shape)| {
                    let fill = if role == "running_var" { T::one() } else { T::zero() };
                    Ok((format!("{idx}.{role}"), Tensor::full(&shape, fill)?))
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer { spec: ls.clone(), params, buffers });
        }
        Ok(Self { spec, layers })
    }

    /// Rebuilds a network from a spec and named tensors (as produced by
    /// [`Network::named_tensors`]).
    pub fn from_named(spec: NetworkSpec, mut tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        spec.shape_chain()?;
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
            let pos = tensors
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::CorruptFile(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape {
                return Err(Error::ShapeMismatch { expected: shape.to_vec(), got: t.shape().to_vec() });
            }
            Ok(t)
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (idx, ls) in spec.layers.iter().enumerate() {
            let mut params = Vec::new();
            for (role, shape) in ls.param_shapes() {
                let name = format!("{idx}.{role}");
                params.push(Param::new(name.clone(), take(name, &shape)?));
            }
            let mut buffers = Vec::new();
            for (role, shape) in ls.buffer_shapes() {
                let name = format!("{idx}.{role}");
                buffers.push((name.clone(), take(name, &shape)?));
            }
            layers.push(Layer { spec: ls.clone(), params, buffers });
        }
        if let Some((extra, _)) = tensors.first() {
            return Err(Error::CorruptFile(format!("unexpected tensor {extra}")));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Every parameter and buffer in layer order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.params.iter().map(|p| (p.name.clone(), p.value.clone())));
            out.extend(layer.buffers.iter().cloned());
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Records the network on `tape`. In train mode batch norm uses batch
    /// statistics and updates its running statistics. With `track_params`
    /// the parameters are recorded as gradient-taking leaves; otherwise as
    /// constants.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode, track_params: bool) -> Result<Forward> {
        let (fwd, updates) = self.run(tape, input, mode, track_params)?;
        for (layer, mean, var) in updates {
            let LayerSpec::BatchNorm2d { momentum, .. } = self.layers[layer].spec else { unreachable!() };
            let m = T::lit(momentum);
            let keep = T::one() - m;
            let bufs = &mut self.layers[layer].buffers;
            for (r, b) in bufs[0].1.data_mut().iter_mut().zip(&mean) {
                *r = keep * *r + m * *b;
            }
            for (r, b) in bufs[1].1.data_mut().iter_mut().zip(&var) {
                *r = keep * *r + m * *b;
            }
        }
        Ok(fwd)
    }

    /// Eval-mode forward pass on a batch, without gradients or state changes.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (fwd, _) = self.run(&mut tape, x, Mode::Eval, false)?;
        Ok(tape.value(fwd.output).clone())
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, tape: &mut Tape<T>, input: Var, mode: Mode, track: bool) -> Result<(Forward, Vec<(usize, Vec<T>, Vec<T>)>)> {
        let got = tape.try_value(input)?.shape().to_vec();
        if got.len() != self.spec.input.len() + 1 || got[1..] != self.spec.input[..] {
            let mut expected = vec![got.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.spec.input);
            return Err(Error::ShapeMismatch { expected, got });
        }
        let mut bindings = Vec::new();
        let mut updates = Vec::new();
        let mut x = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut p = Vec::with_capacity(layer.params.len());
            for (pi, param) in layer.params.iter().enumerate() {
                let v = if track { tape.param(param.value.clone()) } else { tape.constant(param.value.clone()) };
                if track {
                    bindings.push((li, pi, v));
                }
                p.push(v);
            }
            x = match layer.spec {
                LayerSpec::Conv2d { stride, padding, .. } => tape.conv2d(x, p[0], p.get(1).copied(), stride, padding)?,
                LayerSpec::ConvTranspose2d { stride, padding, .. } => tape.conv_transpose2d(x, p[0], p.get(1).copied(), stride, padding)?,
                LayerSpec::BatchNorm2d { eps, .. } => {
                    let eps = T::lit(eps);
                    let stats = match mode {
                        Mode::Train => NormStats::Batch { eps },
                        Mode::Eval => NormStats::Running { mean: layer.buffers[0].1.data(), var: layer.buffers[1].1.data(), eps },
                    };
                    let (y, batch) = tape.batch_norm(x, p[0], p[1], stats)?;
                    if let Some((mean, var)) = batch {
                        updates.push((li, mean, var));
                    }
                    y
                }
                LayerSpec::Dense { .. } => tape.linear(x, p[0], Some(p[1]))?,
                LayerSpec::Act(kind) => tape.activation(x, kind)?,
                LayerSpec::MaxPool2d { kernel, stride } => tape.max_pool2d(x, kernel, stride)?,
                LayerSpec::Flatten => tape.flatten(x)?,
            };
        }
        Ok((Forward { output: x, bindings }, updates))
    }

    /// Adds the tape gradients of a tracked forward pass into each
    /// parameter's accumulated gradient.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, fwd: &Forward) {
        for &(li, pi, v) in &fwd.bindings {
            if let Some(g) = tape.grad(v) {
                let param = &mut self.layers[li].params[pi];
                param.grad.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
        }
    }

    /// Bit patterns of every parameter and buffer, for exact comparisons.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>()).collect()
    }
}
