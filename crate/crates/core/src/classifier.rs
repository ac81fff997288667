//! VGG-16-shaped classifier: construction, training, prediction.

use crate::dataio::{fmt_float, normalize, resize_bilinear, stratified_split, PixelRange, RgbImage, Split};
use crate::error::{Error, Result};
use crate::loss::cross_entropy;
use crate::nn::{argmax_rows, softmax, Activation, InitScheme, LayerSpec, Mode, Network, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv(usize),
    Pool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VggSpec {
    pub conv_plan: Vec<Stage>,
    /// Hidden dense widths; a final layer to `num_classes` follows.
    pub dense_plan: Vec<usize>,
    pub num_classes: usize,
    pub channels: usize,
    pub width_scale: f64,
    pub input_size: usize,
}

impl Default for VggSpec {
    fn default() -> Self {
        use Stage::{Conv, Pool};
        Self {
            conv_plan: vec![
                Conv(64), Conv(64), Pool,
                Conv(128), Conv(128), Pool,
                Conv(256), Conv(256), Conv(256), Pool,
                Conv(512), Conv(512), Conv(512), Pool,
                Conv(512), Conv(512), Conv(512), Pool,
            ],
            dense_plan: vec![4096, 4096],
            num_classes: 3,
            channels: 3,
            width_scale: 1.0,
            input_size: 224,
        }
    }
}

impl VggSpec {
    fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_scale).round() as usize).max(1)
    }
}

/// 3×3 same-padded convolutions with ReLU, 2×2 max pools, then a dense
/// stack. Logits are returned; softmax is applied by the loss and by
/// [`predict_proba`].
pub fn build_vgg16(spec: &VggSpec) -> Result<NetworkSpec> {
    let pools = spec.conv_plan.iter().filter(|s| **s == Stage::Pool).count();
    let divisor = 1usize << pools;
    if spec.input_size == 0 || !spec.input_size.is_multiple_of(divisor) {
        return Err(Error::IndivisibleInputSize { size: spec.input_size, divisor });
    }
    if spec.num_classes < 2 {
        return Err(Error::InvalidConfig(format!("num_classes must be >= 2, got {}", spec.num_classes)));
    }
    if !(spec.width_scale > 0.0 && spec.width_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("width_scale must be positive, got {}", spec.width_scale)));
    }
    let mut layers = Vec::new();
    let mut ch = spec.channels;
    for stage in &spec.conv_plan {
        match *stage {
            Stage::Conv(w) => {
                let out = spec.scaled(w);
                layers.push(LayerSpec::conv(ch, out, 3, 1, 1, true));
                layers.push(LayerSpec::Act(Activation::Relu));
                ch = out;
            }
            Stage::Pool => layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 }),
        }
    }
    let side = spec.input_size / divisor;
    let mut width = ch * side * side;
    layers.push(LayerSpec::Flatten);
    for &h in &spec.dense_plan {
        let h = spec.scaled(h);
        layers.push(LayerSpec::Dense { inputs: width, outputs: h });
        layers.push(LayerSpec::Act(Activation::Relu));
        width = h;
    }
    layers.push(LayerSpec::Dense { inputs: width, outputs: spec.num_classes });
    Ok(NetworkSpec::new(&[spec.channels, spec.input_size, spec.input_size], layers))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClfTrainConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub width_scale: f64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            channels: 3,
            input_size: 224,
            epochs: 75,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            val_fraction: 0.1,
            width_scale: 1.0,
        }
    }
}

impl ClfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.batch_size == 0 || self.channels == 0 {
            return bad("batch_size and channels must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        build_vgg16(&self.vgg()).map(|_| ())
    }

    pub fn vgg(&self) -> VggSpec {
        VggSpec {
            num_classes: self.num_classes,
            channels: self.channels,
            width_scale: self.width_scale,
            input_size: self.input_size,
            ..Default::default()
        }
    }
}

/// Resizes images to `size`×`size` and scales pixels to `[0,1]`.
pub fn clf_tensor<T: Scalar>(images: &[RgbImage], size: usize) -> Result<Tensor<T>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let resized = images
        .iter()
        .map(|img| if img.width() == size && img.height() == size { Ok(img.clone()) } else { resize_bilinear(img, size, size) })
        .collect::<Result<Vec<_>>>()?;
    normalize(&resized, PixelRange::Unit)
}

/// Inputs with their integer labels.
#[derive(Clone, Debug)]
pub struct LabeledSet<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch { expected: vec![labels.len()], got: vec![inputs.shape()[0]] });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self { inputs: self.inputs.gather_outer(idx)?, labels: idx.iter().map(|&i| self.labels[i]).collect() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// NaN when there is no validation set.
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurves {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingCurves {
    pub const HEADER: [&'static str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.epochs
            .iter()
            .map(|r| vec![r.epoch.to_string(), fmt_float(r.train_loss), fmt_float(r.train_acc), fmt_float(r.val_loss), fmt_float(r.val_acc)])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        crate::dataio::csv_text(&Self::HEADER, &self.rows())
    }
}

fn check_classes(labels: &[usize], k: usize, what: &str) -> Result<()> {
    for c in 0..k {
        if !labels.contains(&c) {
            return Err(Error::EmptyClass(format!("class {c} has no {what} samples")));
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: l, classes: k });
    }
    Ok(())
}

pub struct ClfTrainer<T> {
    cfg: ClfTrainConfig,
    train: LabeledSet<T>,
    val: Option<LabeledSet<T>>,
    net: Network<T>,
    opt: Adam<T>,
    rng: Rng,
    curves: TrainingCurves,
    best: Option<(f64, Network<T>)>,
}

impl<T: Scalar> ClfTrainer<T> {
    pub fn new(train: LabeledSet<T>, val: Option<LabeledSet<T>>, cfg: ClfTrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_classes(&train.labels, cfg.num_classes, "training")?;
        if let Some(v) = &val {
            check_classes(&v.labels, cfg.num_classes, "validation")?;
        }
        let root = Rng::new(cfg.seed);
        let net = Network::init(build_vgg16(&cfg.vgg())?, &mut root.fork(1), InitScheme::He)?;
        let opt = Adam::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2));
        Ok(Self { rng: root.fork(2), cfg, train, val, net, opt, curves: TrainingCurves::default(), best: None })
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn curves(&self) -> &TrainingCurves {
        &self.curves
    }

    /// Network with the highest validation accuracy so far (earliest wins ties).
    pub fn best(&self) -> Option<&Network<T>> {
        self.best.as_ref().map(|(_, n)| n)
    }

    pub fn into_parts(self) -> (Network<T>, Option<Network<T>>, TrainingCurves) {
        (self.net, self.best.map(|(_, n)| n), self.curves)
    }

    /// One shuffled pass of minibatch Adam. Training loss and accuracy are
    /// accumulated from the minibatch forward passes.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        let epoch = self.curves.epochs.len() + 1;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(self.cfg.batch_size) {
            let batch = self.train.subset(idx)?;
            let mut tape = Tape::new();
            let x = tape.constant(batch.inputs);
            let fwd = self.net.forward(&mut tape, x, Mode::Train, true)?;
            let loss = cross_entropy(&mut tape, fwd.output, &batch.labels)?;
            let value = tape.value(loss).item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}: train_loss={value}")));
            }
            let logits = tape.value(fwd.output);
            let pred = argmax_rows(idx.len(), self.cfg.num_classes, logits.data());
            correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            loss_sum += value * idx.len() as f64;
            tape.backward(loss)?;
            self.net.zero_grad();
            self.net.accumulate_grads(&tape, &fwd);
            self.opt.step(&mut self.net.params_mut())?;
        }
        let (val_loss, val_acc) = match &self.val {
            Some(v) => evaluate(&self.net, v, self.cfg.batch_size)?,
            None => (f64::NAN, f64::NAN),
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / n as f64, train_acc: correct as f64 / n as f64, val_loss, val_acc };
        if self.val.is_some() && self.best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            self.best = Some((val_acc, self.net.clone()));
        }
        self.curves.epochs.push(record);
        Ok(record)
    }
}

/// Splits `data` into stratified train/validation parts and trains for
/// `cfg.epochs`. Returns the final network, the best-validation network
/// and the per-epoch curves.
pub fn train_classifier<T: Scalar>(data: &LabeledSet<T>, cfg: &ClfTrainConfig) -> Result<(Network<T>, Network<T>, TrainingCurves)> {
    cfg.validate()?;
    check_classes(&data.labels, cfg.num_classes, "input")?;
    let splits = stratified_split(&data.labels, cfg.num_classes, cfg.val_fraction, 0.0, cfg.seed);
    let pick = |s: Split| splits.iter().enumerate().filter(|(_, &x)| x == s).map(|(i, _)| i).collect::<Vec<_>>();
    let (train_idx, val_idx) = (pick(Split::Train), pick(Split::Val));
    let train = data.subset(&train_idx)?;
    let val = if val_idx.is_empty() { None } else { Some(data.subset(&val_idx)?) };
    let mut trainer = ClfTrainer::new(train, val, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.train_epoch()?;
    }
    let (last, best, curves) = trainer.into_parts();
    let best = best.unwrap_or_else(|| last.clone());
    Ok((last, best, curves))
}

/// Eval-mode logits in batches of `batch`.
pub fn logits<T: Scalar>(net: &Network<T>, inputs: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
    let n = inputs.shape()[0];
    let mut data = Vec::new();
    let mut k = 0;
    for start in (0..n).step_by(batch.max(1)) {
        let out = net.infer(&inputs.slice_outer(start, (start + batch).min(n))?)?;
        k = out.shape()[1];
        data.extend_from_slice(out.data());
    }
    Tensor::new(&[n, k], data)
}

/// Mean cross-entropy and accuracy.
pub fn evaluate<T: Scalar>(net: &Network<T>, set: &LabeledSet<T>, batch: usize) -> Result<(f64, f64)> {
    let z = logits(net, &set.inputs, batch)?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let loss = cross_entropy(&mut tape, zv, &set.labels)?;
    let k = z.shape()[1];
    let pred = argmax_rows(set.len(), k, z.data());
    let correct = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok((tape.value(loss).item()?.as_f64(), correct as f64 / set.len() as f64))
}

/// Softmax class probabilities, `[N, K]`.
pub fn predict_proba<T: Scalar>(net: &Network<T>, inputs: &Tensor<T>) -> Result<Tensor<T>> {
    softmax(&logits(net, inputs, 32)?)
}

/// Row-wise argmax of a `[N, K]` probability table; ties go to the lower index.
pub fn classify<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    argmax_rows(n, k, probs.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg() -> ClfTrainConfig {
        ClfTrainConfig { input_size: 32, width_scale: 0.0625, epochs: 2, batch_size: 4, val_fraction: 0.25, ..Default::default() }
    }

    fn random_set(n: usize, size: usize, seed: u64) -> LabeledSet<f32> {
        let mut rng = Rng::new(seed);
        let x = Tensor::rand_uniform(&[n, 3, size, size], 0.0, 1.0, &mut rng).unwrap();
        LabeledSet::new(x, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn full_scale_layout() {
        let spec = build_vgg16(&VggSpec::default()).unwrap();
        assert_eq!((spec.conv_count(), spec.pool_count(), spec.dense_count()), (13, 5, 3));
        assert_eq!(spec.learnable_layer_count(), 16);
        let chain = spec.shape_chain().unwrap();
        let flat_at = spec.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        assert_eq!(chain[flat_at - 1], vec![512, 7, 7]);
        assert_eq!(spec.output_shape().unwrap(), vec![3]);
        assert_eq!(spec.param_count(), 134_272_835);
    }

    #[test]
    fn desk_scale_layout() {
        let spec = build_vgg16(&VggSpec { width_scale: 0.125, input_size: 64, ..Default::default() }).unwrap();
        let flat_at = spec.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        assert_eq!(spec.shape_chain().unwrap()[flat_at - 1], vec![64, 2, 2]);
    }

    #[test]
    fn input_size_must_divide() {
        let err = build_vgg16(&VggSpec { input_size: 100, ..Default::default() });
        assert!(matches!(err, Err(Error::IndivisibleInputSize { size: 100, divisor: 32 })));
        assert!(build_vgg16(&VggSpec { num_classes: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn classify_tie_break() {
        let p = Tensor::<f32>::new(&[2, 3], vec![0.2, 0.5, 0.3, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(classify(&p), vec![1, 0]);
    }

    #[test]
    fn probabilities_are_rows_and_permute() {
        let cfg = desk_cfg();
        let net = Network::<f32>::init(build_vgg16(&cfg.vgg()).unwrap(), &mut Rng::new(0), InitScheme::He).unwrap();
        let set = random_set(5, 32, 1);
        let p = predict_proba(&net, &set.inputs).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let perm = [3, 0, 4, 1, 2, 3];
        let q = predict_proba(&net, &set.inputs.gather_outer(&perm).unwrap()).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            assert_eq!(&q.data()[r * 3..r * 3 + 3], &p.data()[src * 3..src * 3 + 3]);
        }
        assert_eq!(&q.data()[0..3], &q.data()[15..18]);
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let cfg = ClfTrainConfig { lr: 0.0, ..desk_cfg() };
        let set = random_set(12, 32, 2);
        let mut t = ClfTrainer::new(set.clone(), Some(set), cfg).unwrap();
        let before = t.network().fingerprint();
        let a = t.train_epoch().unwrap();
        let b = t.train_epoch().unwrap();
        assert_eq!(before, t.network().fingerprint());
        assert_eq!(a.val_acc, b.val_acc);
        assert_eq!(a.train_acc, b.train_acc);
    }

    #[test]
    fn training_is_deterministic() {
        let set = random_set(12, 32, 3);
        let (a, best_a, ca) = train_classifier(&set, &desk_cfg()).unwrap();
        let (b, _, cb) = train_classifier(&set, &desk_cfg()).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(ca.epochs.len(), 2);
        assert!(ca.to_csv().starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n1,"));
        assert_eq!(best_a.spec(), a.spec());
    }

    #[test]
    fn missing_class_is_rejected() {
        let mut set = random_set(6, 32, 4);
        set.labels = vec![0, 1, 0, 1, 0, 1];
        assert!(matches!(train_classifier(&set, &desk_cfg()), Err(Error::EmptyClass(_))));
    }
}
