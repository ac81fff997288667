//! DCGAN generator/discriminator construction, adversarial training and
//! sampling.

use crate::dataio::{denormalize, normalize, resize_bilinear, PixelRange, RgbImage};
use crate::error::{Error, Result};
use crate::loss::{disc_loss, gen_loss, minimax_value};
use crate::nn::{Activation, InitScheme, LayerSpec, Mode, Network, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GanTrainConfig {
    pub latent_dim: usize,
    pub channels: usize,
    pub image_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    pub base_width: usize,
    pub leaky_slope: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            channels: 3,
            image_size: 64,
            epochs: 650,
            batch_size: 128,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 50,
            base_width: 64,
            leaky_slope: 0.2,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return bad(format!("image_size must be a power of two >= 16, got {}", self.image_size));
        }
        if self.latent_dim == 0 || self.channels == 0 || self.base_width == 0 || self.batch_size == 0 {
            return bad("latent_dim, channels, base_width and batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        Ok(())
    }

    /// Number of resolution doublings from the 4×4 seed to `image_size`.
    fn doublings(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.beta1, self.beta2)
    }
}

fn bn(channels: usize) -> LayerSpec {
    LayerSpec::BatchNorm2d { channels, eps: 1e-5, momentum: 0.1 }
}

/// `z[latent,1,1]` up to `[channels, size, size]` through transposed
/// convolutions, ending in Tanh.
pub fn build_generator(cfg: &GanTrainConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let d = cfg.doublings();
    let mut width = cfg.base_width << (d - 1);
    let mut layers = vec![LayerSpec::conv_transpose(cfg.latent_dim, width, 4, 1, 0, false), bn(width), LayerSpec::Act(Activation::Relu)];
    for _ in 1..d {
        layers.push(LayerSpec::conv_transpose(width, width / 2, 4, 2, 1, false));
        layers.push(bn(width / 2));
        layers.push(LayerSpec::Act(Activation::Relu));
        width /= 2;
    }
    layers.push(LayerSpec::conv_transpose(width, cfg.channels, 4, 2, 1, false));
    layers.push(LayerSpec::Act(Activation::Tanh));
    Ok(NetworkSpec::new(&[cfg.latent_dim, 1, 1], layers))
}

/// Image to a `[N,1]` probability through strided convolutions.
pub fn build_discriminator(cfg: &GanTrainConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let d = cfg.doublings();
    let leaky = LayerSpec::Act(Activation::LeakyRelu(cfg.leaky_slope));
    let mut layers = vec![LayerSpec::conv(cfg.channels, cfg.base_width, 4, 2, 1, false), leaky.clone()];
    let mut width = cfg.base_width;
    for _ in 1..d {
        layers.push(LayerSpec::conv(width, width * 2, 4, 2, 1, false));
        layers.push(bn(width * 2));
        layers.push(leaky.clone());
        width *= 2;
    }
    layers.push(LayerSpec::conv(width, 1, 4, 1, 0, false));
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Act(Activation::Sigmoid));
    Ok(NetworkSpec::new(&[cfg.channels, cfg.image_size, cfg.image_size], layers))
}

/// Resizes images to `size`×`size` and maps them to `[−1,1]`.
pub fn gan_tensor<T: Scalar>(images: &[RgbImage], size: usize) -> Result<Tensor<T>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let resized = images
        .iter()
        .map(|img| if img.width() == size && img.height() == size { Ok(img.clone()) } else { resize_bilinear(img, size, size) })
        .collect::<Result<Vec<_>>>()?;
    normalize(&resized, PixelRange::Symmetric)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    /// 1-based.
    pub epoch: usize,
    /// 0-based within the epoch.
    pub iter: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Minimax objective on the discriminator-step batch.
    pub minimax: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<IterRecord>,
}

impl LossHistory {
    pub const HEADER: [&'static str; 6] = ["epoch", "iter", "loss_d", "loss_g", "d_real", "d_fake"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        use crate::dataio::fmt_float;
        self.records
            .iter()
            .map(|r| {
                vec![r.epoch.to_string(), r.iter.to_string(), fmt_float(r.loss_d), fmt_float(r.loss_g), fmt_float(r.d_real), fmt_float(r.d_fake)]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        crate::dataio::csv_text(&Self::HEADER, &self.rows())
    }
}

/// Training state for one class-specific GAN.
pub struct GanTrainer<T> {
    cfg: GanTrainConfig,
    data: Tensor<T>,
    generator: Network<T>,
    discriminator: Network<T>,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
    rng: Rng,
    epoch: usize,
    history: LossHistory,
}

impl<T: Scalar> GanTrainer<T> {
    /// `data` is `[N, channels, size, size]` in `[−1,1]`.
    pub fn new(data: Tensor<T>, cfg: GanTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let expected = [data.shape()[0], cfg.channels, cfg.image_size, cfg.image_size];
        if data.shape() != expected {
            return Err(Error::ShapeMismatch { expected: expected.to_vec(), got: data.shape().to_vec() });
        }
        let root = Rng::new(cfg.seed);
        let generator = Network::init(build_generator(&cfg)?, &mut root.fork(1), InitScheme::Dcgan)?;
        let discriminator = Network::init(build_discriminator(&cfg)?, &mut root.fork(2), InitScheme::Dcgan)?;
        let (opt_g, opt_d) = (Adam::new(cfg.adam()), Adam::new(cfg.adam()));
        Ok(Self { rng: root.fork(3), cfg, data, generator, discriminator, opt_g, opt_d, epoch: 0, history: LossHistory::default() })
    }

    pub fn config(&self) -> &GanTrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Network<T> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Network<T> {
        &self.discriminator
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn into_parts(self) -> (Network<T>, Network<T>, LossHistory) {
        (self.generator, self.discriminator, self.history)
    }

    fn noise(&mut self, n: usize) -> Result<Tensor<T>> {
        Tensor::randn(&[n, self.cfg.latent_dim, 1, 1], &mut self.rng)
    }

    /// Discriminator update on a real batch and a fresh fake batch. Returns
    /// `(loss_d, mean D(x), mean D(x̃), minimax value)`.
    pub fn d_step(&mut self, real: &Tensor<T>) -> Result<(f64, f64, f64, f64)> {
        let n = real.shape()[0];
        let z = self.noise(n)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let fake = self.generator.forward(&mut tape, zv, Mode::Train, false)?.output;
        let fake = tape.constant(tape.value(fake).clone());
        let xv = tape.constant(real.clone());
        let on_real = self.discriminator.forward(&mut tape, xv, Mode::Train, true)?;
        let on_fake = self.discriminator.forward(&mut tape, fake, Mode::Train, true)?;
        let loss = disc_loss(&mut tape, on_real.output, on_fake.output)?;
        let loss_d = tape.value(loss).item()?.as_f64();
        let minimax = minimax_value(tape.value(on_real.output), tape.value(on_fake.output))?.as_f64();
        let d_real = mean(tape.value(on_real.output));
        let d_fake = mean(tape.value(on_fake.output));
        if !loss_d.is_finite() {
            return Err(Error::NonFiniteLoss(format!("loss_d={loss_d} d_real={d_real} d_fake={d_fake}")));
        }
        tape.backward(loss)?;
        self.discriminator.zero_grad();
        self.discriminator.accumulate_grads(&tape, &on_real);
        self.discriminator.accumulate_grads(&tape, &on_fake);
        self.opt_d.step(&mut self.discriminator.params_mut())?;
        Ok((loss_d, d_real, d_fake, minimax))
    }

    /// Generator update through the discriminator's gradients on a fresh
    /// fake batch of `n` samples. Returns `loss_g`.
    pub fn g_step(&mut self, n: usize) -> Result<f64> {
        let z = self.noise(n)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let fwd = self.generator.forward(&mut tape, zv, Mode::Train, true)?;
        let score = self.discriminator.forward(&mut tape, fwd.output, Mode::Train, false)?.output;
        let loss = gen_loss(&mut tape, score)?;
        let loss_g = tape.value(loss).item()?.as_f64();
        if !loss_g.is_finite() {
            return Err(Error::NonFiniteLoss(format!("loss_g={loss_g}")));
        }
        tape.backward(loss)?;
        self.generator.zero_grad();
        self.generator.accumulate_grads(&tape, &fwd);
        self.opt_g.step(&mut self.generator.params_mut())?;
        Ok(loss_g)
    }

    /// One pass over the shuffled data: a D step then a G step per batch.
    pub fn train_epoch(&mut self) -> Result<()> {
        let n = self.data.shape()[0];
        let batch = self.cfg.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        self.epoch += 1;
        for (iter, idx) in order.chunks(batch).enumerate() {
            let real = self.data.gather_outer(idx)?;
            let ctx = |e: Error, epoch: usize| match e {
                Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!("epoch {epoch} iter {iter}: {msg}")),
                other => other,
            };
            let (loss_d, d_real, d_fake, minimax) = self.d_step(&real).map_err(|e| ctx(e, self.epoch))?;
            let loss_g = self.g_step(idx.len()).map_err(|e| ctx(e, self.epoch))?;
            self.history.records.push(IterRecord { epoch: self.epoch, iter, loss_d, loss_g, d_real, d_fake, minimax });
        }
        Ok(())
    }
}

fn mean<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.numel() as f64
}

/// Runs `cfg.epochs` epochs. `checkpoint` is called every
/// `cfg.checkpoint_every` epochs and after the final one.
pub fn train_dcgan<T: Scalar>(
    data: Tensor<T>,
    cfg: &GanTrainConfig,
    mut checkpoint: impl FnMut(usize, &Network<T>, &Network<T>) -> Result<()>,
) -> Result<(Network<T>, Network<T>, LossHistory)> {
    let mut trainer = GanTrainer::new(data, cfg.clone())?;
    for epoch in 1..=cfg.epochs {
        trainer.train_epoch()?;
        let scheduled = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        if scheduled || epoch == cfg.epochs {
            checkpoint(epoch, trainer.generator(), trainer.discriminator())?;
        }
    }
    Ok(trainer.into_parts())
}

/// Draws `n` images, one latent vector at a time, with eval-mode batch
/// norm so each image depends only on its own noise.
pub fn sample_images<T: Scalar>(generator: &Network<T>, n: usize, rng: &mut Rng) -> Result<Vec<RgbImage>> {
    let latent = generator.spec().input.clone();
    let mut shape = vec![1];
    shape.extend_from_slice(&latent);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = Tensor::randn(&shape, rng)?;
        let y = generator.infer(&z)?;
        out.extend(denormalize(&y, PixelRange::Symmetric)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> GanTrainConfig {
        GanTrainConfig { image_size: 16, base_width: 8, latent_dim: 16, batch_size: 8, epochs: 2, seed: 3, ..Default::default() }
    }

    fn fixture(n: usize) -> Tensor<f32> {
        let mut rng = Rng::new(9);
        Tensor::rand_uniform(&[n, 3, 16, 16], -1.0, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn default_generator_chain() {
        let spec = build_generator(&GanTrainConfig::default()).unwrap();
        assert_eq!(spec.input, vec![100, 1, 1]);
        let chain = spec.shape_chain().unwrap();
        let convs: Vec<Vec<usize>> = chain.iter().step_by(3).cloned().collect();
        assert_eq!(convs, vec![vec![512, 4, 4], vec![256, 8, 8], vec![128, 16, 16], vec![64, 32, 32], vec![3, 64, 64]]);
        assert_eq!(chain.last().unwrap(), &vec![3, 64, 64]);
    }

    #[test]
    fn default_discriminator_chain() {
        let spec = build_discriminator(&GanTrainConfig::default()).unwrap();
        let sizes: Vec<usize> = std::iter::once(&spec.input).chain(&spec.shape_chain().unwrap()).filter(|s| s.len() == 3).map(|s| s[1]).collect();
        let mut uniq = sizes.clone();
        uniq.dedup();
        assert_eq!(uniq, vec![64, 32, 16, 8, 4, 1]);
        assert_eq!(spec.output_shape().unwrap(), vec![1]);
    }

    #[test]
    fn rejects_bad_sizes() {
        for size in [8, 24, 0] {
            let cfg = GanTrainConfig { image_size: size, ..Default::default() };
            assert!(matches!(build_generator(&cfg), Err(Error::InvalidConfig(_))));
        }
        let cfg = GanTrainConfig { latent_dim: 0, ..Default::default() };
        assert!(matches!(build_discriminator(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn untrained_discriminator_is_near_half() {
        let cfg = GanTrainConfig { image_size: 16, base_width: 8, ..Default::default() };
        let d = Network::<f32>::init(build_discriminator(&cfg).unwrap(), &mut Rng::new(1), InitScheme::Dcgan).unwrap();
        let x = Tensor::randn(&[100, 3, 16, 16], &mut Rng::new(2)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mut d2 = d.clone();
        let out = d2.forward(&mut tape, xv, Mode::Train, false).unwrap().output;
        let m = mean(tape.value(out));
        assert!((0.2..=0.8).contains(&m), "{m}");
        assert!(d.infer(&Tensor::randn(&[4, 3, 16, 16], &mut Rng::new(3)).unwrap()).unwrap().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn steps_only_touch_their_own_network() {
        let mut t = GanTrainer::new(fixture(8), desk()).unwrap();
        let params = |n: &Network<f32>| n.params().flat_map(|p| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        let (g0, d0) = (params(t.generator()), params(t.discriminator()));
        let real = t.data.clone();
        t.d_step(&real).unwrap();
        assert_eq!(params(t.generator()), g0);
        assert_ne!(params(t.discriminator()), d0);
        let d1 = params(t.discriminator());
        t.g_step(8).unwrap();
        assert_eq!(params(t.discriminator()), d1);
        assert_ne!(params(t.generator()), g0);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let cfg = GanTrainConfig { lr: 0.0, ..desk() };
        let mut t = GanTrainer::new(fixture(16), cfg).unwrap();
        let before: Vec<_> = t.generator().params().chain(t.discriminator().params()).map(|p| p.value.clone()).collect();
        t.train_epoch().unwrap();
        let after: Vec<_> = t.generator().params().chain(t.discriminator().params()).map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_reproducible_and_consistent() {
        let run = || train_dcgan(fixture(16), &desk(), |_, _, _| Ok(())).unwrap();
        let (g1, _, h1) = run();
        let (g2, _, h2) = run();
        assert_eq!(h1.to_csv(), h2.to_csv());
        assert_eq!(g1.fingerprint(), g2.fingerprint());
        assert_eq!(h1.records.len(), 4);
        for r in &h1.records {
            assert_eq!(r.loss_d, -r.minimax);
            assert!(r.d_real > 0.0 && r.d_real < 1.0 && r.d_fake > 0.0 && r.d_fake < 1.0);
        }
        assert!(h1.to_csv().starts_with("epoch,iter,loss_d,loss_g,d_real,d_fake\n1,0,"));
    }

    #[test]
    fn checkpoint_schedule() {
        let cfg = GanTrainConfig { epochs: 5, checkpoint_every: 2, batch_size: 16, ..desk() };
        let mut seen = Vec::new();
        train_dcgan(fixture(4), &cfg, |e, _, _| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2, 4, 5]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Network::<f32>::init(build_generator(&desk()).unwrap(), &mut Rng::new(4), InitScheme::Dcgan).unwrap();
        assert!(sample_images(&g, 0, &mut Rng::new(1)).unwrap().is_empty());
        let a = sample_images(&g, 3, &mut Rng::new(1)).unwrap();
        let b = sample_images(&g, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a[0].width(), a[0].height()), (16, 16));
    }
}
