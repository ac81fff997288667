use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ganaug_core::classifier::{clf_tensor, predict_proba, train_classifier, ClfTrainConfig, LabeledSet};
use ganaug_core::dataio::{
    class_dirs, encode_image, load_checkpoint, load_dataset, resize_bilinear, save_checkpoint, write_csv, Dataset, ImageFormat, RgbImage,
};
use ganaug_core::dcgan::{gan_tensor, sample_images, train_dcgan, GanTrainConfig};
use ganaug_core::metrics::{ssim_report, ChannelPolicy, EvalReport, PairingPolicy, ReportConfig, SsimConfig};
use ganaug_core::{Network, Rng};

use crate::config::{RunConfig, CLF_KEYS, EVAL_KEYS, GAN_KEYS, GENERATE_KEYS, SSIM_KEYS};
use crate::exit::{fail, CmdResult, Code, Coded};

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).code(Code::Data)
}

fn gan_config(cfg: &RunConfig) -> anyhow::Result<GanTrainConfig> {
    let out = GanTrainConfig {
        latent_dim: cfg.get("latent_dim")?,
        channels: cfg.get("channels")?,
        image_size: cfg.get("image_size")?,
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch_size")?,
        lr: cfg.get("lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        seed: cfg.get("seed")?,
        checkpoint_every: cfg.get("checkpoint_every")?,
        base_width: cfg.get("base_width")?,
        leaky_slope: cfg.get("leaky_slope")?,
    };
    out.validate()?;
    Ok(out)
}

pub fn train_gan(class: &str, data: &Path, out: &Path, config: RunConfig) -> CmdResult {
    let cfg = gan_config(&config).code(Code::Config)?;
    if cfg.channels != 3 {
        return Err(fail(Code::Config, "only 3-channel images are supported"));
    }
    let dataset = load_dataset(data, &[class.to_string()]).code(Code::Data)?;
    let images: Vec<RgbImage> = dataset.records.into_iter().map(|r| r.image).collect();
    let tensor = gan_tensor::<f32>(&images, cfg.image_size).code(Code::Data)?;
    create_dir(out)?;
    config.write(out).code(Code::Data)?;
    log::info!("training GAN for class {class} on {} images", images.len());
    let (generator, discriminator, history) = train_dcgan(tensor, &cfg, |epoch, g, d| {
        save_checkpoint(g, &out.join(format!("generator_epoch_{epoch:05}.gacp")))?;
        save_checkpoint(d, &out.join(format!("discriminator_epoch_{epoch:05}.gacp")))?;
        Ok(())
    })?;
    save_checkpoint(&generator, &out.join("generator.gacp"))?;
    save_checkpoint(&discriminator, &out.join("discriminator.gacp"))?;
    write_csv(&out.join("loss_history.csv"), &ganaug_core::dcgan::LossHistory::HEADER, &history.rows())?;
    Ok(())
}

fn load_network(path: &Path) -> CmdResult<Network> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display())).code(Code::Config)
}

pub fn generate(checkpoint: &Path, out: &Path, config: RunConfig) -> CmdResult {
    let n: usize = config.get("n").code(Code::Config)?;
    let seed: u64 = config.get("seed").code(Code::Config)?;
    let format = match config.str("format") {
        "ppm" => ImageFormat::Ppm,
        "png" => ImageFormat::Png,
        other => return Err(fail(Code::Config, format!("format must be ppm or png, got {other}"))),
    };
    let generator = load_network(checkpoint)?;
    let spec = generator.spec();
    let out_shape = spec.output_shape().code(Code::Config)?;
    if spec.input.len() != 3 || spec.input[1..] != [1, 1] || out_shape.len() != 3 || out_shape[0] != 3 {
        return Err(fail(Code::Config, format!("{} does not hold an RGB generator", checkpoint.display())));
    }
    create_dir(out)?;
    config.write(out).code(Code::Data)?;
    let images = sample_images(&generator, n, &mut Rng::new(seed))?;
    for (i, img) in images.iter().enumerate() {
        encode_image(img, &out.join(format!("gen_{seed}_{i:05}.{}", format.extension())))?;
    }
    Ok(())
}

/// All classes (sorted subdirectory names) of a dataset root.
fn load_all(root: &Path) -> CmdResult<Dataset> {
    let classes = class_dirs(root).code(Code::Data)?;
    if classes.is_empty() {
        return Err(fail(Code::Data, format!("no class directories in {}", root.display())));
    }
    load_dataset(root, &classes).code(Code::Data)
}

pub fn ssim(real: &Path, generated: &Path, out: &Path, config: RunConfig) -> CmdResult {
    let parse = || -> anyhow::Result<(ReportConfig, usize)> {
        let channels = match config.str("channel_policy") {
            "luma" => ChannelPolicy::Luma,
            "mean" => ChannelPolicy::ChannelMean,
            other => bail!("channel_policy must be luma or mean, got {other}"),
        };
        let pairing = match config.str("pairing") {
            "max" => PairingPolicy::Max,
            "mean" => PairingPolicy::Mean,
            other => bail!("pairing must be max or mean, got {other}"),
        };
        let ssim = SsimConfig { window: config.get("window")?, sigma: config.get("sigma")?, k1: config.get("k1")?, k2: config.get("k2")?, channels, ..Default::default() };
        if ssim.window == 0 || !(ssim.sigma > 0.0) {
            bail!("window and sigma must be positive");
        }
        Ok((ReportConfig { ssim, pairing, real_cap: config.get("real_cap")?, seed: config.get("seed")? }, config.get("image_size")?))
    };
    let (cfg, size) = parse().code(Code::Config)?;
    let gen = load_all(generated)?;
    let classes = gen.manifest.classes.clone();
    let real_set = load_dataset(real, &classes).code(Code::Data)?;
    let size = if size == 0 { gen.records[0].image.width() } else { size };
    let fit = |imgs: Vec<RgbImage>| -> CmdResult<Vec<RgbImage>> { imgs.iter().map(|i| Ok(resize_bilinear(i, size, size)?)).collect() };
    let mut gens = Vec::new();
    let mut reals = Vec::new();
    for k in 0..classes.len() {
        gens.push(fit(gen.images_of(k))?);
        reals.push(fit(real_set.images_of(k))?);
    }
    let report = ssim_report(&classes, &gens, &reals, &cfg).code(Code::Data)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    config.write(&dir).code(Code::Data)?;
    fs::write(out, report.to_csv())?;
    Ok(())
}

fn labeled(dataset: &Dataset, size: usize) -> CmdResult<LabeledSet<f32>> {
    let images: Vec<RgbImage> = dataset.records.iter().map(|r| r.image.clone()).collect();
    let labels = dataset.records.iter().map(|r| r.label).collect();
    Ok(LabeledSet::new(clf_tensor(&images, size)?, labels)?)
}

pub fn train_clf(data: &Path, out: &Path, mut config: RunConfig) -> CmdResult {
    let dataset = load_all(data)?;
    let k = dataset.manifest.classes.len();
    let requested: usize = config.get("num_classes").code(Code::Config)?;
    if requested != 0 && requested != k {
        return Err(fail(Code::Config, format!("num_classes = {requested} but {} has {k} class directories", data.display())));
    }
    config.set("num_classes", &k.to_string()).code(Code::Config)?;
    let cfg = ClfTrainConfig {
        num_classes: k,
        channels: config.get("channels").code(Code::Config)?,
        input_size: config.get("input_size").code(Code::Config)?,
        epochs: config.get("epochs").code(Code::Config)?,
        batch_size: config.get("batch_size").code(Code::Config)?,
        lr: config.get("lr").code(Code::Config)?,
        beta1: config.get("beta1").code(Code::Config)?,
        beta2: config.get("beta2").code(Code::Config)?,
        seed: config.get("seed").code(Code::Config)?,
        val_fraction: config.get("val_fraction").code(Code::Config)?,
        width_scale: config.get("width_scale").code(Code::Config)?,
    };
    cfg.validate().code(Code::Config)?;
    if cfg.channels != 3 {
        return Err(fail(Code::Config, "only 3-channel images are supported"));
    }
    let set = labeled(&dataset, cfg.input_size)?;
    create_dir(out)?;
    config.write(out).code(Code::Data)?;
    let mut manifest = dataset.manifest.clone();
    manifest.assign_splits(cfg.val_fraction, 0.0, cfg.seed);
    fs::write(out.join("manifest.csv"), manifest.to_csv())?;
    fs::write(out.join("classes.txt"), manifest.classes.iter().map(|c| format!("{c}\n")).collect::<String>())?;
    let (last, best, curves) = train_classifier(&set, &cfg)?;
    save_checkpoint(&last, &out.join("model_final.gacp"))?;
    save_checkpoint(&best, &out.join("model_best.gacp"))?;
    write_csv(&out.join("training_curves.csv"), &ganaug_core::classifier::TrainingCurves::HEADER, &curves.rows())?;
    Ok(())
}

fn read_classes(model: &Path) -> CmdResult<Vec<String>> {
    let path = model.parent().unwrap_or(Path::new(".")).join("classes.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())).code(Code::Config)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn evaluate(model: &Path, data: &Path, out: &Path, config: RunConfig) -> CmdResult {
    let _batch: usize = config.get("batch_size").code(Code::Config)?;
    let net = load_network(model)?;
    let classes = read_classes(model)?;
    let input = net.spec().input.clone();
    let out_shape = net.spec().output_shape().code(Code::Config)?;
    if input.len() != 3 || input[1] != input[2] || out_shape != [classes.len()] {
        return Err(fail(Code::Config, format!("{} is not a classifier for {} classes", model.display(), classes.len())));
    }
    let dataset = load_dataset(data, &classes).code(Code::Data)?;
    let set = labeled(&dataset, input[1])?;
    let probs = predict_proba(&net, &set.inputs)?;
    let report = EvalReport::new(&probs, &set.labels).code(Code::Data)?;
    create_dir(out)?;
    config.write(out).code(Code::Data)?;
    fs::write(out.join("confusion.csv"), report.confusion.to_csv(&classes))?;
    for (k, roc) in report.roc.iter().enumerate() {
        let path = out.join(format!("roc_class_{k}.csv"));
        match roc {
            Some(r) => fs::write(path, r.to_csv())?,
            None => {
                log::warn!("class {} has no positive or no negative samples; ROC undefined", classes[k]);
                fs::write(path, "threshold,fpr,tpr\n")?;
            }
        }
    }
    fs::write(out.join("summary.csv"), report.summary_csv(&classes))?;
    Ok(())
}

/// Key sets per command, for building a [`RunConfig`].
pub fn keys_for(command: &str) -> &'static [crate::config::Key] {
    match command {
        "train-gan" => GAN_KEYS,
        "generate" => GENERATE_KEYS,
        "ssim" => SSIM_KEYS,
        "train-clf" => CLF_KEYS,
        _ => EVAL_KEYS,
    }
}
