use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// A documented configuration key with its default.
#[derive(Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const GAN_KEYS: &[Key] = &[
    key("latent_dim", "100", "size of the latent vector"),
    key("channels", "3", "image channels"),
    key("image_size", "64", "square image side, power of two >= 16"),
    key("epochs", "650", "training epochs"),
    key("batch_size", "128", "minibatch size (shrinks to the dataset size)"),
    key("lr", "0.0002", "Adam learning rate"),
    key("beta1", "0.5", "Adam first-moment decay"),
    key("beta2", "0.999", "Adam second-moment decay"),
    key("seed", "0", "random seed"),
    key("checkpoint_every", "50", "epochs between checkpoints (0 = final only)"),
    key("base_width", "64", "channel multiplier of both networks"),
    key("leaky_slope", "0.2", "negative slope of the discriminator LeakyReLU"),
];

pub const GENERATE_KEYS: &[Key] = &[
    key("n", "1", "number of images"),
    key("seed", "0", "random seed"),
    key("format", "ppm", "output format: ppm or png"),
];

pub const SSIM_KEYS: &[Key] = &[
    key("window", "11", "Gaussian window side"),
    key("sigma", "1.5", "Gaussian window standard deviation"),
    key("k1", "0.01", "luminance stabilizer factor"),
    key("k2", "0.03", "contrast stabilizer factor"),
    key("channel_policy", "luma", "luma or mean (per-channel average)"),
    key("pairing", "max", "score of a generated image: max or mean over real images"),
    key("real_cap", "100", "maximum real images compared per class"),
    key("image_size", "0", "common square size (0 = size of the generated images)"),
    key("seed", "0", "seed of the real-image sampling"),
];

pub const CLF_KEYS: &[Key] = &[
    key("num_classes", "0", "number of classes (0 = number of class directories)"),
    key("channels", "3", "image channels"),
    key("input_size", "224", "square input side, divisible by 32"),
    key("epochs", "75", "training epochs"),
    key("batch_size", "32", "minibatch size"),
    key("lr", "0.001", "Adam learning rate"),
    key("beta1", "0.9", "Adam first-moment decay"),
    key("beta2", "0.999", "Adam second-moment decay"),
    key("seed", "0", "random seed"),
    key("val_fraction", "0.1", "per-class validation fraction (0 = no validation)"),
    key("width_scale", "1", "multiplier of every layer width"),
];

pub const EVAL_KEYS: &[Key] = &[key("batch_size", "32", "inference batch size")];

/// Every key of every command, for `--help`.
pub fn key_listing() -> String {
    let mut out = String::from("Configuration keys (`key = value` in --config files, or --set key=value):\n");
    for (cmd, keys) in [
        ("train-gan", GAN_KEYS),
        ("generate", GENERATE_KEYS),
        ("ssim", SSIM_KEYS),
        ("train-clf", CLF_KEYS),
        ("evaluate", EVAL_KEYS),
    ] {
        let _ = writeln!(out, "\n  {cmd}:");
        for k in keys {
            let _ = writeln!(out, "    {:<17} {:<8} {}", k.name, k.default, k.help);
        }
    }
    out
}

/// Resolved key/value pairs of one command, in declaration order.
#[derive(Debug)]
pub struct RunConfig {
    keys: &'static [Key],
    values: Vec<String>,
}

impl RunConfig {
    pub fn new(keys: &'static [Key]) -> Self {
        Self { keys, values: keys.iter().map(|k| k.default.to_string()).collect() }
    }

    /// Defaults, then the config file, then `--set` overrides.
    pub fn load(keys: &'static [Key], file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut cfg = Self::new(keys);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{s}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", no + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some(i) = self.keys.iter().position(|k| k.name == key) else {
            let known: Vec<&str> = self.keys.iter().map(|k| k.name).collect();
            bail!("unknown key `{key}` (known: {})", known.join(", "));
        };
        self.values[i] = value.to_string();
        Ok(())
    }

    fn index(&self, key: &str) -> usize {
        self.keys.iter().position(|k| k.name == key).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn str(&self, key: &str) -> &str {
        &self.values[self.index(key)]
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e| anyhow!("invalid value `{raw}` for {key}: {e}"))
    }

    pub fn to_text(&self) -> String {
        self.keys.iter().zip(&self.values).map(|(k, v)| format!("{} = {v}\n", k.name)).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("resolved_config.txt"), self.to_text())?;
        Ok(())
    }
}
