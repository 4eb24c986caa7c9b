//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys are the field names of
//! the protocol, augmentation, architecture, synthetic-data and probe
//! settings (nested ones with a `section.` prefix). `RunConfig::render`
//! prints every key, and feeding that text back reproduces the run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dualsup::data::SyntheticConfig;
use dualsup::eval::ProbeConfig;
use dualsup::losses::TripletMode;
use dualsup::protocol::{Progressive, ProtocolConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub protocol: ProtocolConfig,
    pub synthetic: SyntheticConfig,
    pub probe: ProbeConfig,
    pub test_fraction: f64,
    pub knn_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: None,
            out: None,
            protocol: ProtocolConfig::default(),
            synthetic: SyntheticConfig {
                n_super: 5,
                classes_per_super: 2,
                dim: 32,
                n_per_class: 200,
                separation: 8.0,
                class_separation: None,
            },
            probe: ProbeConfig::default(),
            test_fraction: 0.25,
            knn_k: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn opt_str<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let p = &mut self.protocol;
        match key {
            "seed" => self.seed = Some(parse(key, v)?),
            "data" => self.data = (v != "none").then(|| PathBuf::from(v)),
            "out" => self.out = (v != "none").then(|| PathBuf::from(v)),
            "m" => p.m = parse(key, v)?,
            "loss_kind" => p.loss_kind = parse(key, v)?,
            "phase1_epochs" => p.phase1_epochs = parse(key, v)?,
            "phase2_epochs" => p.phase2_epochs = parse(key, v)?,
            "phase2_full_epochs" => p.phase2_full_epochs = parse(key, v)?,
            "batch_size" => p.batch_size = parse(key, v)?,
            "lr_phase1_warm" => p.lr_phase1_warm = parse(key, v)?,
            "lr_phase1_main" => p.lr_phase1_main = parse(key, v)?,
            "lr_phase2" => p.lr_phase2 = parse(key, v)?,
            "warmup_epochs" => p.warmup_epochs = parse_opt(key, v)?,
            "freeze_boundary" => p.freeze_boundary = parse(key, v)?,
            "label_mode" => p.label_mode = parse(key, v)?,
            "progressive" => {
                p.progressive = match v {
                    "none" | "off" => None,
                    _ => {
                        let periods = parse_list(key, v)?;
                        let [phase1_period, phase2_period] = periods[..] else {
                            return Err(CliError::Usage(format!("{key}: expected `p1,p2` or none")));
                        };
                        Some(Progressive {
                            phase1_period,
                            phase2_period,
                        })
                    }
                }
            }
            "target_momentum" => p.target_momentum = parse_opt(key, v)?,
            "parallel" => p.parallel = parse_bool(key, v)?,
            "record_wall_time" => p.record_wall_time = parse_bool(key, v)?,
            "loss.temperature" => p.loss.temperature = parse(key, v)?,
            "loss.margin" => p.loss.margin = parse(key, v)?,
            "loss.lambda" => p.loss.lambda = parse(key, v)?,
            "loss.whiten_eps" => p.loss.whiten_eps = parse(key, v)?,
            "loss.triplet_mode" => {
                p.loss.triplet_mode = match v {
                    "standard" => TripletMode::Standard,
                    "as-written" => TripletMode::AsWritten,
                    _ => return Err(CliError::Usage(format!("{key}: expected standard or as-written"))),
                }
            }
            "augment.noise_sigma" => p.augment.noise_sigma = parse(key, v)?,
            "augment.mask_fraction" => p.augment.mask_fraction = parse(key, v)?,
            "augment.scale_lo" => p.augment.scale_range[0] = parse(key, v)?,
            "augment.scale_hi" => p.augment.scale_range[1] = parse(key, v)?,
            "augment.crop_fraction_min" => p.augment.crop_fraction_min = parse(key, v)?,
            "arch.hidden" => p.arch.hidden = parse_list(key, v)?,
            "arch.proj_hidden" => p.arch.proj_hidden = parse(key, v)?,
            "arch.proj_out" => p.arch.proj_out = parse(key, v)?,
            "arch.predictor_hidden" => p.arch.predictor_hidden = parse(key, v)?,
            "synthetic.n_super" => self.synthetic.n_super = parse(key, v)?,
            "synthetic.classes_per_super" => self.synthetic.classes_per_super = parse(key, v)?,
            "synthetic.dim" => self.synthetic.dim = parse(key, v)?,
            "synthetic.n_per_class" => self.synthetic.n_per_class = parse(key, v)?,
            "synthetic.separation" => self.synthetic.separation = parse(key, v)?,
            "synthetic.class_separation" => self.synthetic.class_separation = parse_opt(key, v)?,
            "probe.epochs" => self.probe.epochs = parse(key, v)?,
            "probe.lr" => self.probe.lr = parse(key, v)?,
            "probe.batch_size" => self.probe.batch_size = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "knn_k" => self.knn_k = parse(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Checks the config and fills the seed-dependent fields.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let seed = self
            .seed
            .ok_or_else(|| CliError::Usage("a seed is required (config key `seed` or --seed)".into()))?;
        self.protocol.seed = seed;
        self.probe.seed = seed;
        if let Some(d) = &self.data {
            if !d.is_file() {
                return Err(CliError::Usage(format!("data file {} does not exist", d.display())));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Usage("test_fraction must lie in (0, 1)".into()));
        }
        if self.knn_k == 0 {
            return Err(CliError::Usage("knn_k must be at least 1".into()));
        }
        self.protocol.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(self)
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn render(&self) -> String {
        let p = &self.protocol;
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let path = |v: &Option<PathBuf>| v.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        let lines: Vec<(&str, String)> = vec![
            ("seed", opt_str(&self.seed)),
            ("data", path(&self.data)),
            ("out", path(&self.out)),
            ("m", p.m.to_string()),
            ("loss_kind", p.loss_kind.to_string()),
            ("phase1_epochs", p.phase1_epochs.to_string()),
            ("phase2_epochs", p.phase2_epochs.to_string()),
            ("phase2_full_epochs", p.phase2_full_epochs.to_string()),
            ("batch_size", p.batch_size.to_string()),
            ("lr_phase1_warm", p.lr_phase1_warm.to_string()),
            ("lr_phase1_main", p.lr_phase1_main.to_string()),
            ("lr_phase2", p.lr_phase2.to_string()),
            ("warmup_epochs", opt_str(&p.warmup_epochs)),
            ("freeze_boundary", p.freeze_boundary.to_string()),
            ("label_mode", p.label_mode.to_string()),
            (
                "progressive",
                p.progressive
                    .map_or_else(|| "none".into(), |g| format!("{},{}", g.phase1_period, g.phase2_period)),
            ),
            ("target_momentum", opt_str(&p.target_momentum)),
            ("parallel", p.parallel.to_string()),
            ("record_wall_time", p.record_wall_time.to_string()),
            ("loss.temperature", p.loss.temperature.to_string()),
            ("loss.margin", p.loss.margin.to_string()),
            ("loss.lambda", p.loss.lambda.to_string()),
            ("loss.whiten_eps", p.loss.whiten_eps.to_string()),
            (
                "loss.triplet_mode",
                match p.loss.triplet_mode {
                    TripletMode::Standard => "standard",
                    TripletMode::AsWritten => "as-written",
                }
                .into(),
            ),
            ("augment.noise_sigma", p.augment.noise_sigma.to_string()),
            ("augment.mask_fraction", p.augment.mask_fraction.to_string()),
            ("augment.scale_lo", p.augment.scale_range[0].to_string()),
            ("augment.scale_hi", p.augment.scale_range[1].to_string()),
            ("augment.crop_fraction_min", p.augment.crop_fraction_min.to_string()),
            ("arch.hidden", list(&p.arch.hidden)),
            ("arch.proj_hidden", p.arch.proj_hidden.to_string()),
            ("arch.proj_out", p.arch.proj_out.to_string()),
            ("arch.predictor_hidden", p.arch.predictor_hidden.to_string()),
            ("synthetic.n_super", self.synthetic.n_super.to_string()),
            ("synthetic.classes_per_super", self.synthetic.classes_per_super.to_string()),
            ("synthetic.dim", self.synthetic.dim.to_string()),
            ("synthetic.n_per_class", self.synthetic.n_per_class.to_string()),
            ("synthetic.separation", self.synthetic.separation.to_string()),
            ("synthetic.class_separation", opt_str(&self.synthetic.class_separation)),
            ("probe.epochs", self.probe.epochs.to_string()),
            ("probe.lr", self.probe.lr.to_string()),
            ("probe.batch_size", self.probe.batch_size.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("knn_k", self.knn_k.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
