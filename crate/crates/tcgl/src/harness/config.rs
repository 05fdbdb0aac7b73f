//! Flat key=value training configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::{ConvSpec, EncoderVariant};
use crate::error::{Result, TcglError};
use crate::synthvideo::{GenConfig, SamplerConfig};
use crate::tcg::ViewVariant;

/// Everything a pretraining run depends on besides the global seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    // snippet sampling
    pub n: usize,
    pub l: usize,
    pub p: usize,
    pub m: usize,
    // video geometry
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    // encoder
    pub encoder: EncoderVariant,
    pub feature_dim: usize,
    pub conv_channels: usize,
    pub conv_t: usize,
    pub conv_d: usize,
    // graphs
    pub gcn_dim: usize,
    pub gcn_depth: usize,
    pub tau: f64,
    pub pr1: f64,
    pub pm1: f64,
    pub pr2: f64,
    pub pm2: f64,
    pub view_variant: ViewVariant,
    // objective weights
    pub alpha: f64,
    pub beta: f64,
    pub lambda_g: f64,
    pub lambda_o: f64,
    // module switches (ablations)
    pub stkd: bool,
    pub asop: bool,
    // optimizer
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    // datasets
    pub train_videos: usize,
    pub val_videos: usize,
    pub static_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 3,
            l: 8,
            p: 2,
            m: 4,
            channels: 1,
            height: 16,
            width: 16,
            encoder: EncoderVariant::TinyConv3d,
            feature_dim: 32,
            conv_channels: 8,
            conv_t: 7,
            conv_d: 3,
            gcn_dim: 32,
            gcn_depth: 1,
            tau: 0.5,
            pr1: 0.2,
            pm1: 0.1,
            pr2: 0.0,
            pm2: 0.0,
            view_variant: ViewVariant::EdgesAndNodes,
            alpha: 1.0,
            beta: 1.0,
            lambda_g: 1.0,
            lambda_o: 1.0,
            stkd: true,
            asop: true,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 200,
            lr_decay_epoch: 100,
            lr_decay_factor: 0.1,
            train_videos: 48,
            val_videos: 24,
            static_only: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { n: self.n, l: self.l, p: self.p, m: self.m }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig::new(
            self.channels,
            self.sampler().min_frames(),
            self.height,
            self.width,
        )
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec { out_channels: self.conv_channels, t: self.conv_t, d: self.conv_d }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().validate()?;
        for (name, v) in [
            ("pr1", self.pr1),
            ("pm1", self.pm1),
            ("pr2", self.pr2),
            ("pm2", self.pm2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TcglError::InvalidConfig(format!(
                    "{name}={v} outside [0,1]"
                )));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_g", self.lambda_g),
            ("lambda_o", self.lambda_o),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(TcglError::InvalidConfig(format!(
                    "{name}={v} must be finite and >= 0"
                )));
            }
        }
        if self.tau <= 0.0 {
            return Err(TcglError::InvalidConfig(format!("tau={} must be > 0", self.tau)));
        }
        if self.lr <= 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(TcglError::InvalidConfig("lr and decay factor must be > 0".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(TcglError::InvalidConfig("batch >= 1 and epochs >= 1 required".into()));
        }
        if !(1..=3).contains(&self.gcn_depth) {
            return Err(TcglError::InvalidConfig(format!(
                "gcn_depth={} outside 1..=3",
                self.gcn_depth
            )));
        }
        if self.feature_dim == 0 || self.gcn_dim == 0 || self.conv_channels == 0 {
            return Err(TcglError::InvalidConfig("zero-width layer".into()));
        }
        if self.conv_t % 2 == 0 || self.conv_d % 2 == 0 {
            return Err(TcglError::InvalidConfig("conv kernel extents must be odd".into()));
        }
        if self.train_videos == 0 || self.val_videos == 0 {
            return Err(TcglError::InvalidConfig("empty dataset".into()));
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let kv: Vec<(&str, String)> = vec![
            ("n", self.n.to_string()),
            ("l", self.l.to_string()),
            ("p", self.p.to_string()),
            ("m", self.m.to_string()),
            ("channels", self.channels.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("encoder", self.encoder.name().to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("conv_channels", self.conv_channels.to_string()),
            ("conv_t", self.conv_t.to_string()),
            ("conv_d", self.conv_d.to_string()),
            ("gcn_dim", self.gcn_dim.to_string()),
            ("gcn_depth", self.gcn_depth.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("pr1", format!("{:?}", self.pr1)),
            ("pm1", format!("{:?}", self.pm1)),
            ("pr2", format!("{:?}", self.pr2)),
            ("pm2", format!("{:?}", self.pm2)),
            ("view_variant", self.view_variant.name().to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("lambda_g", format!("{:?}", self.lambda_g)),
            ("lambda_o", format!("{:?}", self.lambda_o)),
            ("stkd", self.stkd.to_string()),
            ("asop", self.asop.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_decay_epoch", self.lr_decay_epoch.to_string()),
            ("lr_decay_factor", format!("{:?}", self.lr_decay_factor)),
            ("train_videos", self.train_videos.to_string()),
            ("val_videos", self.val_videos.to_string()),
            ("static_only", self.static_only.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TcglError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(TcglError::InvalidConfig(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                TcglError::InvalidConfig(format!("bad value '{value}' for key '{key}'"))
            })
        }
        match key {
            "n" => self.n = num(key, value)?,
            "l" => self.l = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "encoder" => self.encoder = EncoderVariant::parse(value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "conv_channels" => self.conv_channels = num(key, value)?,
            "conv_t" => self.conv_t = num(key, value)?,
            "conv_d" => self.conv_d = num(key, value)?,
            "gcn_dim" => self.gcn_dim = num(key, value)?,
            "gcn_depth" => self.gcn_depth = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "pr1" => self.pr1 = num(key, value)?,
            "pm1" => self.pm1 = num(key, value)?,
            "pr2" => self.pr2 = num(key, value)?,
            "pm2" => self.pm2 = num(key, value)?,
            "view_variant" => self.view_variant = ViewVariant::parse(value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "lambda_g" => self.lambda_g = num(key, value)?,
            "lambda_o" => self.lambda_o = num(key, value)?,
            "stkd" => self.stkd = num(key, value)?,
            "asop" => self.asop = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "train_videos" => self.train_videos = num(key, value)?,
            "val_videos" => self.val_videos = num(key, value)?,
            "static_only" => self.static_only = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => {
                return Err(TcglError::InvalidConfig(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}
