//! Ablation switchboard: rerun pretraining while varying one configuration
//! axis and tabulate the final validation order accuracy.

use std::fmt::Write as _;

use crate::error::{Result, TcglError};
use crate::harness::config::TrainConfig;
use crate::harness::train::pretrain;
use crate::tcg::ViewVariant;

/// One configuration axis that the experiments vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    SnippetCount,
    FramesetCount,
    GcnDepth,
    AlphaBeta,
    Asop,
    Stkd,
    Lambda,
    ViewVariant,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Axis::SnippetCount),
            "m" => Ok(Axis::FramesetCount),
            "gcn_depth" => Ok(Axis::GcnDepth),
            "alpha_beta" => Ok(Axis::AlphaBeta),
            "asop" => Ok(Axis::Asop),
            "stkd" => Ok(Axis::Stkd),
            "lambda" => Ok(Axis::Lambda),
            "view" => Ok(Axis::ViewVariant),
            other => Err(TcglError::InvalidConfig(format!(
                "unknown ablation axis '{other}' (expected n, m, gcn_depth, \
                 alpha_beta, asop, stkd, lambda, view)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::SnippetCount => "n",
            Axis::FramesetCount => "m",
            Axis::GcnDepth => "gcn_depth",
            Axis::AlphaBeta => "alpha_beta",
            Axis::Asop => "asop",
            Axis::Stkd => "stkd",
            Axis::Lambda => "lambda",
            Axis::ViewVariant => "view",
        }
    }

    /// Apply one textual value of this axis to a config. Pair axes accept
    /// "a:b"; switches accept "on"/"off".
    pub fn apply(&self, config: &mut TrainConfig, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| TcglError::InvalidConfig(format!("bad axis value '{value}'")))
        }
        fn pair(value: &str) -> Result<(f64, f64)> {
            let (a, b) = value.split_once(':').ok_or_else(|| {
                TcglError::InvalidConfig(format!("expected 'a:b', got '{value}'"))
            })?;
            Ok((num(a.trim())?, num(b.trim())?))
        }
        fn switch(value: &str) -> Result<bool> {
            match value {
                "on" => Ok(true),
                "off" => Ok(false),
                other => Err(TcglError::InvalidConfig(format!(
                    "expected on/off, got '{other}'"
                ))),
            }
        }
        match self {
            Axis::SnippetCount => config.n = num(value)?,
            Axis::FramesetCount => config.m = num(value)?,
            Axis::GcnDepth => config.gcn_depth = num(value)?,
            Axis::AlphaBeta => {
                let (a, b) = pair(value)?;
                config.alpha = a;
                config.beta = b;
            }
            Axis::Asop => config.asop = switch(value)?,
            Axis::Stkd => config.stkd = switch(value)?,
            Axis::Lambda => {
                let (g, o) = pair(value)?;
                config.lambda_g = g;
                config.lambda_o = o;
            }
            Axis::ViewVariant => config.view_variant = ViewVariant::parse(value)?,
        }
        config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub val_acc: f64,
    pub best_val_acc: f64,
    pub final_j_g: f64,
    pub final_j_o: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            self.axis.name(),
            "val_acc",
            "best_val",
            "j_g",
            "j_o"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.value, r.val_acc, r.best_val_acc, r.final_j_g, r.final_j_o
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},val_acc,best_val_acc,final_j_g,final_j_o\n", self.axis.name());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                r.value, r.val_acc, r.best_val_acc, r.final_j_g, r.final_j_o
            );
        }
        s
    }
}

/// Train once per value of the axis and tabulate the outcomes.
pub fn run_axis(base: &TrainConfig, axis: Axis, values: &[&str]) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(TcglError::InvalidConfig("no ablation values given".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg, value)?;
        let out = pretrain(&cfg, None)?;
        let last = out.log.rows.last().expect("epochs >= 1");
        rows.push(AblationRow {
            value: value.to_string(),
            val_acc: last.val_acc,
            best_val_acc: out.best_val_acc,
            final_j_g: last.j_g,
            final_j_o: last.j_o,
        });
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing_and_application() {
        let mut cfg = TrainConfig::default();
        Axis::parse("n").unwrap().apply(&mut cfg, "4").unwrap();
        assert_eq!(cfg.n, 4);
        Axis::parse("lambda").unwrap().apply(&mut cfg, "0:1").unwrap();
        assert_eq!((cfg.lambda_g, cfg.lambda_o), (0.0, 1.0));
        Axis::parse("alpha_beta").unwrap().apply(&mut cfg, "0.5:2").unwrap();
        assert_eq!((cfg.alpha, cfg.beta), (0.5, 2.0));
        Axis::parse("asop").unwrap().apply(&mut cfg, "off").unwrap();
        assert!(!cfg.asop);
        Axis::parse("view").unwrap().apply(&mut cfg, "noise").unwrap();

        assert!(Axis::parse("bogus").is_err());
        assert!(Axis::parse("m").unwrap().apply(&mut cfg, "3").is_err()); // 8 % 3 != 0
        assert!(Axis::parse("asop").unwrap().apply(&mut cfg, "maybe").is_err());
        assert!(Axis::parse("lambda").unwrap().apply(&mut cfg, "1").is_err());
    }

    #[test]
    fn run_axis_produces_a_row_per_value() {
        let mut cfg = TrainConfig::default();
        cfg.height = 8;
        cfg.width = 8;
        cfg.l = 4;
        cfg.m = 2;
        cfg.feature_dim = 6;
        cfg.gcn_dim = 6;
        cfg.conv_channels = 2;
        cfg.train_videos = 2;
        cfg.val_videos = 2;
        cfg.batch_size = 2;
        cfg.epochs = 1;
        let table = run_axis(&cfg, Axis::Stkd, &["on", "off"]).unwrap();
        assert_eq!(table.rows.len(), 2);
        let text = table.render();
        assert!(text.contains("on"));
        assert!(text.contains("off"));
        assert!(table.to_csv().lines().count() == 3);
    }
}
