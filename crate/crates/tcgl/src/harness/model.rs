//! The full parameter set of one pretraining run.

use crate::asop::AsopParams;
use crate::encoder::EncoderParams;
use crate::harness::config::TrainConfig;
use crate::harness::rng::substream_seed;
use crate::numcore::Tensor;
use crate::tcg::{ContrastiveParams, GcnParams};

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderParams,
    pub intra_gcn: GcnParams,
    pub inter_gcn: GcnParams,
    pub proj: ContrastiveParams,
    pub asop: AsopParams,
}

impl Model {
    pub fn init(config: &TrainConfig) -> Self {
        let s = config.seed;
        Model {
            encoder: EncoderParams::init(
                config.encoder,
                config.channels,
                config.feature_dim,
                config.conv_spec(),
                substream_seed(s, "init.encoder"),
            ),
            intra_gcn: GcnParams::init(
                config.feature_dim,
                config.gcn_dim,
                config.gcn_depth,
                substream_seed(s, "init.intra_gcn"),
            ),
            inter_gcn: GcnParams::init(
                config.feature_dim,
                config.gcn_dim,
                config.gcn_depth,
                substream_seed(s, "init.inter_gcn"),
            ),
            proj: ContrastiveParams::init(
                config.gcn_dim,
                config.tau,
                substream_seed(s, "init.proj"),
            ),
            asop: AsopParams::init(config.n, config.gcn_dim, substream_seed(s, "init.asop")),
        }
    }

    /// All parameters under stable global names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        out.extend(self.intra_gcn.named("gcn.intra"));
        out.extend(self.inter_gcn.named("gcn.inter"));
        out.extend(self.proj.named());
        out.extend(self.asop.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut();
        out.extend(self.intra_gcn.named_mut("gcn.intra"));
        out.extend(self.inter_gcn.named_mut("gcn.inter"));
        out.extend(self.proj.named_mut());
        out.extend(self.asop.named_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}
