//! Temporal contrastive graph learning on synthetic videos.
//!
//! The crate provides a small verified autodiff engine ([`numcore`]), a
//! synthetic video generator with snippet sampling and permutation coding
//! ([`synthvideo`]), temporal-frequency motion enhancement ([`stkd`]), a
//! shared clip encoder ([`encoder`]), intra-/inter-snippet graph contrastive
//! learning ([`tcg`]), adaptive snippet order prediction ([`asop`]), and a
//! training/evaluation harness with a CLI ([`harness`]).

pub mod asop;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod numcore;
pub mod stkd;
pub mod synthvideo;
pub mod tcg;

pub use error::{Result, TcglError};
