pub mod channels;
pub mod deepsic;
pub mod detect;
pub mod error;
pub mod gan;
pub mod harness;
pub mod nn;
pub mod online;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/channels.md")]
    pub struct Channels;
    #[doc = include_str!("../../../book/src/detectors.md")]
    pub struct Detectors;
    #[doc = include_str!("../../../book/src/deepsic.md")]
    pub struct DeepSic;
    #[doc = include_str!("../../../book/src/gan.md")]
    pub struct Gan;
    #[doc = include_str!("../../../book/src/online.md")]
    pub struct Online;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
