pub mod adam;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod explore;
pub mod io;
pub mod kernels;
pub mod metanet;
pub mod perceptual;
pub mod tape;
pub mod tensor;
pub mod toylab;
pub mod trainer;
pub mod transformnet;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// The guide in `book/`, compiled so its snippets run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/tape.md")]
    pub mod tape {}
    #[doc = include_str!("../../../book/src/perceptual.md")]
    pub mod perceptual {}
    #[doc = include_str!("../../../book/src/transformnet.md")]
    pub mod transformnet {}
    #[doc = include_str!("../../../book/src/metanet.md")]
    pub mod metanet {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/toylab.md")]
    pub mod toylab {}
    #[doc = include_str!("../../../book/src/explore.md")]
    pub mod explore {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
