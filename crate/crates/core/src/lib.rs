pub mod error;
pub mod etiology;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod pca;
pub mod resfusion;
pub mod tensor;

pub use error::{Error, Result};
pub use etiology::Etiology;

// Book chapters; their code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
