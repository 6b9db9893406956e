pub mod classifiers;
mod codec;
pub mod dataprep;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod numcore;
pub mod vae;
pub mod vit;

pub use error::{Error, Result};

// The book's snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/vae.md")]
    mod vae {}
    #[doc = include_str!("../../../book/src/vit.md")]
    mod vit {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
}
