//! Probabilistic linear discriminant analysis with one or two label views.
//!
//! [`plda`] models vectors that share one latent identity per class.
//! [`jplda`] models vectors labelled along two views at once (speaker and
//! phrase, say), with one latent factor per view. [`eval`] turns either into
//! a verification scorer and measures equal error rates per trial type.

pub mod dataset;
pub mod error;
pub mod eval;
mod factor;
pub mod formats;
pub mod gaussmath;
pub mod jplda;
pub mod plda;
pub mod synth;

pub use dataset::{Dataset, Grouping, LabeledVector};
pub use error::{Error, Result};
pub use jplda::{JointPldaModel, JointPriors, ShareSpec, View, ViewPriors};
pub use plda::{LlTrace, PldaModel};

#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident),*) => {$(
            #[doc = include_str!(concat!("../../../book/src/", stringify!($name), ".md"))]
            mod $name {}
        )*};
    }
    chapters!(introduction, gaussian, plda, joint_plda, synthetic, evaluation, cli);
}
