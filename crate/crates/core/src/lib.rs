//! Dynamic scene reconstruction from frames and events with separate
//! background and object Gaussian sets.
//!
//! Stages: [`dataio`] simulates or loads data, [`disentangle`] separates
//! objects from the background, [`track`] follows each object through the
//! event stream, and [`train`] optimizes the [`scene`] through the
//! differentiable [`render`]er. [`cli`] wires them into the `stdgs` binary.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dataio;
pub mod disentangle;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod render;
pub mod scene;
pub mod track;
pub mod train;

pub use error::{Error, Result};

macro_rules! book_chapter {
    ($name:ident, $file:literal) => {
        #[cfg(doctest)]
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub struct $name;
    };
}

book_chapter!(BookIntro, "intro.md");
book_chapter!(BookData, "data.md");
book_chapter!(BookDisentangle, "disentangle.md");
book_chapter!(BookTrack, "track.md");
book_chapter!(BookScene, "scene.md");
book_chapter!(BookRender, "render.md");
book_chapter!(BookTrain, "train.md");
book_chapter!(BookCli, "cli.md");
