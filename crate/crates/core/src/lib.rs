//! Crowd counting with a segmentation-guided multi-task network.
//!
//! The crate covers the whole pipeline: dot annotations become density and
//! segmentation targets ([`groundtruth`]), a multi-column dilated network
//! predicts count class, head mask and density ([`model`]), four losses are
//! combined for training with Adam ([`losses`], [`train`]), and counting
//! error is measured with MAE/MSE, ROI masks and k-fold splits ([`eval`]).
//! Images are 8-bit PGM, maps are DMAP and weights are SCNW ([`io`]).
//!
//! ```
//! use segcrowd::data::{synth_scene, SynthConfig};
//! use segcrowd::groundtruth::density_map;
//! use segcrowd::model::{build, forward, ModelConfig};
//!
//! let img = synth_scene(1, &SynthConfig::new(5..=10, 32, 32)).unwrap();
//! assert!((density_map(&img).unwrap().count() - img.count() as f64).abs() < 1e-9);
//!
//! let params = build(&ModelConfig::tiny(0)).unwrap();
//! let out = forward(&params, &img.pixels.to_tensor().unwrap()).unwrap();
//! assert_eq!(out.class_logits.len(), 5);
//! assert_eq!(out.density_final.dims(), (8, 8));
//! ```

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod groundtruth;
pub mod io;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use grid::Grid;
