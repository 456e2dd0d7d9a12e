//! Mask-conditioned ("physically-primed") k-space reconstruction toolkit.
//!
//! The crate bundles everything needed to train a small U-Net on
//! undersampled Cartesian k-space with and without the sampling mask as an
//! extra input channel, and to measure how the variants hold up when the
//! mask pattern, the acceleration factor or the anatomy changes at test time:
//!
//! * [`autodiff`]: a reverse-mode tape with the handful of ops the U-Net needs
//!   and the RMSprop optimizer,
//! * [`kspace`]: centered orthonormal FFTs, the acquisition forward model,
//!   zero-filled reconstruction and the signed log transform,
//! * [`masks`]: equispaced and random column masks,
//! * [`model`]: the residual k-space U-Net and its checkpoint format,
//! * [`phantom`]: two synthetic anatomy families with lesion boxes,
//! * [`metrics`]: NMSE / PSNR / SSIM and the paired t-test,
//! * [`cs`]: total-variation compressed sensing,
//! * [`train`] and [`eval`]: training loops, scenario evaluation and the
//!   suite driver,
//! * [`figures`]: grayscale PNG panels with lesion-box overlays.

pub mod autodiff;
pub mod cs;
pub mod error;
pub mod eval;
pub mod figures;
pub mod kspace;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod seed;
pub mod train;

pub use autodiff::{Tape, Tensor};
pub use cs::CsConfig;
pub use error::{Error, Result};
pub use eval::{Reconstructor, Scenario, SuiteConfig, SuiteReport};
pub use kspace::{ComplexGrid, Image};
pub use masks::{Mask, MaskPattern, MaskSpec, MaskTemplate};
pub use metrics::{Metrics, MetricsRow, TTestResult};
pub use model::{Checkpoint, ModelKind, UnetConfig, UnetModel};
pub use phantom::{BBox, DatasetManifest, DatasetSpec, Family, PhantomSample};
pub use train::{TrainConfig, TrainLog};
