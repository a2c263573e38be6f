//! Gaussian graphical model estimators built on the same augmentation loop.

mod cd;
mod gridge;
mod scio;
mod space;

pub use cd::{run_panda_cd, run_panda_cd_ordered, LdlEstimate};
pub use gridge::{gridge_noise, run_panda_gridge, GridgeEstimate};
pub use scio::{run_panda_scio, scio_column, ScioEstimate};
pub use space::{run_panda_space, SpaceEstimate};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

fn check_data(x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() < 2 {
        return invalid("need at least two nodes");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("data contains non-finite values");
    }
    Ok(())
}
