//! Joint molecular graph model for drug–drug interaction event prediction.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod joint;
pub mod metrics;
pub mod model;
pub mod smiles;
pub mod training;
