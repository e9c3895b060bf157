//! Energy terms of the reconstruction objective and their analytic
//! gradients, plus the composite total over the full fit state.

pub mod appearance;
pub mod fit;
pub mod lidar_term;
pub mod photometric;
pub mod shape;
pub mod symmetry;

pub use fit::{
    total_energy, EnergyOptions, EnergyReport, EnergyWeights, FitState, Observations, StateGrads,
    TemplateTopology,
};
pub use lidar_term::{lidar_energy, LidarEnergyConfig};
pub use photometric::{color_energy, mask_energy};
pub use shape::{shape_energy, ShapeEnergy};
pub use symmetry::symmetry_energy;
