//! Regression instances, designs and the noise correlation scores.

mod design;
mod instance;
pub mod io;

pub use design::{gen_design, gen_design_with, Covariance, DesignKind, DesignMatrix, DesignSpec};
pub use instance::{
    correlation_scores, sample_instance, sample_instance_with, CorrelationScores, NoiseSpec,
    RegressionInstance, SignVector,
};
