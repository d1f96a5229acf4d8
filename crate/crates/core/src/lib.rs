pub mod algebra;
pub mod cli;
pub mod correlators;
pub mod liouville;
pub mod model;
pub mod pqs;
pub mod trajectories;

pub type CMatrix = algebra::Matrix<f64>;
pub type Params = model::ModelParams<f64>;
pub type Generator = liouville::Liouvillian<f64>;
pub type State = liouville::StateMatrix<f64>;
pub type Series = correlators::CorrelationSeries<f64>;
pub type Correlations = correlators::Correlator<f64>;
pub type Pqs = pqs::PastQuantumState<f64>;
