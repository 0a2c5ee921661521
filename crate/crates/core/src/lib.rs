//! Causal analysis of limit order book gaps and returns.

pub mod anm;
pub mod gpr;
pub mod granger;
pub mod hsic;
pub mod ingest;
pub mod linalg;
pub mod linmodel;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod series;
pub mod stats;
pub mod surrogate;
pub mod synthgen;
pub mod xcorr;

pub use scalar::Real;

pub type GapSeries64 = series::GapSeries<f64>;
pub type GapSeries32 = series::GapSeries<f32>;
pub type ReturnSeries64 = series::ReturnSeries<f64>;
pub type ReturnSeries32 = series::ReturnSeries<f32>;
pub type PercentileSeries64 = series::PercentileSeries<f64>;
pub type PercentileSeries32 = series::PercentileSeries<f32>;
pub type CorrelationFunction64 = xcorr::CorrelationFunction<f64>;
pub type CorrelationFunction32 = xcorr::CorrelationFunction<f32>;
pub type ArFit64 = linmodel::ArFit<f64>;
pub type ArFit32 = linmodel::ArFit<f32>;
pub type GrangerStat64 = granger::GrangerStat<f64>;
pub type GrangerStat32 = granger::GrangerStat<f32>;
pub type GpModel64 = gpr::GpModel<f64>;
pub type GpModel32 = gpr::GpModel<f32>;
pub type HsicStatistic64 = hsic::HsicStatistic<f64>;
pub type HsicStatistic32 = hsic::HsicStatistic<f32>;
pub type AnmScore64 = anm::AnmScore<f64>;
pub type AnmScore32 = anm::AnmScore<f32>;
pub type SurrogateEnsemble64 = surrogate::SurrogateEnsemble<f64>;
pub type SurrogateEnsemble32 = surrogate::SurrogateEnsemble<f32>;
