//! Statistical summaries and checks built on simulated episodes.

pub mod checks;
pub mod curves;
pub mod measure_checks;
pub mod stats;

pub use checks::{
    ctrl_h_by_l2_verify, drift_estimate_verify, foias_prodi_verify, growth_tail_verify, hs_tail_verify, lyapunov_verify,
    CtrlReport, DriftEstimateReport, FoiasProdiReport, GrowthTailReport, HsTailReport, LyapunovReport, MomentCurve,
};
pub use curves::{default_panel, lipb_decay_curve, tv_decay_curve, DecayCurve, TestFn};
pub use measure_checks::{measure_battery, MeasureBatteryReport};
pub use stats::{exp_fit, wilson, Estimate, ExpFit, StatsError};
