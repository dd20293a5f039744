//! Boundary normal coordinates: geodesic shooting on an interpolated metric,
//! chart construction and numeric checks of the chart identities.

pub mod chart;
pub mod geodesic;
pub mod spline;

pub use chart::{build_chart, validate_chart, validate_chart_with, ChartReport, ChartSample, FermiChart};
pub use geodesic::{shoot_geodesic, GeodesicPath, MetricSource, SheetMetric};
pub use spline::MetricInterpolant;
