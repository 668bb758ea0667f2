//! Analysis of learned coordinates: PCA projection, cluster separation, and
//! deterministic figure/table emission.

pub mod pca;
pub mod plot;

pub use pca::{pca_2d, silhouette, Pca2d};
pub use plot::{
    curves_svg, points_csv, scatter_svg, CurveSeries, ProjectedPoint, POINTS_CSV_HEADER,
};
