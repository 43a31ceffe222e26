pub mod classes;
pub mod covering;
pub mod dyadic;
pub mod error;
pub mod generate;
pub mod grid;
pub mod harness;
pub mod io;
pub mod maximal;
pub mod report;

pub use dyadic::{Dyadic, DyadicBox, DyadicCube, Sign};
pub use error::{Error, Result};
pub use grid::{CellSet, CubeConstraint, GridDomain, WeightField, WeightPair};
pub use maximal::{dyadic_minus_maximal, dyadic_plus_maximal, level_set, onesided_maximal_2d, subsquare_maximal_2d, LevelMode, MaximalResult, Operator};
pub use classes::{a1_pointwise_check, muckenhoupt_constant, restricted_constant, truncate_pair, ClassConstant, ClassKind, Flavor, Truncation};
pub use covering::{band_partition, covering_select_2d, depth_decompose, certify_band, certify_band_with, select_level_set_cubes, Band, CoverSelection, CubeFamily, DepthDecomposition, FamilyMember, BandCertificate, StepCheck};
pub use harness::{dyadic_t_sweep, sharpness_search, weak_type_constant, verify_2d_weak_type, verify_dyadic_weak_type, verify_necessity, Claim, VerifyReport};
