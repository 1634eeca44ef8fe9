pub mod error;
pub mod grid;
pub mod linear;
pub mod moments;
pub mod ode;
pub mod oracles;
pub mod params;
pub mod protocol;
pub mod scans;
pub mod schedule;
pub mod validate;

pub use error::{Result, SimError};
pub use grid::{build_frequency_grid, FrequencyGrid, SpinClass};
pub use params::{CavitySegment, Coupling, DerivedRates, DriveMode, DriveSpec, PhysicalParams, RotationSpec, SegmentAction};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
