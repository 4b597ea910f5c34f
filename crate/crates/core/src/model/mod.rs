//! Domain types shared by every stage of the pipeline.

mod fits;
mod stint;
mod track;
mod vehicle;

pub use fits::FitBundle;
pub use stint::{StintSpec, VehicleModel};
pub use track::{build_stint_grid, load_track, parse_track_str, TrackData};
pub use vehicle::{
    BatteryParams, DrivetrainParams, R0Curve, ThermalParams, VehicleChassis, VehicleParams,
    VocCurve,
};
