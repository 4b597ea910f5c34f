//! Convex surrogate identification from component data.

mod pipeline;
mod powertrain;
mod quadform;

pub use pipeline::{
    battery_psc_samples, em_temperature_samples, fit_component_models, read_battery_sheet,
    battery_temperature_samples, BatterySheetRow, ComponentData,
};
pub use powertrain::{
    em_force_loss_samples, fit_charge_loss_alpha, fit_final_stint, fit_inverter_alpha,
    internal_power, read_motor_map, read_power_pairs, ChargeLossFit, EmLossSamples, FinalStintFit, MotorMapRow,
    ScalarFit,
};
pub use quadform::{
    default_offset, fit_quadratic_form, fit_quadratic_form_with_offset, psd_factor, FeatureMap,
    FitOptions, FitSample, QuadFormFit, Sign,
};
