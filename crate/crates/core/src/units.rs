//! Unit conversions shared across the crate: decibel scales, dBm power, and
//! data-volume accounting.

/// Speed of light in m/s, used to derive wavelengths from carrier frequency.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Bits per gigabyte in the decimal convention used for reported volumes.
pub const BITS_PER_GB: f64 = 8e9;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// dBm to watts; -100 dBm is 1e-13 W.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn wavelength_m(fc_mhz: f64) -> f64 {
    SPEED_OF_LIGHT_M_S / (fc_mhz * 1e6)
}
