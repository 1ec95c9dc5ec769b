//! Offline planning library for air-to-ground data offloading during descent.
//!
//! A descending aircraft carries a multi-antenna transmitter and streams
//! recorded data to a base station near the runway, sharing spectrum with
//! terrestrial stations that must be protected by an interference threshold.
//! The crate models the descent geometry, antenna patterns, line-of-sight
//! channels, and the rate adaptation table, and solves the per-slot transmit
//! optimization (power, subchannel count, beamforming) that maximizes the
//! total offloaded volume.

pub mod antennas;
pub mod channel;
pub mod geometry;
pub mod linkrate;
pub mod optimizer;
pub mod sdp;
pub mod units;
