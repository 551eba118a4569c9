//! Energy management for a power-split hybrid vehicle trained with DDPG,
//! with layer-selective transfer between driving cycles and a family of
//! exploration-noise strategies.

pub mod cycles;
pub mod ddpg;
pub mod env;
pub mod explore;
pub mod net;
pub mod powertrain;
pub mod transfer;
pub mod runner;
