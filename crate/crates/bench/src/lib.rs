//! Shared fixtures for the benchmarks.

use dataqual::corpus::Dataset;
use dataqual::synthetic::{planted, PlantedConfig, PlantedFixture};

/// The default planted fixture, or a smaller one of `size` samples.
pub fn fixture(size: usize) -> PlantedFixture {
    planted(&PlantedConfig {
        size,
        planted: size / 10,
        ..PlantedConfig::default()
    })
}

/// Non-burned samples of `f`, in dataset order.
pub fn pool(f: &PlantedFixture) -> Dataset {
    f.dataset.filtered(|s| !f.manifest.burned.contains(&s.id))
}
