mod common;

use common::*;
use synthjudge::synth::write_synthetic;

#[test]
fn simulation_reproduces_frozen_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = write_synthetic(&band_spec(), dir.path()).unwrap();
    let manifests: Vec<&std::path::Path> = out.manifests.iter().map(|p| p.as_path()).collect();
    let band = monte_carlo_band(&manifests, &out.latents, BAND_NOISE, BAND_REPS, BAND_SIM_SEED);
    assert_eq!(band.len(), FROZEN_BAND.len());
    for (task, frozen) in FROZEN_BAND {
        for (got, want) in band[task].iter().zip(frozen) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12, "{task}: {got:?} vs {want:?}");
            assert!(got.0 < got.1);
        }
    }
}

#[test]
fn band_narrows_as_noise_drops() {
    let dir = tempfile::tempdir().unwrap();
    let out = write_synthetic(&band_spec(), dir.path()).unwrap();
    let manifests: Vec<&std::path::Path> = out.manifests.iter().map(|p| p.as_path()).collect();
    let quiet = monte_carlo_band(&manifests, &out.latents, 0.0, 20, 1);
    for cells in quiet.values() {
        for (lo, hi) in cells {
            // the textbook form stops at the 1 - 1e-7 clamp
            assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
        }
    }
}
