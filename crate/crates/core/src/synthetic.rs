//! Synthetic target data: simulate, extract a pattern, optionally perturb.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::config::{ModelParameters, OrganogenesisRules};
use crate::engine::simulate;
use crate::error::EngineError;
use crate::patterns::{ObservationPattern, TargetDataset};

/// Targets produced by the model itself, each value multiplied by an
/// independent lognormal factor `exp(σ·N(0,1))`. σ = 0 gives exact values.
pub fn generate_targets(
    params: &ModelParameters,
    rules: &OrganogenesisRules,
    pattern: &dyn ObservationPattern,
    sigma: f64,
    seed: u64,
) -> Result<TargetDataset, EngineError> {
    assert!(sigma >= 0.0 && sigma.is_finite(), "noise level must be a finite σ >= 0");
    let mut targets = pattern.extract(&simulate(params, rules)?).to_targets();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = LogNormal::new(0.0, sigma).expect("valid σ");
        for row in &mut targets.rows {
            row.value *= noise.sample(&mut rng);
        }
    }
    Ok(targets)
}
