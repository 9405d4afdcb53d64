use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LinalgError, Matrix};

/// `h + ε` with `ε` i.i.d. `N(0, sigma²)`, deterministic per `seed`.
pub fn add_noise(h: &Matrix, sigma: f64, seed: u64) -> Result<Matrix, LinalgError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(LinalgError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(h.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| LinalgError::NegativeSigma(sigma))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = h.clone();
    for x in out.as_mut_slice() {
        *x += normal.sample(&mut rng);
    }
    Ok(out)
}
