//! Small deterministic RNG helpers shared by parameter init and phantom
//! synthesis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Standard normal draw via Box-Muller (one value per pair of uniforms, the
/// sine branch discarded to keep the stream layout simple).
pub(crate) fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
