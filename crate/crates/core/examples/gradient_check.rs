//! Checks every differentiable primitive against finite differences.
//!
//! cargo run --example gradient_check

use behave::gradcheck::primitive_cases;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> behave::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in primitive_cases() {
        let worst = (0..20).map(|_| case.check(&mut rng, 1e-5)).collect::<behave::Result<Vec<f64>>>()?.into_iter().fold(0.0, f64::max);
        println!("{:<20} max relative error {worst:.2e}", case.name);
    }
    Ok(())
}
