//! Complete elliptic integrals by the arithmetic–geometric mean.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// `(K(k), E(k))` for modulus `0 ≤ k < 1`.
pub fn elliptic_ke(k: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&k) {
        return Err(invalid("k", format!("modulus must lie in [0, 1), got {k}")));
    }
    Ok(elliptic_ke_with_complement(k, ((1.0 - k) * (1.0 + k)).sqrt()))
}

/// Same as [`elliptic_ke`] with the complementary modulus `k′ = √(1−k²)`
/// supplied directly, which keeps full accuracy as `k → 1`.
pub fn elliptic_ke_with_complement(k: f64, k_prime: f64) -> (f64, f64) {
    let (mut a, mut b) = (1.0, k_prime);
    let mut c = k;
    let mut pow = 0.5;
    let mut sum = pow * c * c;
    for _ in 0..64 {
        if c.abs() <= 1e-17 * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.25 * c * c / an;
        a = an;
        b = bn;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let kk = PI / (2.0 * a);
    (kk, kk * (1.0 - sum))
}
