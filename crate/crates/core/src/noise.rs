//! Seeded multiplicative noise on power densities and the eigenvalue floor
//! that restores positive definiteness afterwards.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::ScalarField;
use crate::forward::PowerDensity;

pub const DEFAULT_SEED: u64 = 50;
pub const DEFAULT_EIG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Noise level in percent.
    pub alpha_percent: f64,
    pub seed: u64,
    /// Eigenvalue floor `L`; zero disables the clamp.
    pub eig_floor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { alpha_percent: 0.0, seed: DEFAULT_SEED, eig_floor: DEFAULT_EIG_FLOOR }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_percent >= 0.0 && self.alpha_percent.is_finite()) {
            return Err(Error::Parameter(format!("alpha_percent must be >= 0, got {}", self.alpha_percent)));
        }
        if !(self.eig_floor >= 0.0 && self.eig_floor.is_finite()) {
            return Err(Error::Parameter(format!("eig_floor must be >= 0, got {}", self.eig_floor)));
        }
        Ok(())
    }
}

/// `n` standard normals for one stream. Value `i` depends only on
/// `(seed, stream, i)`: each node owns four 32-bit words of the ChaCha
/// keystream, turned into one normal by Box-Muller.
pub fn standard_normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n)
        .map(|i| {
            rng.set_word_pos(4 * i as u128);
            let u1 = 1.0 - unit(rng.next_u64());
            let u2 = unit(rng.next_u64());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// Uniform in [0, 1) from the top 53 bits.
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `H̃ = H + (alpha/100) (e / ‖e‖) H` componentwise, with independent
/// standard-normal fields `e` for h11, h12, h22 and the Euclidean norm over nodes.
pub fn perturb(h: &PowerDensity, spec: &NoiseSpec) -> Result<PowerDensity> {
    spec.validate()?;
    if spec.alpha_percent == 0.0 {
        return Ok(h.clone());
    }
    let scale = spec.alpha_percent / 100.0;
    let noisy = |f: &ScalarField, stream: u64| -> ScalarField {
        let e = standard_normals(spec.seed, stream, f.len());
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = f.values().iter().zip(&e).map(|(&x, &ei)| x + scale * ei / norm * x).collect();
        ScalarField::from_values(values)
    };
    PowerDensity::new(noisy(&h.h11, 0), noisy(&h.h12, 1), noisy(&h.h22, 2), h.eps_d)
}

/// `(H̃ + H̃ᵀ) / 2`. With `h12` stored once the matrix is symmetric by
/// construction, so this only checks the representation.
pub fn symmetrize(h: &PowerDensity) -> PowerDensity {
    assert!(
        h.h12.len() == h.h11.len() && h.h22.len() == h.h11.len(),
        "power density must store one off-diagonal field"
    );
    h.clone()
}

/// Eigenvalues `(hi, lo)` of `[[a, b], [b, c]]` and the angle of the `hi` eigenvector.
pub fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    let hi = m + r;
    // Avoid cancellation in m - r when the small eigenvalue is tiny.
    let lo = if hi > 0.0 { (a * c - b * b) / hi } else { m - r };
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    (hi, lo, phi)
}

/// Raise every eigenvalue below `l` to `l`. Returns the clamped density and
/// the number of modified nodes.
pub fn clamp_eigenvalues(h: &PowerDensity, l: f64) -> Result<(PowerDensity, usize)> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Parameter(format!("eigenvalue floor must be positive, got {l}")));
    }
    let mut modified = 0;
    let triples: Vec<[f64; 3]> = (0..h.len())
        .map(|i| {
            let [a, b, c] = h.matrix(i);
            let (hi, lo, phi) = sym2_eigen(a, b, c);
            if lo >= l {
                return [a, b, c];
            }
            modified += 1;
            let (hi, lo) = (hi.max(l), l);
            let (cs, sn) = (phi.cos(), phi.sin());
            [hi * cs * cs + lo * sn * sn, (hi - lo) * cs * sn, hi * sn * sn + lo * cs * cs]
        })
        .collect();
    Ok((PowerDensity::from_triples(&triples, h.eps_d)?, modified))
}
