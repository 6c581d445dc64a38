//! Compactly supported C² test functions on the disc.

use rand::Rng;

use crate::mesh::{DiscMesh, NodalScalar};

/// `ζ(X) = a·(1 − |X − c|²/ρ²)³` inside the disc of radius `ρ` around `c`,
/// zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

/// Outer limit for `|c| + ρ` of random bumps, keeping the support off `∂D₁`.
pub const SUPPORT_LIMIT: f64 = 0.95;

impl Bump {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let s = 1.0 - (dx * dx + dy * dy) / (self.radius * self.radius);
        if s <= 0.0 {
            0.0
        } else {
            self.amplitude * s * s * s
        }
    }

    pub fn sample(&self, mesh: &DiscMesh) -> NodalScalar {
        mesh.sample_nodal(|x, y| self.value(x, y))
    }

    /// Random bump with `|c| + ρ ≤ SUPPORT_LIMIT` and `ρ ≥ 0.2`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let radius = rng.random_range(0.2..0.7);
        let reach = SUPPORT_LIMIT - radius;
        let r = reach * rng.random::<f64>().sqrt();
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            center: [r * t.cos(), r * t.sin()],
            radius,
            amplitude: rng.random_range(0.5..2.0),
        }
    }
}

/// `ζ(X) = (1 − |X|²)²`, vanishing on the boundary.
pub fn quartic_bump(mesh: &DiscMesh) -> NodalScalar {
    mesh.sample_nodal(|x, y| {
        let s = 1.0 - x * x - y * y;
        s * s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_bumps_vanish_on_boundary() {
        let mesh = DiscMesh::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let b = Bump::random(&mut rng);
            let z = b.sample(&mesh);
            assert!(mesh.boundary_nodes().iter().all(|&i| z[i] == 0.0));
            assert!(z.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn peak_at_center() {
        let b = Bump {
            center: [0.1, -0.2],
            radius: 0.5,
            amplitude: 2.0,
        };
        assert_eq!(b.value(0.1, -0.2), 2.0);
        assert_eq!(b.value(0.6, -0.2), 0.0);
    }
}
