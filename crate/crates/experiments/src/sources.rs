//! Canonical toy data sources used by the experiment harnesses.

use lpn_core::training::{DataSource, MixtureComponent};

/// Unit Laplace distribution in one dimension.
pub fn laplace_unit_1d() -> DataSource {
    DataSource::Laplacian {
        mu: 0.0,
        b: 1.0,
        dim: 1,
    }
}

/// Two well-separated isotropic Gaussians at `+-offset * (1, ..., 1)`.
pub fn two_component_mixture(dim: usize, offset: f64, std: f64) -> DataSource {
    let plus = vec![offset; dim];
    let minus = vec![-offset; dim];
    DataSource::GaussianMixture {
        components: vec![
            MixtureComponent {
                mean: plus,
                std,
                weight: 0.5,
            },
            MixtureComponent {
                mean: minus,
                std,
                weight: 0.5,
            },
        ],
        dim,
    }
}

/// Mixture of smooth bump profiles with intensities in [0, 1], used as toy
/// signals for deblurring and compressed sensing.
pub fn smooth_profile_mixture(dim: usize, std: f64) -> DataSource {
    let bump = |center: f64, width: f64| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let t = i as f64 / (dim - 1) as f64;
                let d = (t - center) / width;
                0.1 + 0.8 * (-0.5 * d * d).exp()
            })
            .collect()
    };
    DataSource::GaussianMixture {
        components: vec![
            MixtureComponent {
                mean: bump(0.3, 0.08),
                std,
                weight: 1.0,
            },
            MixtureComponent {
                mean: bump(0.55, 0.12),
                std,
                weight: 1.0,
            },
            MixtureComponent {
                mean: bump(0.75, 0.05),
                std,
                weight: 1.0,
            },
        ],
        dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpn_core::training::{make_batch, Sampler};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_profiles_stay_in_unit_range() {
        let source = smooth_profile_mixture(64, 0.0);
        let sampler = Sampler::new(&source).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (xs, _) = make_batch(&sampler, 0.0, 32, &mut rng);
        for v in xs.iter() {
            assert!(*v >= 0.0 && *v <= 1.0, "profile value {v} outside [0,1]");
        }
    }

    #[test]
    fn mixture_components_are_separated() {
        let source = two_component_mixture(8, 0.75, 0.15);
        let sampler = Sampler::new(&source).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, _) = make_batch(&sampler, 0.0, 200, &mut rng);
        let mut saw_plus = false;
        let mut saw_minus = false;
        for j in 0..xs.ncols() {
            let mean = xs.column(j).sum() / 8.0;
            assert!(mean.abs() > 0.3, "sample not clearly in either mode");
            saw_plus |= mean > 0.0;
            saw_minus |= mean < 0.0;
        }
        assert!(saw_plus && saw_minus);
    }
}
