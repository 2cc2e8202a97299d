//! Structural properties that make the gradient map a proximal operator:
//! convexity of the potential, strong monotonicity, Jacobian symmetry and
//! spectral lower bound, Lipschitz behavior, and the proximal inequality of
//! the recovered regularizer.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lpn_core::icnn::{
    init_params, lpn_forward, lpn_jacobian, psi, IcnnArch, InitScheme,
};
use lpn_core::prior::eval_prior;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

#[test]
fn potential_midpoint_convexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let archs = [
        IcnnArch::new(1, vec![6, 6], 0.0, 10.0).unwrap(),
        IcnnArch::new(4, vec![8, 8], 0.2, 10.0).unwrap(),
        IcnnArch::new(8, vec![10], 0.05, 5.0).unwrap(),
    ];
    let mut checked = 0;
    for arch in &archs {
        for p in 0..4 {
            let params = init_params(arch, 500 + p, InitScheme::ExpGaussian);
            for _ in 0..90 {
                let a = rand_vec(arch.input_dim, &mut rng) * 2.0;
                let c = rand_vec(arch.input_dim, &mut rng) * 2.0;
                let mid = (&a + &c) * 0.5;
                let lhs = psi(&params, arch, &mid).unwrap();
                let rhs = 0.5 * (psi(&params, arch, &a).unwrap() + psi(&params, arch, &c).unwrap());
                assert!(
                    lhs <= rhs + 1e-10,
                    "midpoint convexity violated: {lhs} > {rhs}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 1000);
}

#[test]
fn gradient_map_strongly_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (arch_seed, alpha) in [(0u64, 0.05), (1, 0.3), (2, 0.9)] {
        let arch = IcnnArch::new(3, vec![7, 7], alpha, 10.0).unwrap();
        let params = init_params(&arch, 600 + arch_seed, InitScheme::ExpGaussian);
        for _ in 0..200 {
            let a = rand_vec(3, &mut rng) * 2.0;
            let c = rand_vec(3, &mut rng) * 2.0;
            let fa = lpn_forward(&params, &arch, &a).unwrap();
            let fc = lpn_forward(&params, &arch, &c).unwrap();
            let inner = (fa - fc).dot(&(&a - &c));
            let bound = alpha * (&a - &c).norm_squared();
            assert!(
                inner >= bound - 1e-8,
                "monotonicity violated: {inner} < {bound}"
            );
        }
    }
}

#[test]
fn jacobian_symmetric_with_spectrum_above_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let arch = IcnnArch::new(5, vec![9, 9], 0.15, 10.0).unwrap();
    for p in 0..4 {
        let params = init_params(&arch, 700 + p, InitScheme::ExpGaussian);
        for _ in 0..25 {
            let y = rand_vec(5, &mut rng) * 1.5;
            let j = lpn_jacobian(&params, &arch, &y).unwrap();
            let asym = (&j - j.transpose()).norm() / j.norm();
            assert!(asym <= 1e-8, "Jacobian asymmetry {asym}");
            let sym = (&j + j.transpose()) * 0.5;
            let eig = sym.symmetric_eigen().eigenvalues;
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= arch.alpha - 1e-8,
                "eigmin {min} below alpha {}",
                arch.alpha
            );
        }
    }
}

/// Spot-check of Lipschitz behavior: the largest Jacobian spectral norm over
/// the sampled points (endpoints and midpoints of each tested pair), times a
/// 1% slack, dominates all finite differences between those points.
#[test]
fn lipschitz_spot_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arch = IcnnArch::new(3, vec![8, 8], 0.1, 10.0).unwrap();
    let params = init_params(&arch, 800, InitScheme::ExpGaussian);

    let spectral = |y: &DVector<f64>| -> f64 {
        let j = lpn_jacobian(&params, &arch, y).unwrap();
        let sym = (&j + j.transpose()) * 0.5;
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };

    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..30)
        .map(|_| (rand_vec(3, &mut rng) * 2.0, rand_vec(3, &mut rng) * 2.0))
        .collect();
    let mut l_hat = 0.0f64;
    for (a, c) in &pairs {
        l_hat = l_hat
            .max(spectral(a))
            .max(spectral(c))
            .max(spectral(&((a + c) * 0.5)));
    }
    l_hat *= 1.01;

    for (a, c) in &pairs {
        let fa = lpn_forward(&params, &arch, a).unwrap();
        let fc = lpn_forward(&params, &arch, c).unwrap();
        assert!(
            (fa - fc).norm() <= l_hat * (a - c).norm(),
            "Lipschitz spot-check failed"
        );
    }
}

/// The defining inequality of a proximal operator with respect to its own
/// recovered regularizer: f(y) minimizes 0.5||y - x||^2 + R(x).
#[test]
fn prox_inequality_against_recovered_regularizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let arch = IcnnArch::new(2, vec![6, 6], 0.25, 10.0).unwrap();
    let params = init_params(&arch, 900, InitScheme::ExpGaussian);
    let tol = 1e-10;
    for _ in 0..10 {
        let y = rand_vec(2, &mut rng) * 1.5;
        let fy = lpn_forward(&params, &arch, &y).unwrap();
        let r_fy = eval_prior(&params, &arch, &fy, tol).unwrap();
        assert!(r_fy.inversion.converged);
        let lhs = 0.5 * (&y - &fy).norm_squared() + r_fy.value;
        for _ in 0..40 {
            let cand = rand_vec(2, &mut rng) * 2.0;
            let r_cand = eval_prior(&params, &arch, &cand, tol).unwrap();
            assert!(r_cand.inversion.converged);
            let rhs = 0.5 * (&y - &cand).norm_squared() + r_cand.value;
            assert!(
                lhs <= rhs + 1e-6,
                "prox inequality violated: {lhs} > {rhs}"
            );
        }
    }
}

/// Coercivity along rays: the recovered regularizer eventually increases.
#[test]
fn regularizer_coercive_along_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let arch = IcnnArch::new(2, vec![6], 0.3, 10.0).unwrap();
    let params = init_params(&arch, 950, InitScheme::ExpGaussian);
    for _ in 0..5 {
        let mut d = rand_vec(2, &mut rng);
        d /= d.norm();
        let ts = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let values: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let e = eval_prior(&params, &arch, &(&d * t), 1e-10).unwrap();
                assert!(e.inversion.converged);
                e.value
            })
            .collect();
        // Eventually increasing: the tail rises and the maximum sits at the
        // far end of the ray.
        let last = values.len() - 1;
        assert!(
            values[last] > values[last - 1] && values[last - 1] > values[last - 2],
            "regularizer not eventually increasing along ray: {values:?}"
        );
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, values[last], "maximum not at the ray end: {values:?}");
    }
}

/// The assembled Jacobian agrees with its definition as the derivative of f
/// on a dense matrix of directions.
#[test]
fn jacobian_consistent_with_forward_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let arch = IcnnArch::new(4, vec![5, 5], 0.2, 5.0).unwrap();
    let params = init_params(&arch, 990, InitScheme::ExpGaussian);
    let y = rand_vec(4, &mut rng);
    let j = lpn_jacobian(&params, &arch, &y).unwrap();
    let h = 1e-6;
    let mut fd = DMatrix::zeros(4, 4);
    for k in 0..4 {
        let mut e = DVector::zeros(4);
        e[k] = 1.0;
        let fp = lpn_forward(&params, &arch, &(&y + &e * h)).unwrap();
        let fm = lpn_forward(&params, &arch, &(&y - &e * h)).unwrap();
        fd.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    assert!((j - fd).norm() <= 1e-6);
}
