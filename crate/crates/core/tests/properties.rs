use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pem_core::ensemble::{kss_split, pi_kss, pio_kss, po_kss, validate_plan, LayerShape};
use pem_core::gsgd::{adaptive_denominator, sphere_denominator};
use pem_core::harness::{finite_difference_gradient, max_relative_error, Procrustes, Rayleigh};
use pem_core::{Batch, Execution, GsgdConfig, ManifoldKind, ManifoldSpec, Objective, OptimizerState, ProductManifold};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn spec_strategy() -> impl Strategy<Value = ManifoldSpec> {
    (0..4usize, 1..5usize, 1..4usize).prop_map(|(k, a, b)| match k {
        0 => ManifoldSpec::euclidean(a, b).unwrap(),
        1 => ManifoldSpec::sphere(a + 1, b).unwrap(),
        2 => ManifoldSpec::oblique(a, b).unwrap(),
        _ => ManifoldSpec::stiefel(a.max(b), b).unwrap(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_idempotent_and_orthogonal(spec in spec_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = spec.random_point(seed);
        let v = gaussian(&mut rng, spec.ambient_dim());
        let w = gaussian(&mut rng, spec.ambient_dim());
        let pv = spec.tangent_project(&p, &v).unwrap();
        let ppv = spec.tangent_project(&p, &pv).unwrap();
        for (a, b) in pv.iter().zip(&ppv) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        let normal: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let pw = spec.tangent_project(&p, &w).unwrap();
        prop_assert!(dot(&normal, &pw).abs() < 1e-8);
    }

    #[test]
    fn retraction_lands_on_the_manifold(spec in spec_strategy(), seed in any::<u64>(), scale in 0.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = spec.random_point(seed);
        let v: Vec<f64> = gaussian(&mut rng, spec.ambient_dim()).iter().map(|x| x * scale).collect();
        let v = spec.tangent_project(&p, &v).unwrap();
        let q = spec.retract(&p, &v).unwrap();
        prop_assert!(spec.constraint_residual(&q) < 1e-10);
    }

    #[test]
    fn product_inner_is_sum_of_components(specs in prop::collection::vec(spec_strategy(), 2..9), seed in any::<u64>()) {
        let m = ProductManifold::new(specs.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = gaussian(&mut rng, m.total_ambient_dim());
        let v = gaussian(&mut rng, m.total_ambient_dim());
        let sum: f64 = (0..specs.len()).map(|i| specs[i].inner(&u[m.range(i)], &v[m.range(i)]).unwrap()).sum();
        prop_assert!((m.inner(&u, &v).unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn mixed_planes_are_flat(n1 in 2..5usize, n2 in 2..5usize, seed in any::<u64>()) {
        let a = ManifoldSpec::sphere(n1, 1).unwrap();
        let b = ManifoldSpec::sphere(n2, 1).unwrap();
        let m = ProductManifold::new(vec![a, b]).unwrap();
        let p = m.random_point(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut u = m.tangent_project(&p, &gaussian(&mut rng, n1 + n2)).unwrap();
        let mut v = m.tangent_project(&p, &gaussian(&mut rng, n1 + n2)).unwrap();
        u[n1..].iter_mut().for_each(|x| *x = 0.0);
        v[..n1].iter_mut().for_each(|x| *x = 0.0);
        prop_assert!(m.sectional_curvature(&u, &v).unwrap().abs() < 1e-10);
    }

    #[test]
    fn sphere_product_curvature_in_unit_interval(dims in prop::collection::vec(2..5usize, 1..5), seed in any::<u64>()) {
        let m = ProductManifold::new(dims.iter().map(|&n| ManifoldSpec::sphere(n, 1).unwrap()).collect()).unwrap();
        let p = m.random_point(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let u = m.tangent_project(&p, &gaussian(&mut rng, m.total_ambient_dim())).unwrap();
        let v = m.tangent_project(&p, &gaussian(&mut rng, m.total_ambient_dim())).unwrap();
        if let Ok(k) = m.sectional_curvature(&u, &v) {
            prop_assert!((-1e-10..=1.0 + 1e-10).contains(&k));
        }
    }

    #[test]
    fn kss_plans_cover_exactly(
        a in 1..4usize, b in 1..4usize, c in 1..7usize, d in 1..7usize, m in 1..40usize, which in 0..3u8
    ) {
        // a 1x1 sphere is two points, not a manifold
        prop_assume!(a * b >= 2);
        let shape = LayerShape::new(2, a, b, c, d).unwrap();
        let kinds = [ManifoldKind::Sphere.into(), ManifoldKind::Euclidean.into()];
        let plan = match which {
            0 => pi_kss(&shape, m, &kinds),
            1 => po_kss(&shape, m, &kinds),
            _ => pio_kss(&shape, m, &kinds),
        };
        let limit = [d, c, c * d][which as usize];
        prop_assert_eq!(plan.is_ok(), m <= limit);
        if let Ok(plan) = plan {
            prop_assert!(validate_plan(&plan, &shape).is_ok());
        }
    }

    #[test]
    fn kss_sizes_differ_by_at_most_one(n in 1..200usize, m in 1..50usize) {
        prop_assume!(m <= n);
        let parts = kss_split(n, m).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
    }

    #[test]
    fn denominator_floor_and_monotonicity(r in 0.0..50.0f64, dr in 0.0..5.0f64, rho in 0.0..3.0f64, c in 0.0..4.0f64) {
        let g = adaptive_denominator(r, rho, c);
        prop_assert!(g >= 1.0);
        prop_assert!(adaptive_denominator(r + dr, rho, c) >= g);
        prop_assert!(sphere_denominator(r + dr) >= sphere_denominator(r));
    }

    #[test]
    fn step_stays_feasible_and_bounded(specs in prop::collection::vec(spec_strategy(), 1..5), seed in any::<u64>(), big in 0.0..100.0f64) {
        let m = ProductManifold::new(specs).unwrap();
        let p = m.random_point(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let g: Vec<f64> = gaussian(&mut rng, m.total_ambient_dim()).iter().map(|x| x * big).collect();
        let mut s = OptimizerState::new(GsgdConfig::default(), vec![m.clone()], vec![p.clone()], 3).unwrap();
        let d = s.step(std::slice::from_ref(&g), Execution::SEQUENTIAL).unwrap()[0];
        prop_assert!(d.denom >= 1.0);
        prop_assert!(d.residual < 1e-8);
        // effective step length never exceeds g(t)·R
        prop_assert!(d.learning_rate / d.denom * d.r <= d.learning_rate * d.r + 1e-15);
    }
}

#[test]
fn gradcheck_rayleigh_and_procrustes() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let n = rng.random_range(2..7);
        let a = gaussian(&mut rng, n * n);
        let ray = Rayleigh::new(n, a).unwrap();
        let w = vec![gaussian(&mut rng, n)];
        let (_, g) = ray.loss_and_grad(&w, Batch::Full).unwrap();
        let fd = finite_difference_gradient(&ray, &w, Batch::Full, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-5);

        let pr = Procrustes::new(5, 3, gaussian(&mut rng, 15))
            .unwrap()
            .with_conditioning(gaussian(&mut rng, 9))
            .unwrap();
        let w = vec![gaussian(&mut rng, 15)];
        let (_, g) = pr.loss_and_grad(&w, Batch::Full).unwrap();
        let fd = finite_difference_gradient(&pr, &w, Batch::Full, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-5);
    }
}

#[test]
fn rayleigh_minimum_is_basis_invariant() {
    use nalgebra::DMatrix;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5;
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &a + a.transpose();
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let b = q.transpose() * &a * &q;
    let min = |m: &DMatrix<f64>| m.clone().symmetric_eigen().eigenvalues.min();
    assert!((min(&a) - min(&b)).abs() < 1e-12);
    let ray = Rayleigh::new(n, b.transpose().iter().copied().collect()).unwrap();
    let v = b.clone().symmetric_eigen();
    let i = v.eigenvalues.imin();
    let w = vec![v.eigenvectors.column(i).iter().copied().collect::<Vec<_>>()];
    assert!((ray.loss(&w, Batch::Full).unwrap() - min(&a)).abs() < 1e-12);
}

#[test]
fn objectives_are_pure() {
    let ray = Rayleigh::diagonal(&[3.0, 1.0, 2.0]).unwrap();
    let w = vec![vec![0.6, 0.0, 0.8]];
    let a = ray.loss_and_grad(&w, Batch::Full).unwrap();
    let b = ray.loss_and_grad(&w, Batch::Full).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}
