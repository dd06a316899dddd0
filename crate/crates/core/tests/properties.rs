use proptest::prelude::*;
use refmap_core::brdf::{eval_disney, DiffuseAlbedo, ReflectanceParams};
use refmap_core::diffusion::{compute_k, rebin, Schedule};
use refmap_core::envmap::EnvironmentMap;
use refmap_core::geometry::Vec3;
use refmap_core::image::RgbImage;
use refmap_core::metrics::{fit_pca_vectors, psnr, si_log_rmse, ssim, topk_aggregate, Direction};
use refmap_core::render::{render_reflectance_map, ReflectanceMap};
use refmap_core::rng::{CounterRng, Stream};
use refmap_core::sh::{self, ShCoefficients};

fn psi() -> impl Strategy<Value = ReflectanceParams> {
    (prop_oneof![Just(0.0), Just(1.0), 0.0..1.0f64], 0.0..1.0f64, 0.0..1.0f64)
        .prop_map(|(m, r, s)| ReflectanceParams::new(m, r, s).unwrap())
}

fn upper_dir() -> impl Strategy<Value = Vec3> {
    (0.02..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let s = (1.0 - z * z).sqrt();
        Vec3::new(s * phi.cos(), s * phi.sin(), z)
    })
}

fn coeffs(degree: usize) -> impl Strategy<Value = ShCoefficients> {
    prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), sh::coeff_count(degree))
        .prop_map(move |c| ShCoefficients::new(degree, c).unwrap())
}

fn image(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(prop::array::uniform3(0.01..4.0f64), w * h).prop_map(move |d| RgbImage::new(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn brdf_is_reciprocal_and_nonnegative(p in psi(), wi in upper_dir(), wo in upper_dir(), rho in prop::array::uniform3(0.0..1.0f64)) {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let rho = DiffuseAlbedo(rho);
        let a = eval_disney(&p, &rho, wi, wo, n);
        let b = eval_disney(&p, &rho, wo, wi, n);
        for c in 0..3 {
            prop_assert!(a[c] >= 0.0);
            prop_assert!((a[c] - b[c]).abs() <= 1e-9 * a[c].abs().max(1.0));
        }
    }

    #[test]
    fn sh_projection_is_linear(a in coeffs(3), b in coeffs(3), s in -2.0..2.0f64) {
        let ea = sh::reconstruct(&a, 16).unwrap();
        let eb = sh::reconstruct(&b, 16).unwrap();
        let mix: Vec<_> = ea.data().iter().zip(eb.data()).map(|(x, y)| core::array::from_fn(|c| s * x[c] + y[c])).collect();
        let mix = EnvironmentMap::from_signed(16, 32, mix).unwrap();
        let p = sh::project(&mix, 3);
        for i in 0..p.coeffs.len() {
            for c in 0..3 {
                let want = s * a.coeffs[i][c] + b.coeffs[i][c];
                prop_assert!((p.coeffs[i][c] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn band_power_is_quadratic(a in coeffs(4), s in 0.1..3.0f64) {
        let p = sh::band_power(&a);
        let q = sh::band_power(&a.scaled(s));
        for (x, y) in p.power.iter().zip(&q.power) {
            prop_assert!((y - s * s * x).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn dimmer_light_and_darker_albedo_never_brighten(p in psi(), s in 0.0..1.0f64, k in 0.0..1.0f64) {
        let env = EnvironmentMap::from_fn(8, |d| [1.0 + d.y, 1.5 + 0.5 * d.x, 2.0 - d.z]);
        let white = DiffuseAlbedo::WHITE;
        let grey = DiffuseAlbedo([k; 3]);
        let full = render_reflectance_map(&p, &white, &env, 8).unwrap();
        let dim = render_reflectance_map(&p, &white, &env.scaled(s), 8).unwrap();
        let dark = render_reflectance_map(&p, &grey, &env, 8).unwrap();
        for cell in full.valid_cells() {
            for c in 0..3 {
                prop_assert!(dim.radiance[cell][c] <= full.radiance[cell][c] + 1e-12);
                prop_assert!(dark.radiance[cell][c] <= full.radiance[cell][c] + 1e-12);
            }
        }
    }

    #[test]
    fn log_error_ignores_global_scale(x in image(6, 5), y in image(6, 5), s in 0.01..100.0f64) {
        let a = si_log_rmse(&x, &y, None).unwrap();
        let b = si_log_rmse(&x.scaled(s), &y, None).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(si_log_rmse(&x, &x.scaled(s), None).unwrap() < 1e-9);
    }

    #[test]
    fn image_metrics_are_symmetric_and_bounded(x in image(12, 12), y in image(12, 12)) {
        let x = x.map(|v| v / 4.0);
        let y = y.map(|v| v / 4.0);
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        let s = ssim(&x, &y).unwrap();
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((s - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn topk_lies_within_the_values(v in prop::collection::vec(-50.0..50.0f64, 5..20), k in 1usize..5) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for dir in [Direction::LowerBetter, Direction::HigherBetter] {
            let a = topk_aggregate(&v, k, dir).unwrap();
            prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
        }
    }

    #[test]
    fn pca_mean_scores_zero(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 5), 3..12)) {
        let model = fit_pca_vectors(&rows, 0.99).unwrap();
        let s = model.score_vector(&model.mean).unwrap();
        prop_assert!(s.mahalanobis.abs() < 1e-9);
        for r in &rows {
            let z = model.project(r).unwrap();
            prop_assert_eq!(z.len(), model.retained);
        }
    }

    #[test]
    fn schedule_endpoints(ps in prop::collection::vec(psi(), 1..4), k_max in 1usize..200) {
        let s = Schedule::new(&ps, k_max).unwrap();
        prop_assert_eq!(s.k, compute_k(&ps, k_max).unwrap());
        prop_assert!(s.k >= 1 && s.k <= k_max);
        for (m, p) in ps.iter().enumerate() {
            prop_assert_eq!(s.psi(m, 0), ReflectanceParams::MIRROR);
            prop_assert_eq!(s.psi(m, s.k), *p);
        }
    }

    #[test]
    fn rebin_keeps_constant_maps(value in prop::array::uniform3(0.0..5.0f64), res in 2usize..8) {
        let mut map = ReflectanceMap::full_disk(16);
        for cell in 0..map.radiance.len() {
            if map.mask[cell] {
                map.radiance[cell] = value;
            }
        }
        let small = rebin(&map, res);
        prop_assert!(small.valid_count() > 0);
        for cell in small.valid_cells() {
            for c in 0..3 {
                prop_assert!((small.radiance[cell][c] - value[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn counter_rng_is_a_pure_function(seed in any::<u64>(), key in any::<u64>(), n in any::<u64>()) {
        let a = CounterRng::new(seed, Stream::Test).with(key);
        let u = a.uniform(n);
        prop_assert!(u > 0.0 && u < 1.0);
        prop_assert_eq!(u, CounterRng::new(seed, Stream::Test).with(key).uniform(n));
        prop_assert!(a.normal(n).is_finite());
    }
}
