mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vismpc_core::flow::{advect_distribution, advect_image, composite_flow, scatter_mass, AdvectionMode};
use vismpc_core::grid::{FlowField, Image};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn composited_flow_is_normalized(seed in any::<u64>(), w in 1usize..10, h in 1usize..10, c in 1usize..6, r in 0usize..3) {
        let mut g = rng(seed);
        let masks = random_masks(&mut g, w, h, c);
        let kernels = random_kernels(&mut g, c, r);
        let flow = composite_flow(&masks, &kernels).unwrap();
        for y in 0..h {
            for x in 0..w {
                let k = flow.kernel(x, y);
                prop_assert!(k.iter().all(|v| *v >= 0.0 && v.is_finite()));
                prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        prop_assert!(FlowField::new(w, h, r, flow.weights().to_vec()).is_ok());
    }

    #[test]
    fn scatter_conserves_mass(seed in any::<u64>(), w in 1usize..10, h in 1usize..10, r in 0usize..3, scale in 0.1f64..10.0) {
        let mut g = rng(seed);
        let flow = random_flow(&mut g, w, h, r);
        let d = random_distribution(&mut g, w, h);
        let scaled = vismpc_core::PixelDistribution::from_vec(w, h, d.mass().iter().map(|m| m * scale).collect()).unwrap();
        let out = scatter_mass(&flow, &scaled).unwrap();
        prop_assert!((out.total() - scaled.total()).abs() < 1e-9 * scale.max(1.0));
    }

    #[test]
    fn image_advection_is_convex(seed in any::<u64>(), w in 8usize..17, h in 8usize..17, r in 0usize..3) {
        let mut g = rng(seed);
        let flow = random_flow(&mut g, w, h, r);
        let img = random_image(&mut g, w, h);
        let (lo, hi) = img.min_max();
        let out = advect_image(&flow, &img).unwrap();
        prop_assert!(out.data().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn image_advection_is_linear(seed in any::<u64>(), w in 8usize..17, h in 8usize..17, r in 0usize..3) {
        let mut g = rng(seed);
        let flow = random_flow(&mut g, w, h, r);
        let a = random_image(&mut g, w, h);
        let b = random_image(&mut g, w, h);
        let (alpha, beta) = (g.random_range(-3.0..3.0), g.random_range(-3.0..3.0));
        let mix = Image::from_vec(w, h, a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect()).unwrap();
        let lhs = advect_image(&flow, &mix).unwrap();
        let (fa, fb) = (advect_image(&flow, &a).unwrap(), advect_image(&flow, &b).unwrap());
        for ((l, x), y) in lhs.data().iter().zip(fa.data()).zip(fb.data()) {
            prop_assert!((l - (alpha * x + beta * y)).abs() < 1e-6);
        }
    }

    #[test]
    fn scatter_matches_transition_matrix(seed in any::<u64>()) {
        let mut g = rng(seed);
        let flows: Vec<FlowField> = (0..3).map(|_| random_flow(&mut g, 8, 8, 1)).collect();
        let start = random_distribution(&mut g, 8, 8);
        let mut d = start.clone();
        let mut product = nalgebra::DMatrix::identity(64, 64);
        for f in &flows {
            let t = transition_matrix(f);
            let next = advect_distribution(f, &d, AdvectionMode::Scatter).unwrap();
            prop_assert!((as_vector(&next) - &t * as_vector(&d)).amax() < 1e-9);
            product = t * product;
            d = next;
        }
        prop_assert!((as_vector(&d) - product * as_vector(&start)).amax() < 1e-9);
    }
}
