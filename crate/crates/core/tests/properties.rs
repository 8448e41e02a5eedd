//! Property tests over randomly drawn geometries, arrays and configs.

mod common;

use cbct_core::arrays::io::{decode, encode};
use cbct_core::arrays::Precision;
use cbct_core::enhance::{enhance, Domain, EnhancementStage, Enhancer, Slicing};
use cbct_core::pipeline::Variant;
use cbct_core::{mse, simulate_dose, ConeBeamGeometry, CtArray, DoseModel, LinearOperator, Sinogram, SystemOperator, Volume};
use common::{dot, norm};
use proptest::prelude::*;

fn small_geometry() -> impl Strategy<Value = ConeBeamGeometry> {
    (
        20.0..80.0f64,
        1.2..3.0f64,
        2..10usize,
        2..10usize,
        0.5..3.0f64,
        0.5..3.0f64,
        1..8usize,
        (2..9usize, 2..9usize, 1..9usize),
        0.5..2.0f64,
    )
        .prop_map(|(sod, mag, nu, nv, du, dv, views, (nx, ny, nz), voxel)| {
            ConeBeamGeometry::make_circular(sod, sod * mag, nu, nv, du, dv, views, nx, ny, nz, voxel).unwrap()
        })
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_pair_is_adjoint((op, x, y) in small_geometry().prop_flat_map(|g| {
        let op = SystemOperator::new(g);
        let (n, m) = (op.domain_len(), op.range_len());
        (Just(op), values(n), values(m))
    })) {
        let mut ax = vec![0.0; op.range_len()];
        let mut aty = vec![0.0; op.domain_len()];
        op.apply(&x, &mut ax);
        op.apply_adjoint(&y, &mut aty);
        let gap = (dot(&ax, &y) - dot(&x, &aty)).abs();
        prop_assert!(gap <= 1e-10 * (norm(&ax) * norm(&y) + norm(&x) * norm(&aty)) + 1e-12);
    }

    #[test]
    fn batched_apply_matches_single((op, xs) in small_geometry().prop_flat_map(|g| {
        let op = SystemOperator::new(g);
        let n = op.domain_len();
        (Just(op), prop::collection::vec(values(n), 1..4))
    })) {
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let mut many = vec![vec![0.0; op.range_len()]; xs.len()];
        let mut outs: Vec<&mut [f64]> = many.iter_mut().map(|v| v.as_mut_slice()).collect();
        op.apply_many(&refs, &mut outs);
        for (x, batched) in xs.iter().zip(&many) {
            let mut single = vec![0.0; op.range_len()];
            op.apply(x, &mut single);
            prop_assert!(single.iter().zip(batched).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn nonnegative_volumes_project_nonnegative((op, x) in small_geometry().prop_flat_map(|g| {
        let op = SystemOperator::new(g);
        let n = op.domain_len();
        (Just(op), prop::collection::vec(0.0..5.0f64, n))
    })) {
        let mut ax = vec![0.0; op.range_len()];
        op.apply(&x, &mut ax);
        prop_assert!(ax.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn f64_files_round_trip(nx in 1..6usize, ny in 1..6usize, nz in 1..6usize, bits in prop::collection::vec(any::<u64>(), 125)) {
        let data: Vec<f64> = bits.iter().take(nx * ny * nz).map(|&b| f64::from_bits(b)).map(|v| if v.is_finite() { v } else { 0.0 }).collect();
        let vol: CtArray = Volume::from_data(nx, ny, nz, 1.0, data).unwrap().into();
        let (back, _) = decode(&encode(&vol, Precision::F64, Default::default()).unwrap()).unwrap();
        prop_assert!(back.grid().data().iter().zip(vol.grid().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mse_is_symmetric_and_zero_on_self(a in values(24), b in values(24)) {
        let va = Volume::from_data(2, 3, 4, 1.0, a).unwrap();
        let vb = Volume::from_data(2, 3, 4, 1.0, b).unwrap();
        prop_assert_eq!(mse(&va, &vb).unwrap(), mse(&vb, &va).unwrap());
        prop_assert_eq!(mse(&va, &va).unwrap(), 0.0);
    }

    #[test]
    fn identity_enhancement_changes_nothing(data in values(60)) {
        let sino: CtArray = Sinogram::from_data(3, 4, 5, 1.0, 1.0, data).unwrap().into();
        prop_assert_eq!(enhance(&EnhancementStage::identity(Domain::Sinogram), &sino).unwrap(), sino);
    }

    #[test]
    fn tv_denoising_stays_within_the_data_range(data in prop::collection::vec(0.0..4.0f64, 64), lambda in 0.01..1.0f64) {
        let vol: CtArray = Volume::from_data(4, 4, 4, 1.0, data.clone()).unwrap().into();
        let stage = EnhancementStage::new(Domain::Image, Enhancer::Tv { lambda, iterations: 30 }, Slicing::PerZSlice).unwrap();
        let out = enhance(&stage, &vol).unwrap();
        let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(out.grid().data().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn dose_simulation_is_reproducible(data in prop::collection::vec(0.0..3.0f64, 24), seed in any::<u64>()) {
        let clean = Sinogram::from_data(2, 3, 4, 1.0, 1.0, data).unwrap();
        let model = DoseModel { i0: 1e4, count_floor: 1.0, seed };
        let a = simulate_dose(&clean, &model).unwrap();
        let b = simulate_dose(&clean, &model).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn variant_names_round_trip(m in 0..4usize, sem: bool, iem: bool) {
        let name = format!("{}{}{}", ["fdk", "sirt", "gd", "nag"][m], if sem { "+sem" } else { "" }, if iem { "+iem" } else { "" });
        let v: Variant = name.parse().unwrap();
        prop_assert_eq!(v.to_string(), name);
    }
}
