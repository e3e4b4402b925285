use csnet_core::metrics::{chamfer, emd, min_cost_assignment};
use csnet_core::pointcloud::PointCloud;
use csnet_core::verify::brute_force_emd;
use proptest::prelude::*;

fn cloud(points: Vec<[f32; 3]>) -> PointCloud {
    PointCloud::new(points).unwrap()
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0f32..1.0), 1..max)
}

proptest! {
    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(a in points(20), b in points(20)) {
        let (a, b) = (cloud(a), cloud(b));
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn metrics_ignore_point_order(a in points(12), b in points(12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (mut pa, mut pb) = (a.clone(), b.clone());
        pa.shuffle(&mut rng);
        pb.shuffle(&mut rng);
        let cd = chamfer(&cloud(a.clone()), &cloud(b.clone())).unwrap();
        let cd_perm = chamfer(&cloud(pa.clone()), &cloud(pb.clone())).unwrap();
        prop_assert!((cd - cd_perm).abs() <= 1e-12 * cd.max(1.0));
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let (small_p, large_p) = if pa.len() <= pb.len() { (pa, pb) } else { (pb, pa) };
        let e = emd(&cloud(small), &cloud(large)).unwrap().0;
        let e_perm = emd(&cloud(small_p), &cloud(large_p)).unwrap().0;
        prop_assert!((e - e_perm).abs() <= 1e-12 * e.max(1.0));
    }

    #[test]
    fn subsets_have_zero_emd(a in points(30), pick in any::<u64>()) {
        let input = cloud(a);
        let indices: Vec<usize> = (0..input.len()).filter(|i| (pick >> (i % 64)) & 1 == 1).collect();
        prop_assume!(!indices.is_empty());
        let (cost, matching) = emd(&input.select(&indices), &input).unwrap();
        prop_assert_eq!(cost, 0.0);
        prop_assert!(matching.pair_costs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn emd_matches_enumeration(a in points(5), b in points(7)) {
        prop_assume!(a.len() <= b.len());
        let (a, b) = (cloud(a), cloud(b));
        let exact = emd(&a, &b).unwrap().0;
        prop_assert!((exact - brute_force_emd(&a, &b)).abs() <= 1e-12);
    }
}

#[test]
fn emd_needs_enough_input_points() {
    let a = cloud(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
    let b = cloud(vec![[0.0; 3]]);
    assert!(emd(&a, &b).is_err());
}

#[test]
fn assignment_picks_the_cheaper_diagonal() {
    let cost = [1.0, 5.0, 4.0, 2.0, 3.0, 9.0];
    assert_eq!(min_cost_assignment(&cost, 2, 3).unwrap(), vec![0, 1]);
}
