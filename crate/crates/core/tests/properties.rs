use deftrans::geometry::{
    apply_deformation, apply_rigid, chamfer_distance, knn_indices, mean_distance, DeformationField, PointCloud,
    RigidTransform, Vec3,
};
use deftrans::synth::{make_pair, percentile_95, sample_primitive, ChallengeSpec, Primitive};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-10.0f64..10.0).prop_map(Vec3::from)
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), 1..max).prop_map(|p| PointCloud::new(p).unwrap())
}

/// Multiples of 1/64 in [-16, 16]: sums and differences of these are exact.
fn dyadic_point() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1024i32..=1024).prop_map(|a| Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64) / 64.0)
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (point(), -3.2f64..3.2, point()).prop_map(|(axis, angle, t)| {
        let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidTransform::new(*r.matrix(), t).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_distances_are_zero(a in cloud(40)) {
        prop_assert_eq!(mean_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_is_symmetric(a in cloud(40), b in cloud(40)) {
        prop_assert_eq!(chamfer_distance(&a, &b).unwrap(), chamfer_distance(&b, &a).unwrap());
    }

    #[test]
    fn mean_distance_rigid_invariant(pts in prop::collection::vec((point(), point()), 1..40), xf in rigid()) {
        let a = PointCloud::new(pts.iter().map(|p| p.0).collect()).unwrap();
        let b = PointCloud::new(pts.iter().map(|p| p.1).collect()).unwrap();
        let before = mean_distance(&a, &b).unwrap();
        let after = mean_distance(&apply_rigid(&a, &xf).unwrap(), &apply_rigid(&b, &xf).unwrap()).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1e-300));
    }

    #[test]
    fn knn_rows_sorted(q in cloud(20), r in cloud(30), k in 1usize..8) {
        let k = k.min(r.len());
        let table = knn_indices(&q, &r, k).unwrap();
        for (i, row) in table.iter_rows().enumerate() {
            let d: Vec<f64> = row.iter().map(|&j| (q.point(i) - r.point(j)).norm_squared()).collect();
            prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            for w in row.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (da, db) = ((q.point(i) - r.point(a)).norm_squared(), (q.point(i) - r.point(b)).norm_squared());
                prop_assert!(da < db || a < b);
            }
        }
    }

    #[test]
    fn deformation_recovers_field(pts in prop::collection::vec((dyadic_point(), dyadic_point()), 1..40)) {
        let a = PointCloud::new(pts.iter().map(|p| p.0).collect()).unwrap();
        let field = DeformationField::new(pts.iter().map(|p| p.1).collect()).unwrap();
        let moved = apply_deformation(&a, &field).unwrap();
        for (i, u) in field.displacements().iter().enumerate() {
            prop_assert_eq!(moved.point(i) - a.point(i), *u);
        }
    }

    #[test]
    fn generated_pairs_keep_invariants(
        seed in any::<u64>(),
        level in 0.0f64..=1.0,
        overlap in 0.3f64..=1.0,
        outliers in 0.0f64..0.5,
        shape in 0usize..5,
    ) {
        let source = sample_primitive(Primitive::ALL[shape], 200, seed).unwrap();
        let spec = ChallengeSpec {
            deformation_level: level,
            noise_sigma: 0.0,
            outlier_fraction: outliers,
            overlap_ratio: overlap,
            rotation_max: 1.0,
            seed,
        };
        let pair = make_pair(&source, &spec).unwrap();
        pair.validate().unwrap();
        prop_assert!(pair.ground_truth_residual() < 1e-12);
        prop_assert!((pair.overlap() - overlap).abs() <= 0.02 + 1e-12);
        let p95 = percentile_95(&pair.field_gt.magnitudes());
        prop_assert!((p95 - 0.5 * level * source.diagonal()).abs() < 1e-9);
        prop_assert_eq!(make_pair(&source, &spec).unwrap(), pair);
    }
}
