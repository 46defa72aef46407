use proptest::prelude::*;
use qcdistort_core::geometry::{
    affine_between, dilatation_of, dilatation_of_linear, distortion_from_singular_values, Linear2, Point2, Triangle,
};

fn point() -> impl Strategy<Value = Point2> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Point2::new(x, y))
}

// Positively oriented and not too thin.
fn triangle() -> impl Strategy<Value = Triangle> {
    (point(), point(), point()).prop_filter_map("thin", |(a, b, c)| {
        let (b, c) = if (b - a).cross(c - a) < 0.0 { (c, b) } else { (b, c) };
        let t = Triangle::new(a, b, c).ok()?;
        (t.aspect_ratio() < 50.0).then_some(t)
    })
}

proptest! {
    #[test]
    fn affine_map_hits_vertices(src in triangle(), dst in triangle()) {
        let piece = affine_between(&src, &dst);
        for (v, w) in piece.image().iter().zip(dst.vertices()) {
            prop_assert!(v.dist(w) < 1e-8 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn distortion_at_least_one(src in triangle(), dst in triangle()) {
        let k = dilatation_of(&affine_between(&src, &dst)).unwrap().k;
        prop_assert!(k >= 1.0 - 1e-12);
    }

    #[test]
    fn beltrami_matches_singular_values(src in triangle(), dst in triangle()) {
        let l = affine_between(&src, &dst).linear;
        let a = dilatation_of_linear(&l).unwrap().k;
        let b = distortion_from_singular_values(&l);
        prop_assert!((a - b).abs() <= 1e-6 * a);
    }

    #[test]
    fn rotations_are_conformal(theta in -7.0f64..7.0, s in 0.01f64..100.0) {
        let d = dilatation_of_linear(&Linear2::rotation(theta).scale(s)).unwrap();
        prop_assert!(d.mu_abs() < 1e-12);
        prop_assert!((d.k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_distortion_is_submultiplicative(a in triangle(), b in triangle(), c in triangle()) {
        let f = affine_between(&a, &b).linear;
        let g = affine_between(&b, &c).linear;
        let kf = dilatation_of_linear(&f).unwrap().k;
        let kg = dilatation_of_linear(&g).unwrap().k;
        let kc = dilatation_of_linear(&g.compose(&f)).unwrap().k;
        prop_assert!(kc <= kf * kg * (1.0 + 1e-9));
    }
}
