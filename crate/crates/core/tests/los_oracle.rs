//! Ray tracing against an exhaustive per-building clipping oracle.

use proptest::prelude::*;
use skyharvest::citygen::{generate_city, Building, CityParams, CityRealization};
use skyharvest::Point3;

/// Liang–Barsky clip of the open segment against one closed box.
fn hits(b: &Building, p: Point3, q: Point3) -> bool {
    let d = [q.x - p.x, q.y - p.y, q.z - p.z];
    let o = [p.x, p.y, p.z];
    let lo = [b.footprint_min.x, b.footprint_min.y, 0.0];
    let hi = [b.footprint_max.x, b.footprint_max.y, b.height];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let eps = 1e-9 / len.max(1e-300);
    let (mut t0, mut t1) = (eps, 1.0 - eps);
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return false;
            }
        } else {
            let (a, c) = ((lo[i] - o[i]) / d[i], (hi[i] - o[i]) / d[i]);
            t0 = t0.max(a.min(c));
            t1 = t1.min(a.max(c));
        }
    }
    t0 <= t1
}

fn oracle(city: &CityRealization, p: Point3, q: Point3) -> bool {
    !city.buildings().iter().any(|b| hits(b, p, q))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn traversal_matches_brute_force(seed in 0u64..1000, pts in prop::collection::vec((0.0..300.0f64, 0.0..300.0f64, 0.0..120.0f64, 0.0..300.0f64, 0.0..300.0f64, 0.0..120.0f64), 40)) {
        let city = generate_city(&CityParams::urban(300.0), seed).unwrap();
        for (ax, ay, az, bx, by, bz) in pts {
            let (p, q) = (Point3::new(ax, ay, az), Point3::new(bx, by, bz));
            prop_assert_eq!(city.los_visible(p, q), oracle(&city, p, q), "{:?} -> {:?}", p, q);
            prop_assert_eq!(city.los_visible(p, q), city.los_visible(q, p));
        }
    }
}

#[test]
fn oracle_sees_both_outcomes() {
    let city = generate_city(&CityParams::urban(300.0), 5).unwrap();
    let mut blocked = 0;
    let total = 2000;
    for i in 0..total {
        let f = i as f64;
        let p = Point3::new((f * 37.3) % 300.0, (f * 91.7) % 300.0, 0.0);
        let q = Point3::new((f * 53.1) % 300.0, (f * 17.9) % 300.0, (f * 7.7) % 100.0);
        let seen = oracle(&city, p, q);
        assert_eq!(city.los_visible(p, q), seen);
        blocked += usize::from(!seen);
    }
    assert!(blocked > total / 20 && blocked < total * 19 / 20, "{blocked} of {total} blocked");
}
