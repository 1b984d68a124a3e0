use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seaice_core::grid::{build_region, laea_forward, laea_inverse, RegionOverrides, SPHERE_RADIUS_M};

#[test]
fn laea_round_trip_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (clat, clon) = (rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0));
        // Stay within 60° of the center, well inside the projection image.
        let (lat, lon) = loop {
            let lat: f64 = rng.random_range(-89.5..89.5);
            let lon: f64 = rng.random_range(-180.0..180.0);
            let (p, p1) = (lat.to_radians(), f64::to_radians(clat));
            let cos_c = p1.sin() * p.sin() + p1.cos() * p.cos() * (lon - clon).to_radians().cos();
            if cos_c > 0.5 {
                break (lat, lon);
            }
        };
        let (x, y) = laea_forward(lat, lon, clat, clon, SPHERE_RADIUS_M).unwrap();
        let (lat2, lon2) = laea_inverse(x, y, clat, clon, SPHERE_RADIUS_M).unwrap();
        let dlon = ((lon2 - lon + 540.0) % 360.0 - 180.0).abs();
        worst = worst.max((lat2 - lat).abs()).max(dlon * lat.to_radians().cos());
    }
    assert!(worst < 1e-6, "worst round-trip error {worst}°");
}

#[test]
fn projection_center_maps_to_origin() {
    let (x, y) = laea_forward(73.0, 57.3, 73.0, 57.3, SPHERE_RADIUS_M).unwrap();
    assert_eq!((x, y), (0.0, 0.0));
    assert!(laea_forward(-73.0, 57.3 - 180.0, 73.0, 57.3, SPHERE_RADIUS_M).is_err());
    assert!(laea_inverse(3.0 * SPHERE_RADIUS_M, 0.0, 0.0, 0.0, SPHERE_RADIUS_M).is_err());
}

#[test]
fn named_regions_have_documented_geometry() {
    for (name, lat, lon) in [("barents", 73.0, 57.3), ("labrador", 61.0, -56.0), ("laptev", 76.0, 125.0)] {
        let g = build_region(name, RegionOverrides::default()).unwrap();
        assert_eq!((g.rows, g.cols), (360, 500));
        assert_eq!(g.step_m, 5000.0);
        assert_eq!((g.center_lat, g.center_lon), (lat, lon));
        assert_eq!(g.land_mask.len(), 180_000);
        assert!(g.cell_area_m2.iter().all(|&a| a == 25e6));
        // Cell centers are symmetric about the projection center.
        let (x0, y0) = g.cell_xy(0, 0);
        let (x1, y1) = g.cell_xy(359, 499);
        assert_eq!((x0 + x1, y0 + y1), (0.0, 0.0));
        let (clat, clon) = g.cell_latlon(0, 0).unwrap();
        let (x, y) = laea_forward(clat, clon, lat, lon, SPHERE_RADIUS_M).unwrap();
        assert!((x - x0).abs() < 1e-3 && (y - y0).abs() < 1e-3);
    }
    assert!(build_region("nowhere", RegionOverrides::default()).is_err());
}
