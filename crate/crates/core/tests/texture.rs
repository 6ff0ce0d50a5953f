use partbridge::imaging::GrayImage;
use partbridge::texture::{sample_contour_points, trace_contours, tps_warp_image, tps_warp_rgb, BorderKind, TextureError, TpsWarp};
use proptest::prelude::*;

fn mask(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> GrayImage {
    let mut m = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if on(x, y) {
                m.set(x, y, 1.0);
            }
        }
    }
    m
}

fn square(lo: usize, hi: usize) -> impl Fn(usize, usize) -> bool {
    move |x, y| (lo..hi).contains(&x) && (lo..hi).contains(&y)
}

#[test]
fn filled_square_has_one_outer_border() {
    let c = trace_contours(&mask(16, 16, square(3, 13)));
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].kind, BorderKind::Outer);
    assert_eq!(c[0].parent, None);
    assert_eq!(c[0].points.len(), 36);
    assert_eq!(c[0].points[0], (3, 3));
}

#[test]
fn hole_is_child_of_outer_border() {
    let outer = square(2, 14);
    let c = trace_contours(&mask(16, 16, |x, y| outer(x, y) && !square(6, 10)(x, y)));
    assert_eq!(c.len(), 2);
    assert_eq!(c[1].kind, BorderKind::Hole);
    assert_eq!(c[1].parent, Some(0));
    // Foreground pixels 4-adjacent to the 4x4 hole; the ring's corners touch
    // it only diagonally.
    assert_eq!(c[1].points.len(), 16);
    assert_eq!(c[1].points[0], (5, 6));
}

#[test]
fn separate_blobs_are_roots_in_scan_order() {
    let c = trace_contours(&mask(12, 6, |x, y| (1..3).contains(&y) && ((1..4).contains(&x) || (7..10).contains(&x))));
    assert_eq!(c.len(), 2);
    assert!(c.iter().all(|c| c.parent.is_none()));
    assert_eq!(c[0].points[0], (1, 1));
    assert_eq!(c[1].points[0], (7, 1));
}

#[test]
fn empty_mask_has_no_contours() {
    assert!(trace_contours(&GrayImage::zeros(8, 8)).is_empty());
}

fn is_border_pixel(m: &GrayImage, x: usize, y: usize, diagonal: bool) -> bool {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let fg = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize) > 0.5;
    let (x, y) = (x as isize, y as isize);
    (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dx, dy))).filter(|&(dx, dy)| (dx, dy) != (0, 0) && (diagonal || dx == 0 || dy == 0)).any(|(dx, dy)| !fg(x + dx, y + dy))
}

proptest! {
    #[test]
    fn contours_cover_exactly_the_border(bits in proptest::collection::vec(any::<bool>(), 32 * 32)) {
        let m = mask(32, 32, |x, y| bits[y * 32 + x]);
        let contours = trace_contours(&m);
        let mut on_contour = vec![false; 32 * 32];
        for c in &contours {
            let first = c.points[0];
            let last = *c.points.last().unwrap();
            prop_assert!(first.0.abs_diff(last.0) <= 1 && first.1.abs_diff(last.1) <= 1);
            for w in c.points.windows(2) {
                prop_assert_ne!(w[0], w[1]);
                prop_assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
            }
            for &(x, y) in &c.points {
                prop_assert!(m.get(x, y) > 0.5);
                prop_assert!(is_border_pixel(&m, x, y, true));
                on_contour[y * 32 + x] = true;
            }
            if let Some(p) = c.parent {
                prop_assert!(p < contours.len());
                prop_assert_ne!(contours[p].kind, c.kind);
            }
        }
        for y in 0..32 {
            for x in 0..32 {
                if m.get(x, y) > 0.5 && is_border_pixel(&m, x, y, false) {
                    prop_assert!(on_contour[y * 32 + x], "border pixel ({x},{y}) not traced");
                }
            }
        }
    }
}

#[test]
fn sampling_full_length_returns_every_pixel_once() {
    let c = &trace_contours(&mask(16, 16, square(3, 13)))[0];
    let s = sample_contour_points(c, c.points.len()).unwrap();
    assert_eq!(s, c.points);
    assert!(matches!(sample_contour_points(c, 0), Err(TextureError::InvalidInput(_))));
}

fn grid() -> Vec<[f64; 2]> {
    vec![[2.0, 2.0], [20.0, 3.0], [4.0, 21.0], [22.0, 20.0], [12.0, 11.0], [7.0, 15.0]]
}

#[test]
fn identity_and_translation_fits_are_affine() {
    let src = grid();
    let id = TpsWarp::fit(&src, &src, 0.0).unwrap();
    assert!(id.weights.iter().flatten().all(|w| w.abs() < 1e-9));
    let img = checkerboard(24, 4);
    assert_eq!(tps_warp_image(&img, &id, 0.5), img);
    for p in [[0.0, 0.0], [13.5, 7.25], [30.0, 1.0]] {
        let q = id.apply(p);
        assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
    }
    let shifted: Vec<_> = src.iter().map(|p| [p[0] + 3.0, p[1] - 2.0]).collect();
    let t = TpsWarp::fit(&src, &shifted, 0.0).unwrap();
    assert!(t.bending_energy().abs() < 1e-9);
    let q = t.apply([5.0, 5.0]);
    assert!((q[0] - 8.0).abs() < 1e-9 && (q[1] - 3.0).abs() < 1e-9);
}

#[test]
fn interpolates_control_points_without_regularisation() {
    let src = grid();
    let dst: Vec<_> = src.iter().enumerate().map(|(i, p)| [p[0] + (i as f64).sin() * 2.0, p[1] + (i as f64 * 0.7).cos()]).collect();
    let t = TpsWarp::fit(&src, &dst, 0.0).unwrap();
    for (s, d) in src.iter().zip(&dst) {
        let q = t.apply(*s);
        assert!((q[0] - d[0]).abs() < 1e-6 && (q[1] - d[1]).abs() < 1e-6);
    }
}

#[test]
fn regularisation_lowers_bending_energy() {
    let src = grid();
    let dst: Vec<_> = src.iter().enumerate().map(|(i, p)| [p[0] + (i % 2) as f64 * 3.0, p[1] - (i % 3) as f64]).collect();
    let energies: Vec<f64> = [0.0, 1.0, 10.0, 100.0].iter().map(|&l| TpsWarp::fit(&src, &dst, l).unwrap().bending_energy()).collect();
    for e in energies.windows(2) {
        assert!(e[1] <= e[0] + 1e-9, "{energies:?}");
    }
}

#[test]
fn degenerate_control_points_are_rejected() {
    let line = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
    assert!(matches!(TpsWarp::fit(&line, &line, 0.0), Err(TextureError::Singular(_))));
    let dup = vec![[0.0, 0.0], [0.0, 0.0], [2.0, 1.0], [3.0, 5.0]];
    assert!(matches!(TpsWarp::fit(&dup, &dup, 0.0), Err(TextureError::Singular(_))));
    assert!(matches!(TpsWarp::fit(&grid(), &grid()[..3], 0.0), Err(TextureError::InvalidInput(_))));
}

fn checkerboard(n: usize, cell: usize) -> GrayImage {
    mask(n, n, |x, y| ((x / cell) + (y / cell)) % 2 == 0)
}

#[test]
fn integer_translation_shifts_pixels_exactly() {
    let img = checkerboard(24, 4);
    let src = grid();
    let dst: Vec<_> = src.iter().map(|p| [p[0] + 2.0, p[1] + 1.0]).collect();
    let out = tps_warp_image(&img, &TpsWarp::fit(&src, &dst, 0.0).unwrap(), 0.5);
    for y in 0..24 {
        for x in 0..24 {
            let expect = if x + 2 < 24 && y + 1 < 24 { img.get(x + 2, y + 1) } else { 0.5 };
            assert_eq!(out.get(x, y), expect, "({x},{y})");
        }
    }
}

#[test]
fn warp_then_inverse_restores_checkerboard() {
    // 96x96 board of 16 px cells; bending warp peaking near 1.5 px.
    let img = checkerboard(96, 16);
    let src: Vec<[f64; 2]> = (0..16).map(|k| [12.0 + 24.0 * (k % 4) as f64, 12.0 + 24.0 * (k / 4) as f64]).collect();
    let dst: Vec<[f64; 2]> = src.iter().map(|p| [p[0] + 1.5 * (p[1] / 30.0).sin(), p[1] + 1.2 * (p[0] / 25.0).cos()]).collect();
    let forward = TpsWarp::fit(&src, &dst, 0.0).unwrap();
    let back = TpsWarp::fit(&dst, &src, 0.0).unwrap();
    let warped = tps_warp_image(&img, &forward, 0.0);
    let restored = tps_warp_image(&warped, &back, 0.0);
    let mut err = 0.0;
    let mut count = 0;
    for y in 8..88 {
        for x in 8..88 {
            err += (restored.get(x, y) - img.get(x, y)).abs() as f64;
            count += 1;
        }
    }
    let mean = err / count as f64;
    assert!(mean < 0.05, "mean abs error {mean}");
}

#[test]
fn rgb_translation_matches_gray_channels() {
    let rgb = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 10) as u8, (y * 10) as u8, 200]));
    let src = grid();
    let dst: Vec<_> = src.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
    let out = tps_warp_rgb(&rgb, &TpsWarp::fit(&src, &dst, 0.0).unwrap(), [0, 0, 0]);
    assert_eq!(out.get_pixel(3, 4).0, [40, 40, 200]);
    assert_eq!(out.get_pixel(15, 4).0, [0, 0, 0]);
}
