use std::fs;

use image::{Rgb, RgbImage};
use s4st_harness::dataset::{load_dataset, MANIFEST_HEADER};
use s4st_harness::error::HarnessError;

fn write_manifest(dir: &std::path::Path, rows: &[(&str, usize, usize)]) -> std::path::PathBuf {
    let mut text = MANIFEST_HEADER.join(",") + "\n";
    for (p, y, t) in rows {
        text += &format!("{p},{y},{t}\n");
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, text).unwrap();
    path
}

fn pixel(x: u32, y: u32, c: usize) -> u8 {
    let v = match c {
        0 => (x * 7 + y * 3) % 256,
        1 => (x * x + 5 * y) % 256,
        _ => (255 - (x + 2 * y) % 256) % 256,
    };
    v as u8
}

// Half-pixel-centred bilinear sample with edge clamping, written out
// directly on the 8-bit source.
fn oracle(src: &RgbImage, out: (usize, usize), oy: usize, ox: usize, c: usize) -> f64 {
    let (w, h) = src.dimensions();
    let sy = ((oy as f64 + 0.5) * h as f64 / out.0 as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let sx = ((ox as f64 + 0.5) * w as f64 / out.1 as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as u32, sx.floor() as u32);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let p = |x: u32, y: u32| src.get_pixel(x, y)[c] as f64 / 255.0;
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
}

#[test]
fn resize_299_to_224_matches_reference_at_corners() {
    let dir = tempfile::tempdir().unwrap();
    let src = RgbImage::from_fn(299, 299, |x, y| Rgb([pixel(x, y, 0), pixel(x, y, 1), pixel(x, y, 2)]));
    src.save(dir.path().join("big.png")).unwrap();
    let manifest = write_manifest(dir.path(), &[("big.png", 3, 7)]);
    let ds = load_dataset(&manifest, (224, 224), 10).unwrap();
    assert_eq!(ds.images.dim(), (1, 3, 224, 224));
    for &(y, x) in &[(0, 0), (0, 223), (223, 0), (223, 223)] {
        for c in 0..3 {
            let got = ds.images[[0, c, y, x]] as f64;
            let want = oracle(&src, (224, 224), y, x, c);
            assert!((got - want).abs() <= 1.0 / 255.0, "corner ({y},{x}) channel {c}: {got} vs {want}");
        }
    }
}

#[test]
fn toy_manifest_loads_as_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.png", "b.png"] {
        RgbImage::from_pixel(10, 12, Rgb([10, 200, 30])).save(dir.path().join(name)).unwrap();
    }
    let manifest = write_manifest(dir.path(), &[("a.png", 0, 1), ("b.png", 2, 0)]);
    let ds = load_dataset(&manifest, (8, 8), 3).unwrap();
    assert_eq!(ds.images.dim(), (2, 3, 8, 8));
    assert!(ds.images.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(ds.manifest.targets(), vec![1, 0]);
}

#[test]
fn target_equal_to_label_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::from_pixel(4, 4, Rgb([0, 0, 0])).save(dir.path().join("a.png")).unwrap();
    let manifest = write_manifest(dir.path(), &[("a.png", 0, 1), ("a.png", 2, 2)]);
    match load_dataset(&manifest, (4, 4), 3) {
        Err(HarnessError::Load { entry, .. }) => assert_eq!(entry, 1),
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn missing_image_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &[("nope.png", 0, 1)]);
    assert!(matches!(load_dataset(&manifest, (4, 4), 3), Err(HarnessError::Load { entry: 0, .. })));
}
