//! Image fidelity, normal accuracy and point-cloud distance.

mod kdtree;

pub use kdtree::KdTree;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::FloatImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Tolerance on `‖n‖ − 1` accepted by [`normal_mae`].
pub const UNIT_TOL: f64 = 1e-6;

fn check_pair(a: &FloatImage, b: &FloatImage, mask: Option<&[bool]>) -> Result<Vec<bool>> {
    if !a.same_shape(b) {
        return Err(Error::Domain(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let n = a.width * a.height;
    let mask = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::Domain(format!("mask has {} entries for {n} pixels", m.len())));
        }
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    if a.channels == 0 || !mask.iter().any(|m| *m) {
        return Err(Error::Domain("mask selects no pixels".into()));
    }
    Ok(mask)
}

/// Mean squared error over the masked pixels and all channels.
pub fn mse(a: &FloatImage, b: &FloatImage, mask: Option<&[bool]>) -> Result<f64> {
    let mask = check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (x, y) in a.pixel(k).iter().zip(b.pixel(k)) {
            sum += (x - y) * (x - y);
        }
        count += a.channels;
    }
    Ok(sum / count as f64)
}

/// Peak-1 PSNR in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &FloatImage, b: &FloatImage, mask: Option<&[bool]>) -> Result<f64> {
    let e = mse(a, b, mask)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    })
}

/// SSIM of one Gaussian window centred on pixel `k`, averaged over channels.
/// The window is restricted to masked pixels inside the image and its
/// weights renormalized.
fn local_ssim(a: &FloatImage, b: &FloatImage, mask: &[bool], g: &[f64; SSIM_WINDOW], k: usize) -> f64 {
    let (w, h, ch) = (a.width, a.height, a.channels);
    let r = SSIM_WINDOW / 2;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (cx, cy) = (k % w, k / w);
    let mut total = 0.0;
    for c in 0..ch {
        let (mut sw, mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for y in cy.saturating_sub(r)..(cy + r + 1).min(h) {
            for x in cx.saturating_sub(r)..(cx + r + 1).min(w) {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                let wt = g[x + r - cx] * g[y + r - cy];
                let (va, vb) = (a.data[i * ch + c], b.data[i * ch + c]);
                sw += wt;
                ma += wt * va;
                mb += wt * vb;
                saa += wt * va * va;
                sbb += wt * vb * vb;
                sab += wt * va * vb;
            }
        }
        let (ma, mb) = (ma / sw, mb / sw);
        let va = (saa / sw - ma * ma).max(0.0);
        let vb = (sbb / sw - mb * mb).max(0.0);
        let cov = sab / sw - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / ch as f64
}

/// Mean local SSIM over masked pixels and channels.
pub fn ssim(a: &FloatImage, b: &FloatImage, mask: Option<&[bool]>) -> Result<f64> {
    let mask = check_pair(a, b, mask)?;
    let g = gaussian_window();
    let centres: Vec<usize> = (0..a.width * a.height).filter(|k| mask[*k]).collect();
    let local: Vec<f64> = centres.par_iter().map(|&k| local_ssim(a, b, &mask, &g, k)).collect();
    Ok(local.iter().sum::<f64>() / local.len() as f64)
}

/// Mean angle between paired unit normals, in degrees.
pub fn normal_mae(a: &[Vec3], b: &[Vec3], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("{} normals vs {}", a.len(), b.len())));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(Error::Domain(format!(
                "mask has {} entries for {} normals",
                m.len(),
                a.len()
            )));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (na, nb)) in a.iter().zip(b).enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        for n in [na, nb] {
            if !((n.norm() - 1.0).abs() <= UNIT_TOL) {
                return Err(Error::Domain(format!("normal {k} has length {}", n.norm())));
            }
        }
        // Equal to arccos(a·b) for unit vectors, but exact for identical ones.
        sum += na.cross(nb).norm().atan2(na.dot(nb)).to_degrees();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("mask selects no normals".into()));
    }
    Ok(sum / count as f64)
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = KdTree::new(to);
    let d: Vec<f64> = from.par_iter().map(|p| tree.nearest_squared(p)).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Bidirectional chamfer distance: mean squared nearest-neighbour distance
/// from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("chamfer needs two non-empty point sets".into()));
    }
    if a.iter().chain(b).any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::Domain("non-finite point coordinate".into()));
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Centre and scale mapping the bounding sphere of `reference` (centred on its
/// bounding box) onto the unit sphere.
pub fn unit_sphere_transform(reference: &[Vec3]) -> Result<(Vec3, f64)> {
    let first = reference
        .first()
        .ok_or_else(|| Error::Domain("empty reference point set".into()))?;
    let (lo, hi) = reference
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let centre = (lo + hi) * 0.5;
    let radius = reference.iter().map(|p| (p - centre).norm()).fold(0.0, f64::max);
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain("reference point set has no extent".into()));
    }
    Ok((centre, 1.0 / radius))
}

/// Chamfer distance after mapping both sets with the unit-sphere transform of
/// `reference`.
pub fn chamfer_normalized(points: &[Vec3], reference: &[Vec3]) -> Result<f64> {
    let (centre, scale) = unit_sphere_transform(reference)?;
    let map = |s: &[Vec3]| s.iter().map(|p| (p - centre) * scale).collect::<Vec<_>>();
    chamfer(&map(points), &map(reference))
}

/// Parses one `x y z` triple per line; blank lines and `#` comments are skipped.
pub fn parse_points(text: &str) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::schema(format!("line {}", n + 1), e.to_string()))?;
        if v.len() != 3 {
            return Err(Error::schema(
                format!("line {}", n + 1),
                format!("expected 3 coordinates, found {}", v.len()),
            ));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text)
}

pub fn format_points(points: &[Vec3]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn write_points(path: &Path, points: &[Vec3]) -> Result<()> {
    std::fs::write(path, format_points(points)).map_err(|e| Error::io(path, e))
}

/// Metrics of one evaluation; absent entries were not requested.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub normal_mae: Option<f64>,
    pub chamfer: Option<f64>,
}

fn number(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        x.to_string()
    }
}

impl MetricReport {
    /// `key: value` lines; infinite PSNR is written as `inf`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("psnr_db", self.psnr),
            ("ssim", self.ssim),
            ("normal_mae_deg", self.normal_mae),
            ("chamfer", self.chamfer),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k}: {}", number(v));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(w: usize, h: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> FloatImage {
        let mut img = FloatImage::zeros(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.data[(y * w + x) * 3 + c] = f(x, y, c);
                }
            }
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = image(8, 6, |x, y, c| ((x + 2 * y + c) % 5) as f64 / 4.0);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        let shifted = FloatImage {
            data: a.data.iter().map(|v| v + 0.1).collect(),
            ..a.clone()
        };
        assert!((psnr(&a, &shifted, None).unwrap() - 20.0).abs() < 1e-9);
        let zero = image(8, 6, |_, _, _| 0.0);
        let one = image(8, 6, |_, _, _| 1.0);
        assert_eq!(psnr(&zero, &one, None).unwrap(), 0.0);
        assert!(psnr(&a, &a, Some(&[false; 48])).is_err());
        assert!(psnr(&a, &image(6, 8, |_, _, _| 0.0), None).is_err());
    }

    #[test]
    fn psnr_ignores_unmasked_pixels() {
        let a = image(4, 4, |_, _, _| 0.5);
        let mut b = a.clone();
        b.data[0] = 0.0;
        let mut mask = vec![true; 16];
        mask[0] = false;
        assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = image(16, 16, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = a.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.001, 0.01, 0.05, 0.1, 0.3] {
            let b = FloatImage {
                data: a.data.iter().zip(&noise).map(|(v, n)| v + amp * n).collect(),
                ..a.clone()
            };
            let p = psnr(&a, &b, None).unwrap();
            assert!(p < last);
            assert_eq!(p, psnr(&b, &a, None).unwrap());
            last = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let a = image(12, 10, |x, y, c| ((x * 5 + y * 3 + c) % 7) as f64 / 6.0);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
        let flat = image(12, 10, |_, _, _| 0.3);
        assert!((ssim(&flat, &flat, None).unwrap() - 1.0).abs() < 1e-12);

        let checker = image(12, 10, |x, y, _| ((x + y) % 2) as f64);
        let negative = FloatImage {
            data: checker.data.iter().map(|v| 1.0 - v).collect(),
            ..checker.clone()
        };
        assert!(ssim(&checker, &negative, None).unwrap() < 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = image(20, 14, |_, _, _| rng.gen());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = image(20, 14, |_, _, _| rng.gen());
        let mask: Vec<bool> = (0..280).map(|k| k % 3 != 0).collect();
        let ab = ssim(&a, &b, Some(&mask)).unwrap();
        let ba = ssim(&b, &a, Some(&mask)).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_window_oracle() {
        // At the centre of an 11x11 image the window covers every pixel.
        let a = image(11, 11, |x, y, c| ((x * 3 + y + c) % 4) as f64 / 3.0);
        let b = image(11, 11, |x, y, c| ((x + y * 2 + c) % 5) as f64 / 4.0);
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let mut expect = 0.0;
        for c in 0..3 {
            let (mut sw, mut s) = (0.0, [0.0; 5]);
            for y in 0..11 {
                for x in 0..11 {
                    let wt = g[x] * g[y];
                    let (va, vb) = (a.data[(y * 11 + x) * 3 + c], b.data[(y * 11 + x) * 3 + c]);
                    sw += wt;
                    s[0] += wt * va;
                    s[1] += wt * vb;
                    s[2] += wt * va * va;
                    s[3] += wt * vb * vb;
                    s[4] += wt * va * vb;
                }
            }
            let [ma, mb, saa, sbb, sab] = s.map(|v| v / sw);
            let (c1, c2) = (1e-4, 9e-4);
            expect += (2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2)
                / ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2))
                / 3.0;
        }
        let got = local_ssim(&a, &b, &[true; 121], &gaussian_window(), 60);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn normal_mae_examples() {
        let a = vec![Vec3::z(); 4];
        assert_eq!(normal_mae(&a, &a, None).unwrap(), 0.0);
        let b = vec![Vec3::x(); 4];
        assert!((normal_mae(&a, &b, None).unwrap() - 90.0).abs() < 1e-12);
        let t = 10f64.to_radians();
        let tilted = Vec3::new(t.sin(), 0.0, t.cos());
        let half = vec![Vec3::z(), Vec3::z(), tilted, tilted];
        assert!((normal_mae(&a, &half, None).unwrap() - 5.0).abs() < 1e-12);
        assert!(normal_mae(&a, &[Vec3::z() * 1.01; 4], None).is_err());
        let rough = vec![Vec3::new(0.3, 0.4, 0.8660254).map(|x| x as f32 as f64); 4];
        assert_eq!(normal_mae(&rough, &rough, None).unwrap(), 0.0);
        assert!(normal_mae(&a, &b, Some(&[false; 4])).is_err());
        let mask = [true, true, false, false];
        assert_eq!(normal_mae(&a, &half, Some(&mask)).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::x()];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert!(chamfer(&a, &[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        assert_eq!(chamfer(&cloud, &cloud).unwrap(), 0.0);
        let mut shuffled = cloud.clone();
        shuffled.reverse();
        shuffled.swap(3, 100);
        assert_eq!(chamfer(&cloud, &shuffled).unwrap(), 0.0);
        let other: Vec<Vec3> = (0..120).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        assert_eq!(chamfer(&cloud, &other).unwrap(), chamfer(&other, &cloud).unwrap());
    }

    #[test]
    fn chamfer_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<Vec3> = (0..90).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let b: Vec<Vec3> = (0..70)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 2.0)
            .collect();
        let one_way = |p: &[Vec3], q: &[Vec3]| {
            p.iter()
                .map(|x| q.iter().map(|y| (x - y).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / p.len() as f64
        };
        let expect = one_way(&a, &b) + one_way(&b, &a);
        assert!((chamfer(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let a: Vec<Vec3> = (0..20).map(|k| Vec3::new(k as f64, (k * k % 7) as f64, 1.0)).collect();
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.3, 0.0, 0.1)).collect();
        let base = chamfer_normalized(&a, &b).unwrap();
        let scaled = |s: &[Vec3]| s.iter().map(|p| p * 5.0 + Vec3::new(1.0, 2.0, 3.0)).collect::<Vec<_>>();
        let moved = chamfer_normalized(&scaled(&a), &scaled(&b)).unwrap();
        assert!((base - moved).abs() < 1e-12 * base.max(1.0));
        assert!(unit_sphere_transform(&[Vec3::x(); 3]).is_err());
    }

    #[test]
    fn point_text_round_trip() {
        let pts = vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(1e-8, 0.0, -0.0)];
        assert_eq!(parse_points(&format_points(&pts)).unwrap(), pts);
        assert!(parse_points("# header\n\n1 2 3\n").unwrap().len() == 1);
        assert!(matches!(parse_points("1 2\n"), Err(Error::Schema { .. })));
        assert!(parse_points("1 2 x\n").is_err());
    }

    #[test]
    fn report_text() {
        let r = MetricReport {
            psnr: Some(f64::INFINITY),
            ssim: Some(1.0),
            normal_mae: None,
            chamfer: Some(0.0),
        };
        assert_eq!(r.to_text(), "psnr_db: inf\nssim: 1\nchamfer: 0\n");
    }

    fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-5.0f64..5.0).prop_map(Vec3::from), 1..60)
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric_and_nonnegative(a in cloud(), b in cloud()) {
            let ab = chamfer(&a, &b).unwrap();
            let ba = chamfer(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn psnr_identity_is_infinite(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = image(7, 5, |_, _, _| rng.gen());
            prop_assert_eq!(psnr(&img, &img, None).unwrap(), f64::INFINITY);
            prop_assert!((ssim(&img, &img, None).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
