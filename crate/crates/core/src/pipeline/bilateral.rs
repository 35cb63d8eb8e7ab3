//! Edge-preserving bilateral filter over linear radiance.
//!
//! Each channel is filtered independently with the weight
//! `exp(-d²/2σs²) · exp(-Δ²/2σr²)`, where `d` is the pixel offset and `Δ` the
//! difference from the center sample. The window is clipped at the image
//! border. Rows are filtered in parallel from a read-only planar copy of the
//! source.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RadianceImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralParams {
    /// Spatial standard deviation in pixels.
    pub spatial_sigma: f32,
    /// Range standard deviation in linear radiance units.
    pub range_sigma: f32,
    pub window_radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            spatial_sigma: 2.0,
            range_sigma: 0.05,
            window_radius: 5,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.spatial_sigma > 0.0 && self.spatial_sigma.is_finite()) {
            return Err(Error::invalid(format!("spatial_sigma must be > 0, got {}", self.spatial_sigma)));
        }
        if !(self.range_sigma > 0.0 && self.range_sigma.is_finite()) {
            return Err(Error::invalid(format!("range_sigma must be > 0, got {}", self.range_sigma)));
        }
        if self.window_radius < 1 {
            return Err(Error::invalid("window_radius must be >= 1"));
        }
        Ok(())
    }
}

/// `exp(-u)` for `u >= 0`, accurate to a few f32 ulps.
///
/// Written as straight-line arithmetic so the row loops vectorize, and so the
/// result does not depend on the platform libm.
#[inline(always)]
fn exp_neg(u: f32) -> f32 {
    // exp(-87) is still a normal f32, so n never leaves the exponent range
    let u = u.min(87.0);
    let n = (-u * std::f32::consts::LOG2_E + 0.5).floor();
    // r = -u - n·ln2 with ln2 split so the first product is exact
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    let r = (-u - n * LN2_HI) - n * LN2_LO;
    // exp(r) for |r| <= ln2/2: degree-7 Taylor series
    const C2: f32 = 1.0 / 2.0;
    const C3: f32 = 1.0 / 6.0;
    const C4: f32 = 1.0 / 24.0;
    const C5: f32 = 1.0 / 120.0;
    const C6: f32 = 1.0 / 720.0;
    const C7: f32 = 1.0 / 5040.0;
    let p = 1.0 + r * (1.0 + r * (C2 + r * (C3 + r * (C4 + r * (C5 + r * (C6 + r * C7))))));
    // 2^n: adding 2^23 + 127 leaves n + 127 in the low mantissa bits
    let scale = f32::from_bits((n + 8_388_735.0).to_bits() << 23);
    p * scale
}

const RANGE_CUTOFF: f32 = 60.0;

struct Kernel {
    radius: usize,
    /// Spatial weights, `(2r+1)²`, row-major over (dy, dx).
    spatial: Vec<f32>,
    /// 1 / (2 σr²)
    range_coeff: f32,
}

impl Kernel {
    fn new(p: &BilateralParams) -> Self {
        let r = p.window_radius as isize;
        let inv = 1.0 / (2.0 * (p.spatial_sigma as f64).powi(2));
        let mut spatial = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                spatial.push((-((dx * dx + dy * dy) as f64) * inv).exp() as f32);
            }
        }
        Self {
            radius: p.window_radius,
            spatial,
            range_coeff: (1.0 / (2.0 * (p.range_sigma as f64).powi(2))) as f32,
        }
    }
}

/// Filters one output row of one plane.
///
/// Accumulates `Σ w·(v - center)` rather than `Σ w·v` so constant regions
/// come back bit-exact, and clamps to the window's value range so the filter
/// never extends the input range.
#[inline(always)]
fn filter_row_impl(plane: &[f32], w: usize, h: usize, y: usize, k: &Kernel, out: &mut [f32], scratch: &mut RowScratch) {
    let r = k.radius;
    let center = &plane[y * w..(y + 1) * w];
    let RowScratch { acc, wsum, lo, hi } = scratch;
    acc.fill(0.0);
    wsum.fill(0.0);
    lo.copy_from_slice(center);
    hi.copy_from_slice(center);
    let side = 2 * r + 1;
    let y0 = y.saturating_sub(r);
    let y1 = (y + r).min(h - 1);
    for ny in y0..=y1 {
        let row = &plane[ny * w..(ny + 1) * w];
        let ky = ny + r - y;
        for kx in 0..side {
            let sw = k.spatial[ky * side + kx];
            // output x reads row[x + kx - r]; keep both in range
            let x_start = r.saturating_sub(kx);
            let x_end = (w + r).saturating_sub(kx).min(w);
            if x_start >= x_end {
                continue;
            }
            let n = x_end - x_start;
            // equal lengths let the compiler drop bounds checks and vectorize
            let src = &row[x_start + kx - r..][..n];
            let c = &center[x_start..][..n];
            let acc = &mut acc[x_start..][..n];
            let wsum = &mut wsum[x_start..][..n];
            let lo = &mut lo[x_start..][..n];
            let hi = &mut hi[x_start..][..n];
            for i in 0..n {
                let v = src[i];
                let d = v - c[i];
                let u = d * d * k.range_coeff;
                // weights under e^-60 vanish next to the center weight of 1;
                // dropping them keeps the sums out of slow subnormals
                let e = exp_neg(u.min(RANGE_CUTOFF));
                let wt = if u < RANGE_CUTOFF { sw * e } else { 0.0 };
                acc[i] += wt * d;
                wsum[i] += wt;
                // compare-select rather than f32::min/max, which add NaN handling
                lo[i] = if v < lo[i] { v } else { lo[i] };
                hi[i] = if v > hi[i] { v } else { hi[i] };
            }
        }
    }
    for x in 0..w {
        // the center tap has weight 1, so wsum >= 1
        let v = center[x] + acc[x] / wsum[x];
        out[x] = v.clamp(lo[x], hi[x]).max(0.0);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn filter_row_avx2(plane: &[f32], w: usize, h: usize, y: usize, k: &Kernel, out: &mut [f32], scratch: &mut RowScratch) {
    filter_row_impl(plane, w, h, y, k, out, scratch)
}

fn filter_row(plane: &[f32], w: usize, h: usize, y: usize, k: &Kernel, out: &mut [f32], scratch: &mut RowScratch) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { filter_row_avx2(plane, w, h, y, k, out, scratch) };
        }
    }
    filter_row_impl(plane, w, h, y, k, out, scratch)
}

struct RowScratch {
    acc: Vec<f32>,
    wsum: Vec<f32>,
    lo: Vec<f32>,
    hi: Vec<f32>,
}

impl RowScratch {
    fn new(w: usize) -> Self {
        Self {
            acc: vec![0.0; w],
            wsum: vec![0.0; w],
            lo: vec![0.0; w],
            hi: vec![0.0; w],
        }
    }
}

pub fn bilateral_denoise(img: &RadianceImage, params: &BilateralParams) -> Result<RadianceImage> {
    params.validate()?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let kernel = Kernel::new(params);

    // planar copy so each channel is a contiguous read-only buffer
    let planes: Vec<Vec<f32>> = (0..ch)
        .map(|c| img.data().iter().skip(c).step_by(ch).copied().collect())
        .collect();

    let mut out = vec![0f32; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each_init(
        || (RowScratch::new(w), vec![0f32; w]),
        |(scratch, row_out), (y, dst)| {
            for (c, plane) in planes.iter().enumerate() {
                filter_row(plane, w, h, y, &kernel, row_out, scratch);
                for x in 0..w {
                    dst[x * ch + c] = row_out[x];
                }
            }
        },
    );
    Ok(RadianceImage::from_parts_unchecked(w, h, ch, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn fast_exp_matches_std() {
        let mut u = 0.0f32;
        while u < 80.0 {
            let exact = (-(u as f64)).exp();
            let got = exp_neg(u) as f64;
            assert!((got - exact).abs() <= 1e-6 * exact + 1e-37, "u={u}: {got} vs {exact}");
            u += 0.0137;
        }
        assert_eq!(exp_neg(0.0), 1.0);
        assert!(exp_neg(1e6) < 1e-37);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = RadianceImage::filled(13, 9, 3, 0.37).unwrap();
        let out = bilateral_denoise(&img, &BilateralParams::default()).unwrap();
        assert_eq!(out, img);
    }

    fn variance(v: &[f32]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn flat_field_noise_variance_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0f32, 0.01).unwrap();
        let img = RadianceImage::from_fn(48, 48, 1, |_, _, _| 0.5 + noise.sample(&mut rng)).unwrap();
        let out = bilateral_denoise(&img, &BilateralParams::default()).unwrap();
        let (vi, vo) = (variance(img.data()), variance(out.data()));
        assert!(vo < vi, "variance {vo} !< {vi}");
        assert!(vo < 0.2 * vi);
    }

    fn argmax_gradient(row: &[f32]) -> usize {
        (0..row.len() - 1)
            .max_by(|&a, &b| {
                let ga = (row[a + 1] - row[a]).abs();
                let gb = (row[b + 1] - row[b]).abs();
                ga.partial_cmp(&gb).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn step_edge_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0f32, 0.005).unwrap();
        let img = RadianceImage::from_fn(40, 8, 1, |x, _, _| {
            (if x < 17 { 0.1 } else { 0.9 }) + noise.sample(&mut rng)
        })
        .unwrap();
        let params = BilateralParams {
            range_sigma: 0.02,
            ..Default::default()
        };
        let out = bilateral_denoise(&img, &params).unwrap();
        for y in 0..8 {
            let before = &img.data()[y * 40..(y + 1) * 40];
            let after = &out.data()[y * 40..(y + 1) * 40];
            assert_eq!(argmax_gradient(before), 16);
            assert_eq!(argmax_gradient(after), 16);
        }
    }

    #[test]
    fn matches_direct_evaluation() {
        // independent straight-from-the-definition evaluation in f64
        let img = RadianceImage::from_fn(9, 7, 3, |x, y, c| ((x * 7 + y * 3 + c * 5) % 11) as f32 / 10.0).unwrap();
        let p = BilateralParams {
            spatial_sigma: 1.5,
            range_sigma: 0.2,
            window_radius: 2,
        };
        let out = bilateral_denoise(&img, &p).unwrap();
        let r = p.window_radius as isize;
        for y in 0..7isize {
            for x in 0..9isize {
                for c in 0..3 {
                    let center = img.pixel(x as usize, y as usize)[c] as f64;
                    let (mut num, mut den) = (0.0f64, 0.0f64);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || ny < 0 || nx >= 9 || ny >= 7 {
                                continue;
                            }
                            let v = img.pixel(nx as usize, ny as usize)[c] as f64;
                            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp()
                                * (-(v - center).powi(2) / (2.0 * 0.2 * 0.2)).exp();
                            num += wgt * v;
                            den += wgt;
                        }
                    }
                    let got = out.pixel(x as usize, y as usize)[c] as f64;
                    assert!((got - num / den).abs() < 1e-5, "({x},{y},{c}) {got} vs {}", num / den);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let img = RadianceImage::filled(4, 4, 1, 0.1).unwrap();
        for p in [
            BilateralParams { spatial_sigma: 0.0, ..Default::default() },
            BilateralParams { range_sigma: -1.0, ..Default::default() },
            BilateralParams { window_radius: 0, ..Default::default() },
        ] {
            assert!(bilateral_denoise(&img, &p).is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn never_widens_value_range(data in prop::collection::vec(0.0f32..2.0, 10 * 6 * 3)) {
            let img = RadianceImage::new(10, 6, 3, data).unwrap();
            let out = bilateral_denoise(&img, &BilateralParams { range_sigma: 0.3, window_radius: 2, ..Default::default() }).unwrap();
            for c in 0..3 {
                let chan = |im: &RadianceImage| im.data().iter().skip(c).step_by(3).copied().collect::<Vec<_>>();
                let (a, b) = (chan(&img), chan(&out));
                let (amin, amax) = (a.iter().copied().fold(f32::MAX, f32::min), a.iter().copied().fold(0.0, f32::max));
                prop_assert!(b.iter().all(|&v| v >= amin && v <= amax));
            }
        }
    }
}
