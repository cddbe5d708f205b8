//! Separable bilinear (triangle-filter) resampling.
//!
//! The kernel support is stretched by the scale factor when shrinking, so
//! downsampling averages every source pixel that falls under an output pixel
//! (antialiased) while upsampling reduces to plain two-tap interpolation with
//! half-pixel centers. Both directions use the same filter.

use super::Image;

struct AxisTaps {
    /// First source index for each output index.
    start: Vec<usize>,
    /// Normalized weights, `taps` per output index.
    weights: Vec<f64>,
    taps: usize,
}

fn triangle(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.0 - x
    } else {
        0.0
    }
}

fn axis_taps(in_size: usize, out_size: usize) -> AxisTaps {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    let taps = (support.ceil() as usize) * 2 + 1;
    let mut start = Vec::with_capacity(out_size);
    let mut weights = vec![0.0; out_size * taps];
    for o in 0..out_size {
        let center = (o as f64 + 0.5) * scale;
        let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
        let hi = ((center + support + 0.5).floor() as usize).min(in_size);
        let row = &mut weights[o * taps..(o + 1) * taps];
        let mut total = 0.0;
        for (k, src) in (lo..hi).enumerate().take(taps) {
            let w = triangle((src as f64 - center + 0.5) / filter_scale);
            row[k] = w;
            total += w;
        }
        if total > 0.0 {
            for w in row.iter_mut() {
                *w /= total;
            }
        }
        start.push(lo);
    }
    AxisTaps {
        start,
        weights,
        taps,
    }
}

/// Resizes `img` to exactly `out_h x out_w` with the bilinear filter.
///
/// Panics if either output dimension is zero.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    if (out_h, out_w) == img.dims() {
        return img.clone();
    }
    let (in_h, in_w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();

    // Horizontal pass: in_h x out_w.
    let tx = axis_taps(in_w, out_w);
    let mut tmp = vec![0.0; in_h * out_w * c];
    for y in 0..in_h {
        let row_in = &src[y * in_w * c..(y + 1) * in_w * c];
        let row_out = &mut tmp[y * out_w * c..(y + 1) * out_w * c];
        for x in 0..out_w {
            let s = tx.start[x];
            let ws = &tx.weights[x * tx.taps..(x + 1) * tx.taps];
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &w) in ws.iter().enumerate() {
                    if w != 0.0 {
                        acc += w * row_in[(s + k) * c + ch];
                    }
                }
                row_out[x * c + ch] = acc;
            }
        }
    }

    // Vertical pass: out_h x out_w.
    let ty = axis_taps(in_h, out_h);
    let stride = out_w * c;
    let mut out = vec![0.0; out_h * stride];
    for y in 0..out_h {
        let s = ty.start[y];
        let ws = &ty.weights[y * ty.taps..(y + 1) * ty.taps];
        let dst = &mut out[y * stride..(y + 1) * stride];
        for (k, &w) in ws.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src_row = &tmp[(s + k) * stride..(s + k + 1) * stride];
            for (d, v) in dst.iter_mut().zip(src_row) {
                *d += w * v;
            }
        }
    }
    Image::from_raw_clamped(out_h, out_w, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..h * w)
            .map(|i| ((i % w) as f64 + (i / w) as f64) / (h + w) as f64)
            .collect();
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        for (i, o) in [(137, 8), (8, 137), (180, 12), (5, 5), (3, 7), (256, 224)] {
            let t = axis_taps(i, o);
            for x in 0..o {
                let s: f64 = t.weights[x * t.taps..(x + 1) * t.taps].iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{i}->{o} at {x}: {s}");
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(37, 53, 3, 0.25).unwrap();
        for (h, w) in [(8, 11), (100, 150), (3, 2)] {
            let r = resize_bilinear(&img, h, w);
            assert_eq!(r.dims(), (h, w));
            assert!(r.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn downsample_by_two_is_antialiased() {
        let img = Image::new(1, 4, 1, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let r = resize_bilinear(&img, 1, 2);
        // Left edge clips the kernel: weights 3:3:1 over the first three sources.
        let expected0 = (0.0 * 3.0 + 1.0 * 3.0 + 0.5) / 7.0;
        assert!((r.data()[0] - expected0).abs() < 1e-12, "{:?}", r.data());
    }

    #[test]
    fn upsample_interpolates_between_neighbours() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&img, 1, 4);
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn identity_size_is_exact_copy() {
        let img = ramp(9, 13);
        assert_eq!(resize_bilinear(&img, 9, 13), img);
    }
}
