use super::Image;

/// Bilinear resampling with half-pixel centres: destination pixel `x` samples
/// source coordinate `(x + 0.5)·(in/out) − 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be non-empty");
    if (out_h, out_w) == (img.height, img.width) {
        return img.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, img.height);
    let xs = taps(out_w, img.width);
    let c = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = lerp(img.get(y0, x0, ch), img.get(y0, x1, ch), fx);
                let bottom = lerp(img.get(y1, x0, ch), img.get(y1, x1, ch), fx);
                data.push(lerp(top, bottom, fy));
            }
        }
    }
    Image::new(out_h, out_w, c, data)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = Image::new(2, 3, 1, vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.5]);
        assert_eq!(resize_bilinear(&img, 2, 3), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(5, 7, 3, 0.37);
        for (h, w) in [(1, 1), (3, 11), (64, 64), (2, 5)] {
            let r = resize_bilinear(&img, h, w);
            assert!(r.data.iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn two_by_two_upsample_by_hand() {
        // Source coordinates for 2 → 4 with half-pixel centres:
        // (x + 0.5)/2 − 0.5 = −0.25, 0.25, 0.75, 1.25 → clamped 0, 0.25, 0.75, 1.
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let r = resize_bilinear(&img, 4, 4);
        let f = [0.0f32, 0.25, 0.75, 1.0];
        for (i, &fy) in f.iter().enumerate() {
            for (j, &fx) in f.iter().enumerate() {
                let expected = 2.0 * fy + fx;
                assert!((r.get(i, j, 0) - expected).abs() < 1e-6, "({i},{j})");
            }
        }
    }
}
