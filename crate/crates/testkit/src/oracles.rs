use ganaug_core::dataio::RgbImage;

/// Direct cross-correlation. `x` is `[n,c,h,w]`, `w` is `[o,c,kh,kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], bias: Option<&[f64]>, stride: [usize; 2], pad: [usize; 2]) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, _, kh, kw] = ws;
    let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
    let ow = (wd + 2 * pad[1] - kw) / stride[1] + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride[0] + ky) as isize - pad[0] as isize;
                                let ix = (ox * stride[1] + kx) as isize - pad[1] as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Transposed convolution by scattering each input pixel through the
/// kernel. `x` is `[n,c,h,w]`, `w` is `[c,o,kh,kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], bias: Option<&[f64]>, stride: [usize; 2], pad: [usize; 2]) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [_, o, kh, kw] = ws;
    let full_h = (h - 1) * stride[0] + kh;
    let full_w = (wd - 1) * stride[1] + kw;
    let (oh, ow) = (full_h - 2 * pad[0], full_w - 2 * pad[1]);
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for ic in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x[((b * c + ic) * h + iy) * wd + ix];
                    for oc in 0..o {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride[0] + ky) as isize - pad[0] as isize;
                                let xx = (ix * stride[1] + kx) as isize - pad[1] as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out[((b * o + oc) * oh + y as usize) * ow + xx as usize] += xv * w[((ic * o + oc) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bs) = bias {
        for (i, v) in out.iter_mut().enumerate() {
            *v += bs[(i / (oh * ow)) % o];
        }
    }
    (out, [n, o, oh, ow])
}

/// Probability that a random positive outscores a random negative, ties ½,
/// by enumerating every pair.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn luma(img: &RgbImage, x: usize, y: usize) -> f64 {
    let p = img.get(x, y);
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// SSIM on luma with a full 2-D Gaussian window evaluated at every valid
/// position, using the two-pass mean/variance definition per window.
pub fn ssim(a: &RgbImage, b: &RgbImage, window: usize, sigma: f64) -> f64 {
    let c = (window as f64 - 1.0) / 2.0;
    let mut k = vec![0.0; window * window];
    for y in 0..window {
        for x in 0..window {
            k[y * window + x] = (-((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - window {
        for ox in 0..=w - window {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..window {
                for x in 0..window {
                    let g = k[y * window + x];
                    ma += g * luma(a, ox + x, oy + y);
                    mb += g * luma(b, ox + x, oy + y);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..window {
                for x in 0..window {
                    let g = k[y * window + x];
                    let da = luma(a, ox + x, oy + y) - ma;
                    let db = luma(b, ox + x, oy + y) - mb;
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Per-pixel bilinear resize written directly from the sampling definition.
pub fn resize(img: &RgbImage, width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let sx = ((x as f64 + 0.5) * img.width() as f64 / width as f64 - 0.5).max(0.0).min((img.width() - 1) as f64);
            let sy = ((y as f64 + 0.5) * img.height() as f64 / height as f64 - 0.5).max(0.0).min((img.height() - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..3 {
                let v = img.get(x0, y0)[c] as f64 * (1.0 - fx) * (1.0 - fy)
                    + img.get(x1, y0)[c] as f64 * fx * (1.0 - fy)
                    + img.get(x0, y1)[c] as f64 * (1.0 - fx) * fy
                    + img.get(x1, y1)[c] as f64 * fx * fy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Normalized per-channel histograms with `bins` bins over 0..=255.
pub fn histogram(images: &[RgbImage], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; 3 * bins];
    let mut total = 0.0;
    for img in images {
        for p in img.pixels().chunks(3) {
            for c in 0..3 {
                h[c * bins + p[c] as usize * bins / 256] += 1.0;
            }
            total += 1.0;
        }
    }
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Mean absolute difference between the histograms of two image sets.
pub fn histogram_distance(a: &[RgbImage], b: &[RgbImage], bins: usize) -> f64 {
    let (ha, hb) = (histogram(a, bins), histogram(b, bins));
    ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ha.len() as f64
}
