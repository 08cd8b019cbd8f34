//! Image losses and quality metrics, each differentiable with respect to its
//! first argument. Values are means over the participating elements so the
//! weights stay comparable across resolutions.

use crate::error::{Result, SplatError};
use crate::image::Image;

/// Loss mix weights: `lambda` blends L1 against D-SSIM for input views,
/// `lambda_perc` scales the perceptual term inside the guidance loss, and
/// `lambda_gen1`/`lambda_gen2` weight the generated-view L1/perceptual terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_perc: f64,
    pub lambda_gen1: f64,
    pub lambda_gen2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.2, lambda_perc: 1e-4, lambda_gen1: 0.1, lambda_gen2: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.lambda > 1.0 {
            return Err(SplatError::invalid_input("lambda must lie in [0,1]"));
        }
        if self.lambda_perc < 0.0 || self.lambda_gen1 < 0.0 || self.lambda_gen2 < 0.0 {
            return Err(SplatError::invalid_input("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean absolute difference with an optional selection mask (mask = 1 keeps a
/// pixel). Returns the value and its gradient with respect to `a`. An
/// all-zero mask yields 0 with a zero gradient.
pub fn l1(a: &Image, b: &Image, mask: Option<&Image>) -> Result<(f64, Image)> {
    a.require_same_shape(b, "l1")?;
    let mut grad = Image::zeros(a.width(), a.height(), a.channels());
    match mask {
        None => {
            let count = a.len() as f64;
            let mut sum = 0.0;
            for i in 0..a.len() {
                let d = a.data()[i] - b.data()[i];
                sum += d.abs();
                grad.data_mut()[i] = sign(d) / count;
            }
            Ok((sum / count, grad))
        }
        Some(m) => {
            if m.width() != a.width() || m.height() != a.height() {
                return Err(SplatError::invalid_input("l1: mask spatial shape mismatch"));
            }
            let mut sum = 0.0;
            let mut count = 0.0;
            for y in 0..a.height() {
                for x in 0..a.width() {
                    let mv = m.get(x, y, 0);
                    if mv == 0.0 {
                        continue;
                    }
                    for c in 0..a.channels() {
                        let d = a.get(x, y, c) - b.get(x, y, c);
                        sum += mv * d.abs();
                        count += mv;
                        grad.set(x, y, c, mv * sign(d));
                    }
                }
            }
            if count == 0.0 {
                return Ok((0.0, Image::zeros(a.width(), a.height(), a.channels())));
            }
            let g = grad.map(|v| v / count);
            Ok((sum / count, g))
        }
    }
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid convolution of one channel plane.
fn conv_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let kw = k.len();
    let ow = w - kw + 1;
    let oh = h - kw + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Adjoint of [`conv_valid`]: scatters a field over the valid grid back onto
/// the source plane.
fn conv_valid_adjoint(field: &[f64], ow: usize, oh: usize, w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let kw = k.len();
    // Vertical adjoint.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let f = field[y * ow + x];
            if f == 0.0 {
                continue;
            }
            for (i, &kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * f;
            }
        }
    }
    // Horizontal adjoint.
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let f = tmp[y * ow + x];
            if f == 0.0 {
                continue;
            }
            for (i, &kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * f;
            }
        }
    }
    let _ = kw;
    out
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.width() * img.height()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            out[y * img.width() + x] = img.get(x, y, c);
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), averaged
/// over valid window positions and channels. Returns the SSIM value and its
/// gradient with respect to `a`. Images must be at least as large as the
/// window.
pub fn ssim(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.require_same_shape(b, "ssim")?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(SplatError::invalid_input(format!(
            "ssim requires images at least {SSIM_WINDOW} pixels on each side"
        )));
    }
    let k = ssim_kernel();
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut grad = Image::zeros(w, h, ch);
    let mut total = 0.0;
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let weight = 1.0 / (ow as f64 * oh as f64 * ch as f64);
    for c in 0..ch {
        let pa = channel_plane(a, c);
        let pb = channel_plane(b, c);
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
        let (mu_a, ow2, oh2) = conv_valid(&pa, w, h, &k);
        let (mu_b, _, _) = conv_valid(&pb, w, h, &k);
        let (mu_aa, _, _) = conv_valid(&paa, w, h, &k);
        let (mu_bb, _, _) = conv_valid(&pbb, w, h, &k);
        let (mu_ab, _, _) = conv_valid(&pab, w, h, &k);
        debug_assert_eq!((ow2, oh2), (ow, oh));

        let mut f_mu_a = vec![0.0; ow * oh];
        let mut f_mu_aa = vec![0.0; ow * oh];
        let mut f_mu_ab = vec![0.0; ow * oh];
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = mu_aa[i] - ma * ma;
            let vb = mu_bb[i] - mb * mb;
            let vab = mu_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * vab + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = va + vb + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s * weight;
            let ds_da1 = a2 / (b1 * b2);
            let ds_da2 = a1 / (b1 * b2);
            let ds_db1 = -s / b1;
            let ds_db2 = -s / b2;
            // Partials with respect to the convolved statistics.
            f_mu_a[i] = weight
                * (2.0 * mb * ds_da1 + 2.0 * ma * ds_db1 - 2.0 * mb * ds_da2
                    - 2.0 * ma * ds_db2);
            f_mu_aa[i] = weight * ds_db2;
            f_mu_ab[i] = weight * 2.0 * ds_da2;
        }
        let g_a = conv_valid_adjoint(&f_mu_a, ow, oh, w, h, &k);
        let g_aa = conv_valid_adjoint(&f_mu_aa, ow, oh, w, h, &k);
        let g_ab = conv_valid_adjoint(&f_mu_ab, ow, oh, w, h, &k);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let g = g_a[i] + 2.0 * pa[i] * g_aa[i] + pb[i] * g_ab[i];
                grad.set(x, y, c, g);
            }
        }
    }
    Ok((total, grad))
}

/// D-SSIM = (1 - SSIM) / 2, the form mixed into the input-view loss.
pub fn d_ssim(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (s, g) = ssim(a, b)?;
    Ok(((1.0 - s) / 2.0, g.map(|v| -v / 2.0)))
}

/// SSIM averaged over the windows whose center pixel is selected by the
/// single-channel mask (all windows when the mask is None). Returns NaN when
/// no window centers are selected.
pub fn ssim_masked(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(SplatError::invalid_input(format!(
            "ssim requires images at least {SSIM_WINDOW} pixels on each side"
        )));
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(SplatError::invalid_input("ssim_masked: mask shape mismatch"));
        }
    }
    let k = ssim_kernel();
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let off = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0.0;
    for c in 0..ch {
        let pa = channel_plane(a, c);
        let pb = channel_plane(b, c);
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
        let (mu_a, _, _) = conv_valid(&pa, w, h, &k);
        let (mu_b, _, _) = conv_valid(&pb, w, h, &k);
        let (mu_aa, _, _) = conv_valid(&paa, w, h, &k);
        let (mu_bb, _, _) = conv_valid(&pbb, w, h, &k);
        let (mu_ab, _, _) = conv_valid(&pab, w, h, &k);
        for y in 0..oh {
            for x in 0..ow {
                if let Some(m) = mask {
                    if m.get(x + off, y + off, 0) == 0.0 {
                        continue;
                    }
                }
                let i = y * ow + x;
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = mu_aa[i] - ma * ma;
                let vb = mu_bb[i] - mb * mb;
                let vab = mu_ab[i] - ma * mb;
                let a1 = 2.0 * ma * mb + SSIM_C1;
                let a2 = 2.0 * vab + SSIM_C2;
                let b1 = ma * ma + mb * mb + SSIM_C1;
                let b2 = va + vb + SSIM_C2;
                total += (a1 * a2) / (b1 * b2);
                count += 1.0;
            }
        }
    }
    if count == 0.0 {
        return Ok(f64::NAN);
    }
    Ok(total / count)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

fn sobel(plane: &[f64], w: usize, h: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let k = if horizontal {
                        SOBEL_X[dy][dx]
                    } else {
                        SOBEL_X[dx][dy]
                    };
                    // Replicate-edge padding.
                    let sx = (x + dx).saturating_sub(1).min(w - 1);
                    let sy = (y + dy).saturating_sub(1).min(h - 1);
                    s += k * plane[sy * w + sx];
                }
            }
            out[y * w + x] = s / 8.0;
        }
    }
    out
}

fn sobel_adjoint(field: &[f64], w: usize, h: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let f = field[y * w + x];
            if f == 0.0 {
                continue;
            }
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let k = if horizontal {
                        SOBEL_X[dy][dx]
                    } else {
                        SOBEL_X[dx][dy]
                    };
                    let sx = (x + dx).saturating_sub(1).min(w - 1);
                    let sy = (y + dy).saturating_sub(1).min(h - 1);
                    out[sy * w + sx] += k * f / 8.0;
                }
            }
        }
    }
    out
}

const PYRAMID_LEVELS: usize = 3;

/// Hand-crafted perceptual distance: a 3-level average-pooled pyramid with
/// {intensity, horizontal Sobel, vertical Sobel} features per channel, and L1
/// between feature maps, averaged over levels. The optional mask is
/// downsampled alongside and multiplies the feature extractor inputs.
pub fn perceptual_pyramid(a: &Image, b: &Image, mask: Option<&Image>) -> Result<(f64, Image)> {
    a.require_same_shape(b, "perceptual_pyramid")?;
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(SplatError::invalid_input("perceptual_pyramid: mask shape mismatch"));
        }
    }
    let ch = a.channels();
    let mut value = 0.0;
    // Pyramid levels of the raw inputs and the mask.
    let mut a_levels = vec![a.clone()];
    let mut b_levels = vec![b.clone()];
    let mut m_levels = mask.map(|m| vec![m.clone()]);
    for _ in 1..PYRAMID_LEVELS {
        a_levels.push(a_levels.last().unwrap().avg_pool2());
        b_levels.push(b_levels.last().unwrap().avg_pool2());
        if let Some(ms) = m_levels.as_mut() {
            ms.push(ms.last().unwrap().avg_pool2());
        }
    }
    // Level gradients with respect to the (masked) level input, to be chained
    // back through the pooling stack afterwards.
    let mut level_grads: Vec<Image> = Vec::with_capacity(PYRAMID_LEVELS);
    for l in 0..PYRAMID_LEVELS {
        let (al, bl) = (&a_levels[l], &b_levels[l]);
        let (am, bm) = match m_levels.as_ref() {
            Some(ms) => (al.hadamard(&ms[l])?, bl.hadamard(&ms[l])?),
            None => (al.clone(), bl.clone()),
        };
        let (w, h) = (am.width(), am.height());
        let count = (3 * w * h * ch) as f64;
        let mut g_level = Image::zeros(w, h, ch);
        for c in 0..ch {
            let pa = channel_plane(&am, c);
            let pb = channel_plane(&bm, c);
            // Intensity feature.
            let mut sgn = vec![0.0; w * h];
            for i in 0..w * h {
                let d = pa[i] - pb[i];
                value += d.abs() / count / PYRAMID_LEVELS as f64;
                sgn[i] = sign(d) / count / PYRAMID_LEVELS as f64;
            }
            for y in 0..h {
                for x in 0..w {
                    g_level.add(x, y, c, sgn[y * w + x]);
                }
            }
            // Sobel features.
            for &horizontal in &[true, false] {
                let fa = sobel(&pa, w, h, horizontal);
                let fb = sobel(&pb, w, h, horizontal);
                let mut field = vec![0.0; w * h];
                for i in 0..w * h {
                    let d = fa[i] - fb[i];
                    value += d.abs() / count / PYRAMID_LEVELS as f64;
                    field[i] = sign(d) / count / PYRAMID_LEVELS as f64;
                }
                let back = sobel_adjoint(&field, w, h, horizontal);
                for y in 0..h {
                    for x in 0..w {
                        g_level.add(x, y, c, back[y * w + x]);
                    }
                }
            }
        }
        // Undo the masking of the extractor input.
        let g_masked = match m_levels.as_ref() {
            Some(ms) => g_level.hadamard(&ms[l])?,
            None => g_level,
        };
        level_grads.push(g_masked);
    }
    // Chain each level gradient back through its pooling stack and sum.
    let mut grad = Image::zeros(a.width(), a.height(), ch);
    for (l, mut g) in level_grads.into_iter().enumerate() {
        for back in (0..l).rev() {
            g = a_levels[back].avg_pool2_backward(&g);
        }
        for i in 0..grad.len() {
            grad.data_mut()[i] += g.data()[i];
        }
    }
    Ok((value, grad))
}

/// Input-view reconstruction loss: (1 - lambda) L1 + lambda D-SSIM.
pub fn input_view_loss(render: &Image, gt: &Image, w: &LossWeights) -> Result<(f64, Image)> {
    let (v1, g1) = l1(render, gt, None)?;
    let (v2, g2) = d_ssim(render, gt)?;
    let value = (1.0 - w.lambda) * v1 + w.lambda * v2;
    let mut grad = g1.map(|v| v * (1.0 - w.lambda));
    for i in 0..grad.len() {
        grad.data_mut()[i] += w.lambda * g2.data()[i];
    }
    Ok((value, grad))
}

/// Generated-view loss: lambda_gen1 L1 + lambda_gen2 perceptual, both over
/// the whole image so hole regions keep contributing gradients.
pub fn generated_view_loss(render: &Image, generated: &Image, w: &LossWeights) -> Result<(f64, Image)> {
    let (v1, g1) = l1(render, generated, None)?;
    let (v2, g2) = perceptual_pyramid(render, generated, None)?;
    let value = w.lambda_gen1 * v1 + w.lambda_gen2 * v2;
    let mut grad = g1.map(|v| v * w.lambda_gen1);
    for i in 0..grad.len() {
        grad.data_mut()[i] += w.lambda_gen2 * g2.data()[i];
    }
    Ok((value, grad))
}

/// Guidance loss over a frame stack:
/// |M (S - X)|_1 / (L H W C) + lambda_perc * perc(M S, M X).
/// Returns the value and per-frame gradients with respect to X. The mask must
/// be binary, single-channel, and shaped like the frames.
pub fn guidance_loss(
    s_frames: &[Image],
    m_frames: &[Image],
    x_frames: &[Image],
    w: &LossWeights,
) -> Result<(f64, Vec<Image>)> {
    if s_frames.len() != m_frames.len() || s_frames.len() != x_frames.len() {
        return Err(SplatError::invalid_input("guidance_loss: frame count mismatch"));
    }
    if s_frames.is_empty() {
        return Err(SplatError::invalid_input("guidance_loss: empty sequence"));
    }
    let frames = s_frames.len() as f64;
    let per_frame = s_frames[0].len() as f64;
    let total = frames * per_frame;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(s_frames.len());
    for ((s, m), x) in s_frames.iter().zip(m_frames.iter()).zip(x_frames.iter()) {
        s.require_same_shape(x, "guidance_loss")?;
        if m.width() != s.width() || m.height() != s.height() || m.channels() != 1 {
            return Err(SplatError::invalid_input("guidance_loss: mask shape mismatch"));
        }
        if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(SplatError::invalid_input("guidance_loss: mask must be binary"));
        }
        let mut grad = Image::zeros(x.width(), x.height(), x.channels());
        for y in 0..x.height() {
            for xx in 0..x.width() {
                let mv = m.get(xx, y, 0);
                if mv == 0.0 {
                    continue;
                }
                for c in 0..x.channels() {
                    let d = s.get(xx, y, c) - x.get(xx, y, c);
                    value += d.abs() / total;
                    grad.set(xx, y, c, -sign(d) / total);
                }
            }
        }
        if w.lambda_perc > 0.0 {
            let ms = s.hadamard(m)?;
            let mx = x.hadamard(m)?;
            let (pv, pg) = perceptual_pyramid(&mx, &ms, None)?;
            value += w.lambda_perc * pv / frames;
            let pg_masked = pg.hadamard(m)?;
            for i in 0..grad.len() {
                grad.data_mut()[i] += w.lambda_perc * pg_masked.data()[i] / frames;
            }
        }
        grads.push(grad);
    }
    Ok((value, grads))
}

/// Mean squared error over all elements.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "mse")?;
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    Ok(sum / a.len() as f64)
}

/// MSE restricted to pixels where the single-channel mask is 1. Returns the
/// value and the number of selected pixels.
pub fn masked_mse(a: &Image, b: &Image, mask: &Image) -> Result<(f64, usize)> {
    a.require_same_shape(b, "masked_mse")?;
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(SplatError::invalid_input("masked_mse: mask shape mismatch"));
    }
    let mut sum = 0.0;
    let mut pixels = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(x, y, 0) == 0.0 {
                continue;
            }
            pixels += 1;
            for c in 0..a.channels() {
                let d = a.get(x, y, c) - b.get(x, y, c);
                sum += d * d;
            }
        }
    }
    if pixels == 0 {
        return Ok((0.0, 0));
    }
    Ok((sum / (pixels * a.channels()) as f64, pixels))
}

/// Peak signal-to-noise ratio in dB for images in [0,1]. Identical images
/// return the +infinity sentinel.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
