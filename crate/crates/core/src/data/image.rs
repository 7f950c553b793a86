//! Small raster helpers over `[C, H, W]` tensors.

use crate::tensor::Tensor;

/// 2-D affine map `p' = A p + t` in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2 {
    pub const IDENTITY: Self = Self { a: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] };

    /// Rotation by `deg` (positive turns +x toward +y) and uniform `scale` about `center`,
    /// optionally preceded by a horizontal mirror `x -> width - 1 - x`.
    pub fn about_center(center: (f64, f64), deg: f64, scale: f64, flip_width: Option<usize>) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        let rot = [[c * scale, -s * scale], [s * scale, c * scale]];
        let mut m = Self { a: rot, t: [0.0, 0.0] };
        // p' = R (p - center) + center
        m.t = [
            center.0 - rot[0][0] * center.0 - rot[0][1] * center.1,
            center.1 - rot[1][0] * center.0 - rot[1][1] * center.1,
        ];
        if let Some(w) = flip_width {
            let flip = Self { a: [[-1.0, 0.0], [0.0, 1.0]], t: [w as f64 - 1.0, 0.0] };
            m = m.compose(&flip);
        }
        m
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let a = &self.a;
        let b = &other.a;
        Affine2 {
            a: [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ],
            t: [
                a[0][0] * other.t[0] + a[0][1] * other.t[1] + self.t[0],
                a[1][0] * other.t[0] + a[1][1] * other.t[1] + self.t[1],
            ],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.t[0],
            self.a[1][0] * x + self.a[1][1] * y + self.t[1],
        )
    }

    /// Linear part only (for displacement vectors).
    pub fn apply_vector(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a[0][0] * x + self.a[0][1] * y, self.a[1][0] * x + self.a[1][1] * y)
    }

    pub fn inverse(&self) -> Affine2 {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        Affine2 {
            a: inv,
            t: [
                -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
                -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
            ],
        }
    }
}

/// Bilinear sample of one plane; outside reads as zero.
pub fn sample_bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (lx, ly) = (x - x0, y - y0);
    let get = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    (1.0 - ly) * ((1.0 - lx) * get(y0, x0) + lx * get(y0, x0 + 1.0))
        + ly * ((1.0 - lx) * get(y0 + 1.0, x0) + lx * get(y0 + 1.0, x0 + 1.0))
}

/// Resamples every channel of `img` so that output pixel `p'` reads `img(T^-1 p')`.
pub fn warp_affine(img: &Tensor, transform: &Affine2) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let inv = transform.inverse();
    let mut out = Tensor::zeros(s);
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out.data_mut()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                dst[y * w + x] = sample_bilinear(plane, h, w, sx, sy);
            }
        }
    }
    out
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return img.clone();
    }
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = k.iter().sum();
        k.into_iter().map(|v| v / total).collect()
    };
    let mut tmp = vec![0.0; h * w];
    let mut out = Tensor::zeros(s);
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * plane[y * w + xx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = &mut out.data_mut()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[yy * w + x];
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}
