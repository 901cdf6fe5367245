//! Gradient-domain (Poisson) and frequency-domain fusion of rendered images
//! into real photographs.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlendError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("expected {expected} channel(s), got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("conjugate gradient did not reach {tolerance:e} after {iterations} iterations (residual {residual:e})")]
    SolverDivergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("cutoff must be in (0, 1], got {0}")]
    InvalidCutoff(f64),
}

/// Row-major, interleaved image with samples nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<f64>) -> Result<Self, BlendError> {
        if channels != 1 && channels != 3 {
            return Err(BlendError::InvalidImage(format!(
                "{channels} channels, expected 1 or 3"
            )));
        }
        let expected = width as usize * height as usize * channels;
        if data.len() != expected {
            return Err(BlendError::InvalidImage(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: usize, value: f64) -> Result<Self, BlendError> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width as usize * height as usize * channels],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width as usize + x) * self.channels + c]
    }

    /// One channel as a planar buffer.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    fn from_planes(width: u32, height: u32, planes: &[Vec<f64>]) -> Self {
        let channels = planes.len();
        let n = width as usize * height as usize;
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(image: &Image) -> Result<Image, BlendError> {
    if image.channels != 3 {
        return Err(BlendError::ChannelMismatch {
            expected: 3,
            got: image.channels,
        });
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Image::new(image.width, image.height, 1, data)
}

/// Pixels to replace from the source. Never set on the outer border, so
/// every masked pixel has four in-image neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BlendMask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self, BlendError> {
        if data.len() != width as usize * height as usize {
            return Err(BlendError::InvalidMask(format!(
                "{} entries for {width}x{height}",
                data.len()
            )));
        }
        let (w, h) = (width as usize, height as usize);
        for y in 0..h {
            for x in 0..w {
                let border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
                if border && data[y * w + x] {
                    return Err(BlendError::InvalidMask(format!(
                        "pixel ({x}, {y}) on the image border is masked"
                    )));
                }
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    /// Thresholds a single-channel image at 0.5.
    pub fn from_image(image: &Image) -> Result<Self, BlendError> {
        if image.channels != 1 {
            return Err(BlendError::ChannelMismatch {
                expected: 1,
                got: image.channels,
            });
        }
        Self::new(
            image.width,
            image.height,
            image.data.iter().map(|&v| v >= 0.5).collect(),
        )
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width as usize + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoissonMode {
    /// Guidance field = source gradients, per channel.
    NormalClone,
    /// Guidance field = gradients of the grayscale source, for every channel.
    MonochromeTransfer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖b − A x‖∞` drops below this.
    pub tolerance: f64,
    /// `None` uses `10 · sqrt(|Ω|) + 1000`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: None,
        }
    }
}

/// Masked 4-neighbour Laplacian system: unknowns are the masked pixels.
struct MaskedLaplacian {
    width: usize,
    /// Pixel index of each unknown.
    pixels: Vec<usize>,
    /// Unknown index of each pixel, `usize::MAX` outside the mask.
    unknown: Vec<usize>,
}

impl MaskedLaplacian {
    fn new(mask: &BlendMask) -> Self {
        let pixels: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
        let mut unknown = vec![usize::MAX; mask.data.len()];
        for (k, &p) in pixels.iter().enumerate() {
            unknown[p] = k;
        }
        Self {
            width: mask.width as usize,
            pixels,
            unknown,
        }
    }

    fn neighbours(&self, p: usize) -> [usize; 4] {
        [p - 1, p + 1, p - self.width, p + self.width]
    }

    /// `y = A x` with `A = 4I − adjacency` restricted to the mask.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (k, &p) in self.pixels.iter().enumerate() {
            let mut acc = 4.0 * x[k];
            for q in self.neighbours(p) {
                let j = self.unknown[q];
                if j != usize::MAX {
                    acc -= x[j];
                }
            }
            y[k] = acc;
        }
    }

    /// Right-hand side for `Δf = Δg` with `f = boundary` outside the mask:
    /// `b_p = Σ_q (g_p − g_q) + Σ_{q ∉ Ω} boundary_q`.
    fn rhs(&self, guidance: &[f64], boundary: &[f64]) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|&p| {
                self.neighbours(p)
                    .iter()
                    .map(|&q| {
                        let div = guidance[p] - guidance[q];
                        if self.unknown[q] == usize::MAX {
                            div + boundary[q]
                        } else {
                            div
                        }
                    })
                    .sum()
            })
            .collect()
    }

    fn solve(&self, b: &[f64], x: &mut [f64], options: &SolverOptions) -> Result<usize, BlendError> {
        let n = b.len();
        let cap = options
            .max_iterations
            .unwrap_or_else(|| (10.0 * (n as f64).sqrt()) as usize + 1000);
        let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut ax = vec![0.0; n];
        self.apply(x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if inf_norm(&r) < options.tolerance {
            return Ok(0);
        }
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        for it in 1..=cap {
            self.apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if it % 50 == 0 {
                // Replace the recursively updated residual to stop drift.
                self.apply(x, &mut ax);
                for i in 0..n {
                    r[i] = b[i] - ax[i];
                }
            }
            if inf_norm(&r) < options.tolerance {
                self.apply(x, &mut ax);
                let true_res = b.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
                if true_res < options.tolerance {
                    return Ok(it);
                }
                r.iter_mut().zip(b.iter().zip(&ax)).for_each(|(r, (b, a))| *r = b - a);
            }
            let rr_next = dot(&r, &r);
            let beta = rr_next / rr;
            rr = rr_next;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(BlendError::SolverDivergence {
            iterations: cap,
            residual: inf_norm(&r),
            tolerance: options.tolerance,
        })
    }
}

fn check_same_dims(a: (u32, u32), b: (u32, u32)) -> Result<(), BlendError> {
    if a != b {
        return Err(BlendError::DimensionMismatch(a, b));
    }
    Ok(())
}

/// Solves the Poisson equation inside `mask` and returns the unclamped result.
///
/// Outside the mask the output is `target`, bit for bit. Inside, the 4-neighbour
/// Laplacian of the output equals the divergence of the guidance field derived
/// from `source` according to `mode`.
pub fn poisson_solve(
    target: &Image,
    source: &Image,
    mask: &BlendMask,
    mode: PoissonMode,
    options: &SolverOptions,
) -> Result<Image, BlendError> {
    check_same_dims(target.dims(), source.dims())?;
    check_same_dims(target.dims(), mask.dims())?;
    let guidance: Vec<Vec<f64>> = match mode {
        PoissonMode::NormalClone => {
            if source.channels != target.channels {
                return Err(BlendError::ChannelMismatch {
                    expected: target.channels,
                    got: source.channels,
                });
            }
            (0..source.channels).map(|c| source.plane(c)).collect()
        }
        PoissonMode::MonochromeTransfer => {
            let gray = if source.channels == 3 {
                to_grayscale(source)?.plane(0)
            } else {
                source.plane(0)
            };
            vec![gray; target.channels]
        }
    };

    let system = MaskedLaplacian::new(mask);
    let mut planes = Vec::with_capacity(target.channels);
    for (c, g) in guidance.iter().enumerate() {
        let mut plane = target.plane(c);
        if !system.pixels.is_empty() {
            let b = system.rhs(g, &plane);
            let mut x: Vec<f64> = system.pixels.iter().map(|&p| plane[p]).collect();
            system.solve(&b, &mut x, options)?;
            for (k, &p) in system.pixels.iter().enumerate() {
                plane[p] = x[k];
            }
        }
        planes.push(plane);
    }
    Ok(Image::from_planes(target.width, target.height, &planes))
}

/// [`poisson_solve`] with default solver options, clamped to `[0, 1]`.
pub fn poisson_blend(target: &Image, source: &Image, mask: &BlendMask, mode: PoissonMode) -> Result<Image, BlendError> {
    Ok(poisson_solve(target, source, mask, mode, &SolverOptions::default())?.clamped())
}

/// Normalized radial frequency of FFT bin `(kx, ky)`: 0 at DC, 1 at the
/// (Nyquist, Nyquist) corner.
pub fn radial_frequency(kx: usize, ky: usize, width: usize, height: usize) -> f64 {
    let signed = |k: usize, n: usize| {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        f / n as f64
    };
    let fx = signed(kx, width);
    let fy = signed(ky, height);
    (fx * fx + fy * fy).sqrt() / (0.5f64 * 2f64.sqrt())
}

/// Whether bin `(kx, ky)` belongs to the low band for `cutoff`.
pub fn in_low_band(kx: usize, ky: usize, width: usize, height: usize, cutoff: f64) -> bool {
    radial_frequency(kx, ky, width, height) <= cutoff
}

pub(crate) fn fft2(plane: &[f64], width: usize, height: usize, inverse: bool) -> Vec<Complex<f64>> {
    let buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_complex(buf, width, height, inverse)
}

pub(crate) fn fft2_complex(
    mut buf: Vec<Complex<f64>>,
    width: usize,
    height: usize,
    inverse: bool,
) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
    if inverse {
        let norm = 1.0 / (width * height) as f64;
        for v in &mut buf {
            *v *= norm;
        }
    }
    buf
}

/// Low frequencies from `rendered`, high frequencies from `original`, unclamped.
///
/// `cutoff` is a fraction of the maximum radial frequency; `cutoff = 1` takes
/// the whole spectrum from `rendered`.
pub fn frequency_fuse_unclamped(original: &Image, rendered: &Image, cutoff: f64) -> Result<Image, BlendError> {
    check_same_dims(original.dims(), rendered.dims())?;
    if original.channels != rendered.channels {
        return Err(BlendError::ChannelMismatch {
            expected: original.channels,
            got: rendered.channels,
        });
    }
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(BlendError::InvalidCutoff(cutoff));
    }
    let (w, h) = (original.width as usize, original.height as usize);
    let planes: Vec<Vec<f64>> = (0..original.channels)
        .map(|c| {
            let o = fft2(&original.plane(c), w, h, false);
            let r = fft2(&rendered.plane(c), w, h, false);
            let mut spectrum = Vec::with_capacity(w * h);
            for ky in 0..h {
                for kx in 0..w {
                    let i = ky * w + kx;
                    spectrum.push(if in_low_band(kx, ky, w, h, cutoff) { r[i] } else { o[i] });
                }
            }
            fft2_complex(spectrum, w, h, true).iter().map(|v| v.re).collect()
        })
        .collect();
    Ok(Image::from_planes(original.width, original.height, &planes))
}

/// [`frequency_fuse_unclamped`] clamped to `[0, 1]`.
pub fn frequency_fuse(original: &Image, rendered: &Image, cutoff: f64) -> Result<Image, BlendError> {
    Ok(frequency_fuse_unclamped(original, rendered, cutoff)?.clamped())
}
