//! Focus measures: Laplacian, variance of Laplacian (VoL), Brenner score,
//! normalized blur maps and region-of-interest scoring.
//!
//! Both measures follow the autofocus-literature conventions: the image is
//! scaled to `[0, 255]` before the operator is applied, the Laplacian is
//! the four-neighbour 3x3 kernel with replicate padding, and the Brenner
//! score is the classic shift-2 squared gradient. Higher values mean
//! sharper content.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grayscale image: `H x W` luma values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    data: Array2<f32>,
}

impl GrayImage {
    /// Wraps a luma grid, validating that all values are finite and in
    /// `[0, 1]`.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("gray value {v} outside [0, 1]")));
        }
        Ok(GrayImage { data })
    }

    /// Luma conversion `0.299 R + 0.587 G + 0.114 B` from an `(H, W, 3)`
    /// RGB tensor in `[0, 1]`.
    pub fn from_rgb(rgb: &Array3<f32>) -> Result<Self> {
        let (h, w, c) = rgb.dim();
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        let mut data = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let v = 0.299 * rgb[[y, x, 0]] + 0.587 * rgb[[y, x, 1]] + 0.114 * rgb[[y, x, 2]];
                data[[y, x]] = v.clamp(0.0, 1.0);
            }
        }
        Ok(GrayImage { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }
}

/// A rectangle `(x0, y0, width, height)` in pixel coordinates
/// (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    /// A region must cover at least 9 pixels so the variance is taken over
    /// a real neighbourhood.
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width * height < 9 {
            return Err(Error::invalid(format!(
                "roi area {} below minimum of 9 pixels",
                width * height
            )));
        }
        Ok(Roi { x0, y0, width, height })
    }

    fn check_bounds(&self, img: &GrayImage, what: &str) -> Result<()> {
        if self.x0 + self.width > img.width() || self.y0 + self.height > img.height() {
            return Err(Error::invalid(format!(
                "roi {self:?} exceeds {what} bounds {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

/// Four-neighbour Laplacian of the `[0, 255]`-scaled image with replicate
/// padding: kernel `[[0,1,0],[1,-4,1],[0,1,0]]`.
pub fn laplacian(img: &GrayImage) -> Result<Array2<f64>> {
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("image {w}x{h} smaller than 3x3 kernel")));
    }
    let g = &img.data;
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        g[[y, x]] as f64 * 255.0
    };
    let mut out = Array2::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            out[[y as usize, x as usize]] =
                at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
        }
    }
    Ok(out)
}

/// Population variance of the Laplacian over `roi`.
pub fn variance_of_laplacian(img: &GrayImage, roi: &Roi) -> Result<f64> {
    roi.check_bounds(img, "image")?;
    let lap = laplacian(img)?;
    Ok(variance_over_roi(&lap, roi))
}

fn variance_over_roi(lap: &Array2<f64>, roi: &Roi) -> f64 {
    let n = (roi.width * roi.height) as f64;
    let mut mean = 0.0;
    for y in roi.y0..roi.y0 + roi.height {
        for x in roi.x0..roi.x0 + roi.width {
            mean += lap[[y, x]];
        }
    }
    mean /= n;
    let mut ssd = 0.0;
    for y in roi.y0..roi.y0 + roi.height {
        for x in roi.x0..roi.x0 + roi.width {
            let d = lap[[y, x]] - mean;
            ssd += d * d;
        }
    }
    ssd / n
}

/// Classic Brenner score over `roi`: the sum of `(I(i, j+2) - I(i, j))^2`
/// on the `[0, 255]`-scaled image, with pairs whose second pixel leaves
/// the roi excluded.
pub fn brenner(img: &GrayImage, roi: &Roi) -> Result<f64> {
    roi.check_bounds(img, "image")?;
    if roi.width < 3 {
        return Err(Error::invalid(format!("roi width {} below 3", roi.width)));
    }
    let g = &img.data;
    let mut total = 0.0f64;
    for y in roi.y0..roi.y0 + roi.height {
        for x in roi.x0..roi.x0 + roi.width - 2 {
            let d = (g[[y, x + 2]] as f64 - g[[y, x]] as f64) * 255.0;
            total += d * d;
        }
    }
    Ok(total)
}

/// The absolute Laplacian linearly rescaled to `[0, 1]` by its own
/// min/max; a constant-Laplacian image maps to all zeros.
pub fn blur_map(img: &GrayImage) -> Result<GrayImage> {
    let lap = laplacian(img)?;
    let abs = lap.mapv(f64::abs);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = abs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if max > min {
        abs.mapv(|v| (((v - min) / (max - min)) as f32).clamp(0.0, 1.0))
    } else {
        Array2::zeros(abs.dim())
    };
    Ok(GrayImage { data })
}

/// Focus scores for one named region, optionally against a baseline image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiScore {
    pub roi: String,
    pub vol: f64,
    pub brenner: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_vol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_brenner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vol_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brenner_ratio: Option<f64>,
}

/// Per-roi VoL/Brenner values, with ratios against a baseline image when
/// one is provided.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FocusReport {
    pub entries: Vec<RoiScore>,
}

impl FocusReport {
    /// CSV serialization with the fixed header
    /// `roi,vol,brenner,baseline_vol,baseline_brenner,vol_ratio,brenner_ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("roi,vol,brenner,baseline_vol,baseline_brenner,vol_ratio,brenner_ratio\n");
        for e in &self.entries {
            let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.roi,
                e.vol,
                e.brenner,
                opt(e.baseline_vol),
                opt(e.baseline_brenner),
                opt(e.vol_ratio),
                opt(e.brenner_ratio),
            ));
        }
        out
    }
}

/// Scores every named roi on `image`; when `baseline` is present the same
/// rois are scored there too and the report carries value/baseline ratios.
pub fn score_rois(
    image: &GrayImage,
    rois: &[(String, Roi)],
    baseline: Option<&GrayImage>,
) -> Result<FocusReport> {
    let mut entries = Vec::with_capacity(rois.len());
    for (name, roi) in rois {
        let vol = variance_of_laplacian(image, roi)?;
        let bren = brenner(image, roi)?;
        let mut score = RoiScore {
            roi: name.clone(),
            vol,
            brenner: bren,
            baseline_vol: None,
            baseline_brenner: None,
            vol_ratio: None,
            brenner_ratio: None,
        };
        if let Some(base) = baseline {
            roi.check_bounds(base, "baseline")?;
            let bvol = variance_of_laplacian(base, roi)?;
            let bbren = brenner(base, roi)?;
            score.baseline_vol = Some(bvol);
            score.baseline_brenner = Some(bbren);
            score.vol_ratio = Some(vol / bvol);
            score.brenner_ratio = Some(bren / bbren);
        }
        entries.push(score);
    }
    Ok(FocusReport { entries })
}

/// Separable Gaussian blur with replicate padding; kernel half-width is
/// `ceil(3 sigma)`. `sigma <= 0` returns the image unchanged.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }

    let (h, w) = (img.height(), img.width());
    let src = &img.data;
    let mut horiz = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let xi = (x + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * src[[y, xi]] as f64;
            }
            horiz[[y, x as usize]] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let yi = (y + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * horiz[[yi, x]];
            }
            out[[y as usize, x]] = (acc as f32).clamp(0.0, 1.0);
        }
    }
    GrayImage { data: out }
}
