//! From readout map to probability density, and what can be read off a
//! density: samples, 256-level equal-mass quantization, quartile contours.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{decode_fmap, encode_fmap, FmapHeader};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, GridShape};

/// Kernel support in units of sigma.
pub const KERNEL_TRUNCATE: f64 = 4.0;
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability distribution over the cells of an image's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub image_id: String,
    p: Grid,
}

impl DensityMap {
    /// Validates nonnegativity and normalization.
    pub fn new(image_id: impl Into<String>, p: Grid) -> Result<Self> {
        if p.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numerical("density has negative or non-finite cells".into()));
        }
        let total = p.sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Numerical(format!("density sums to {total}, not 1")));
        }
        Ok(DensityMap {
            image_id: image_id.into(),
            p,
        })
    }

    /// Divides by the total mass; fails on all-zero or invalid grids.
    pub fn normalized(image_id: impl Into<String>, mut p: Grid) -> Result<Self> {
        let total = p.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numerical(format!("cannot normalize mass {total}")));
        }
        p.as_mut_slice().iter_mut().for_each(|v| *v /= total);
        Self::new(image_id, p)
    }

    pub fn uniform(image_id: impl Into<String>, shape: GridShape) -> Self {
        DensityMap {
            image_id: image_id.into(),
            p: Grid::filled(shape, 1.0 / shape.len() as f64),
        }
    }

    pub fn with_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.p
    }

    pub fn shape(&self) -> GridShape {
        self.p.shape()
    }

    pub fn at(&self, cell: Cell) -> f64 {
        self.p.get(cell)
    }

    /// Natural-log density; zero cells map to `-inf`.
    pub fn log_density(&self) -> Grid {
        self.p.map(f64::ln)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    // Half-sample symmetric extension (…c b a | a b c…), period 2n.
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

/// Normalized Gaussian taps on `-r..=r` with `r = ceil(4 sigma)`, and their
/// derivative with respect to sigma.
pub fn gaussian_kernel(sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (KERNEL_TRUNCATE * sigma).ceil() as isize;
    let g: Vec<f64> = (-radius..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = g.iter().sum();
    let k: Vec<f64> = g.iter().map(|v| v / z).collect();
    let s3 = sigma.powi(3);
    let mean_sq: f64 = k
        .iter()
        .zip(-radius..=radius)
        .map(|(w, t)| w * (t * t) as f64)
        .sum();
    let dk = k
        .iter()
        .zip(-radius..=radius)
        .map(|(w, t)| w * ((t * t) as f64 - mean_sq) / s3)
        .collect();
    Ok((k, dk))
}

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
}

fn line_geometry(shape: GridShape, axis: Axis) -> (usize, usize, usize, usize) {
    // (number of lines, line length, stride along the line, stride between lines)
    match axis {
        Axis::Rows => (shape.height, shape.width, 1, shape.width),
        Axis::Cols => (shape.width, shape.height, shape.width, 1),
    }
}

fn convolve_axis(src: &[f64], shape: GridShape, kernel: &[f64], axis: Axis) -> Vec<f64> {
    let (lines, n, step, line_stride) = line_geometry(shape, axis);
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for l in 0..lines {
        let base = l * line_stride;
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let m = reflect(i as isize + j as isize - r, n);
                acc += k * src[base + m * step];
            }
            out[base + i * step] = acc;
        }
    }
    out
}

fn convolve_axis_adjoint(src: &[f64], shape: GridShape, kernel: &[f64], axis: Axis) -> Vec<f64> {
    let (lines, n, step, line_stride) = line_geometry(shape, axis);
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for l in 0..lines {
        let base = l * line_stride;
        for i in 0..n {
            let g = src[base + i * step];
            for (j, &k) in kernel.iter().enumerate() {
                let m = reflect(i as isize + j as isize - r, n);
                out[base + m * step] += k * g;
            }
        }
    }
    out
}

/// Separable Gaussian blur with reflect padding. Preserves the grid sum.
pub fn gaussian_blur(o: &Grid, sigma: f64) -> Result<Grid> {
    let (k, _) = gaussian_kernel(sigma)?;
    let shape = o.shape();
    let h = convolve_axis(o.as_slice(), shape, &k, Axis::Rows);
    Grid::new(shape.height, shape.width, convolve_axis(&h, shape, &k, Axis::Cols))
}

/// Backward pass of [`gaussian_blur`] for `sigma = exp(rho)`: returns the
/// gradient with respect to the unblurred map and with respect to `rho`.
pub fn blur_backward(grad_s: &Grid, o: &Grid, sigma: f64) -> Result<(Grid, f64)> {
    grad_s.ensure_shape(o.shape(), "blur gradient")?;
    let (k, dk) = gaussian_kernel(sigma)?;
    let shape = o.shape();
    let up = convolve_axis_adjoint(grad_s.as_slice(), shape, &k, Axis::Cols);
    let grad_o = convolve_axis_adjoint(&up, shape, &k, Axis::Rows);

    let h = convolve_axis(o.as_slice(), shape, &k, Axis::Rows);
    let hd = convolve_axis(o.as_slice(), shape, &dk, Axis::Rows);
    let ds_a = convolve_axis(&h, shape, &dk, Axis::Cols);
    let ds_b = convolve_axis(&hd, shape, &k, Axis::Cols);
    let grad_sigma: f64 = grad_s
        .as_slice()
        .iter()
        .zip(ds_a.iter().zip(&ds_b))
        .map(|(g, (a, b))| g * (a + b))
        .sum();
    Ok((
        Grid::new(shape.height, shape.width, grad_o)?,
        grad_sigma * sigma,
    ))
}

/// Image-independent prior over fixation locations, stored as log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBiasPrior {
    log_p: Grid,
    uniform: bool,
}

impl CenterBiasPrior {
    pub fn new(log_p: Grid) -> Result<Self> {
        if log_p.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("prior log-density has NaN or +inf".into()));
        }
        let total: f64 = log_p.as_slice().iter().map(|v| v.exp()).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Numerical(format!("prior mass is {total}, not 1")));
        }
        Ok(CenterBiasPrior {
            log_p,
            uniform: false,
        })
    }

    /// Shifts an arbitrary log-weight grid so it normalizes.
    pub fn from_log_weights(log_w: Grid) -> Result<Self> {
        let lse = logsumexp(log_w.as_slice());
        if !lse.is_finite() {
            return Err(Error::Numerical("prior has no finite mass".into()));
        }
        Self::new(log_w.map(|v| v - lse))
    }

    pub fn uniform(shape: GridShape) -> Self {
        CenterBiasPrior {
            log_p: Grid::filled(shape, -(shape.len() as f64).ln()),
            uniform: true,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn shape(&self) -> GridShape {
        self.log_p.shape()
    }

    pub fn log_density(&self) -> &Grid {
        &self.log_p
    }

    pub fn density(&self, image_id: &str) -> DensityMap {
        DensityMap {
            image_id: image_id.to_owned(),
            p: self.log_p.map(f64::exp),
        }
    }

    /// The prior on another grid: nearest-cell resampling of the density,
    /// renormalized. Returns `self` when the shapes already agree.
    pub fn matching(&self, shape: GridShape) -> Result<Cow<'_, CenterBiasPrior>> {
        if shape == self.shape() {
            return Ok(Cow::Borrowed(self));
        }
        if self.uniform {
            return Ok(Cow::Owned(Self::uniform(shape)));
        }
        let src = self.shape();
        let resampled = Grid::from_fn(shape, |c| {
            let sx = ((c.x as f64 + 0.5) * src.width as f64 / shape.width as f64) as usize;
            let sy = ((c.y as f64 + 0.5) * src.height as f64 / shape.height as f64) as usize;
            self.log_p.get(Cell::new(sx.min(src.width - 1), sy.min(src.height - 1)))
        });
        Ok(Cow::Owned(Self::from_log_weights(resampled)?))
    }

    /// Writes the log-density as a one-channel FMAP, plus a `<path>.meta`
    /// sidecar line recording the KDE bandwidth when there is one.
    pub fn save(&self, path: &Path, bandwidth: Option<f64>) -> Result<()> {
        let shape = self.shape();
        let values: Vec<f32> = self.log_p.as_slice().iter().map(|&v| v as f32).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { channel: 0 });
        }
        let bytes = encode_fmap(
            FmapHeader {
                channels: 1,
                height: shape.height,
                width: shape.width,
            },
            &values,
        )?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        if let Some(bw) = bandwidth {
            let meta = sidecar_path(path);
            fs::write(&meta, format!("bandwidth={bw}\n")).map_err(|e| Error::io(&meta, e))?;
        }
        Ok(())
    }

    /// Reads a one-channel FMAP log-density and renormalizes it in double
    /// precision.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, values) = decode_fmap(&bytes)?;
        if header.channels != 1 {
            return Err(Error::Format(format!(
                "center bias must have 1 channel, found {}",
                header.channels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { channel: 0 });
        }
        let log_w = Grid::new(
            header.height,
            header.width,
            values.into_iter().map(f64::from).collect(),
        )?;
        let uniform = log_w.as_slice().windows(2).all(|w| w[0] == w[1]);
        let mut prior = Self::from_log_weights(log_w)?;
        prior.uniform = uniform;
        Ok(prior)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Reads the bandwidth recorded next to a saved prior, if any.
pub fn read_prior_bandwidth(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(sidecar_path(path)).ok()?;
    text.lines()
        .find_map(|l| l.trim().strip_prefix("bandwidth="))
        .and_then(|v| v.trim().parse().ok())
}

pub fn add_center_bias(s: &Grid, prior: &CenterBiasPrior) -> Result<Grid> {
    s.ensure_shape(prior.shape(), "center bias")?;
    let data = s
        .as_slice()
        .iter()
        .zip(prior.log_p.as_slice())
        .map(|(a, b)| a + b)
        .collect();
    Grid::new(s.height(), s.width(), data)
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Stable log-softmax over all cells. `-inf` cells are allowed (zero mass)
/// as long as at least one cell is finite.
pub fn log_softmax2d(s: &Grid) -> Result<Grid> {
    if s.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("softmax input has NaN or +inf".into()));
    }
    let lse = logsumexp(s.as_slice());
    if lse == f64::NEG_INFINITY {
        return Err(Error::Numerical("softmax input is -inf everywhere".into()));
    }
    Ok(s.map(|v| v - lse))
}

pub fn softmax2d(s: &Grid) -> Result<DensityMap> {
    if s.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("softmax input has NaN or +inf".into()));
    }
    let max = s.max();
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("softmax input is -inf everywhere".into()));
    }
    let e = s.map(|v| (v - max).exp());
    let z = e.sum();
    Ok(DensityMap {
        image_id: String::new(),
        p: e.map(|v| v / z),
    })
}

/// `n` i.i.d. draws from the pixel multinomial.
pub fn sample_fixations(p: &DensityMap, n: usize, seed: u64) -> Result<Vec<Cell>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(p.grid().as_slice())
        .map_err(|e| Error::Numerical(format!("cannot sample density: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = p.shape();
    Ok((0..n).map(|_| shape.cell(dist.sample(&mut rng))).collect())
}

/// An 8-bit level per grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMap {
    pub shape: GridShape,
    pub levels: Vec<u8>,
}

impl LevelMap {
    /// Binary PGM (P5), maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.shape.width, self.shape.height).into_bytes();
        out.extend_from_slice(&self.levels);
        out
    }

    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &l in &self.levels {
            h[l as usize] += 1;
        }
        h
    }
}

pub const QUANT_LEVELS: usize = 256;

/// Assigns levels 0..=255 to cells by log-density rank so that every level
/// holds the same number of cells (±1). Ties keep row-major order.
pub fn quantize_equal_mass_256(log_p: &Grid) -> Result<LevelMap> {
    let n = log_p.as_slice().len();
    if n < QUANT_LEVELS {
        return Err(Error::Invalid(format!(
            "equal-mass quantization needs at least {QUANT_LEVELS} cells, got {n}"
        )));
    }
    let values = log_p.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut levels = vec![0u8; n];
    for (rank, &idx) in order.iter().enumerate() {
        levels[idx] = (rank * QUANT_LEVELS / n) as u8;
    }
    Ok(LevelMap {
        shape: log_p.shape(),
        levels,
    })
}

/// Three density thresholds splitting the map into four regions of about
/// equal probability mass, most probable region first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourLevels {
    pub thresholds: [f64; 3],
    pub region_masses: [f64; 4],
    pub region_cells: [usize; 4],
}

/// Greedy cut over cells sorted by density (descending, ties by row-major
/// index): region k ends at the first cell where the cumulative mass reaches
/// k/4. Each threshold is the density of the last cell inside its region.
pub fn contour_thresholds(p: &DensityMap) -> ContourLevels {
    let values = p.grid().as_slice();
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut cuts = [0usize; 3];
    let mut cum = 0.0;
    let mut next = 0;
    for (i, &idx) in order.iter().enumerate() {
        cum += values[idx];
        while next < 3 && cum >= (next + 1) as f64 * 0.25 - 1e-12 {
            cuts[next] = i + 1;
            next += 1;
        }
    }
    for c in cuts.iter_mut().skip(next) {
        *c = n;
    }

    let bounds = [0, cuts[0], cuts[1], cuts[2], n];
    let mut region_masses = [0.0; 4];
    let mut region_cells = [0usize; 4];
    for r in 0..4 {
        region_cells[r] = bounds[r + 1] - bounds[r];
        region_masses[r] = order[bounds[r]..bounds[r + 1]]
            .iter()
            .map(|&i| values[i])
            .sum();
    }
    let thresholds = cuts.map(|c| values[order[c.max(1) - 1]]);
    ContourLevels {
        thresholds,
        region_masses,
        region_cells,
    }
}
