use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Data range padded by `frac` of its extent on each side. A degenerate
    /// axis gets one world unit of padding instead.
    pub fn padded(points: &[(f64, f64)], frac: f64) -> Result<Self> {
        let Some(&(x0, y0)) = points.first() else {
            return Err(Error::EmptyInput("no locations"));
        };
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (x0, x0, y0, y0);
        for &(x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let pad = |lo: f64, hi: f64| {
            let span = hi - lo;
            if span > 0.0 {
                span * frac
            } else {
                1.0
            }
        };
        let px = pad(x_min, x_max);
        let py = pad(y_min, y_max);
        Ok(Self::new(x_min - px, x_max + px, y_min - py, y_max + py))
    }
}

impl From<(f64, f64, f64, f64)> for Bounds {
    fn from(b: (f64, f64, f64, f64)) -> Self {
        Self::new(b.0, b.1, b.2, b.3)
    }
}

/// Smoothed empirical distribution of ground-plane object locations.
///
/// `masses` is row-major over a `bins × bins` grid: row = y bin, column = x bin.
/// Every bin carries at least `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationHistogram {
    pub bounds: Bounds,
    pub bins: usize,
    pub sigma: f64,
    pub floor: f64,
    pub masses: Vec<f64>,
}

impl LocationHistogram {
    pub fn uniform(bounds: impl Into<Bounds>, bins: usize, floor: f64) -> Result<Self> {
        let hist = Self {
            bounds: bounds.into(),
            bins,
            sigma: 0.0,
            floor,
            masses: vec![1.0 / (bins * bins) as f64; bins * bins],
        };
        hist.validate()?;
        Ok(hist)
    }

    /// Counts `locations` into bins, smooths with a Gaussian of `sigma` bins
    /// (truncated at 3σ and renormalized), then floors every bin at `floor`.
    /// Locations outside `bounds` are ignored.
    pub fn fit(
        locations: &[(f64, f64)],
        bounds: impl Into<Bounds>,
        bins: usize,
        sigma: f64,
        floor: f64,
    ) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyInput("no locations to fit a histogram"));
        }
        let bounds = bounds.into();
        check_params(&bounds, bins, sigma, floor)?;
        let mut shell = Self {
            bounds,
            bins,
            sigma,
            floor,
            masses: Vec::new(),
        };
        let mut counts = vec![0.0; bins * bins];
        let mut inside = 0usize;
        for &(x, y) in locations {
            if let Some(b) = shell.bin_of(x, y) {
                counts[b] += 1.0;
                inside += 1;
            }
        }
        if inside == 0 {
            return Err(Error::EmptyInput(
                "no locations inside the histogram bounds",
            ));
        }
        shell.masses = smooth_and_floor(counts, bins, sigma, floor)?;
        Ok(shell)
    }

    /// Evaluates `density` at bin centers, then smooths and floors like [`fit`](Self::fit).
    pub fn from_density(
        bounds: impl Into<Bounds>,
        bins: usize,
        sigma: f64,
        floor: f64,
        density: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let bounds = bounds.into();
        check_params(&bounds, bins, sigma, floor)?;
        let mut raw = vec![0.0; bins * bins];
        let (wx, wy) = bin_widths(&bounds, bins);
        for iy in 0..bins {
            for ix in 0..bins {
                let x = bounds.x_min + (ix as f64 + 0.5) * wx;
                let y = bounds.y_min + (iy as f64 + 0.5) * wy;
                raw[iy * bins + ix] = density(x, y).max(0.0);
            }
        }
        let masses = smooth_and_floor(raw, bins, sigma, floor)?;
        Ok(Self {
            bounds,
            bins,
            sigma,
            floor,
            masses,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_params(&self.bounds, self.bins, self.sigma, self.floor)?;
        if self.masses.len() != self.bins * self.bins {
            return Err(Error::InvalidSpec(format!(
                "histogram has {} masses, expected {}",
                self.masses.len(),
                self.bins * self.bins
            )));
        }
        // Allow for decimal round-off when masses come from JSON.
        let min_ok = self.floor * (1.0 - 1e-9);
        if self
            .masses
            .iter()
            .any(|&m| !(m >= min_ok) || !m.is_finite())
        {
            return Err(Error::InvalidSpec("histogram mass below floor".into()));
        }
        let sum: f64 = self.masses.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!("histogram masses sum to {sum}")));
        }
        Ok(())
    }

    /// Row-major index of the bin containing `(x, y)`, or `None` outside the bounds.
    pub fn bin_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.bounds.contains(x, y) {
            return None;
        }
        let (wx, wy) = bin_widths(&self.bounds, self.bins);
        let last = self.bins - 1;
        let ix = (((x - self.bounds.x_min) / wx).floor() as usize).min(last);
        let iy = (((y - self.bounds.y_min) / wy).floor() as usize).min(last);
        Some(iy * self.bins + ix)
    }

    /// Mass of the bin containing `(x, y)`; the floor outside the bounds.
    pub fn mass_at(&self, x: f64, y: f64) -> f64 {
        match self.bin_of(x, y) {
            Some(b) => self.masses[b],
            None => self.floor,
        }
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    /// Draws a bin by mass, then a point uniformly inside it.
    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let total: f64 = self.masses.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = self.masses.len() - 1;
        for (b, &m) in self.masses.iter().enumerate() {
            if u < m {
                chosen = b;
                break;
            }
            u -= m;
        }
        let (wx, wy) = bin_widths(&self.bounds, self.bins);
        let ix = chosen % self.bins;
        let iy = chosen / self.bins;
        let x = self.bounds.x_min + (ix as f64 + rng.random::<f64>()) * wx;
        let y = self.bounds.y_min + (iy as f64 + rng.random::<f64>()) * wy;
        (x, y)
    }
}

fn bin_widths(bounds: &Bounds, bins: usize) -> (f64, f64) {
    (
        (bounds.x_max - bounds.x_min) / bins as f64,
        (bounds.y_max - bounds.y_min) / bins as f64,
    )
}

fn check_params(bounds: &Bounds, bins: usize, sigma: f64, floor: f64) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    if !(bounds.x_min < bounds.x_max && bounds.y_min < bounds.y_max)
        || ![bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max]
            .iter()
            .all(|v| v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "histogram bounds are empty or not finite".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing sigma {sigma} must be >= 0"
        )));
    }
    if !(floor > 0.0) || floor * (bins * bins) as f64 >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "floor {floor} must be positive and leave mass for {bins}x{bins} bins"
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn smooth_and_floor(raw: Vec<f64>, bins: usize, sigma: f64, floor: f64) -> Result<Vec<f64>> {
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as i64;
    let n = bins as i64;

    // Separable convolution; mass pushed past the border is dropped.
    let mut rows = vec![0.0; bins * bins];
    for iy in 0..n {
        for ix in 0..n {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                let sx = ix + t as i64 - radius;
                if (0..n).contains(&sx) {
                    acc += w * raw[(iy * n + sx) as usize];
                }
            }
            rows[(iy * n + ix) as usize] = acc;
        }
    }
    let mut out = vec![0.0; bins * bins];
    for iy in 0..n {
        for ix in 0..n {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                let sy = iy + t as i64 - radius;
                if (0..n).contains(&sy) {
                    acc += w * rows[(sy * n + ix) as usize];
                }
            }
            out[(iy * n + ix) as usize] = acc;
        }
    }

    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyInput("histogram has no mass"));
    }
    out.iter_mut().for_each(|m| *m /= total);
    apply_floor(&mut out, floor);
    Ok(out)
}

/// Raises every bin to at least `floor` and rescales the rest so the total
/// stays 1. Repeats because rescaling can push more bins under the floor.
fn apply_floor(p: &mut [f64], floor: f64) {
    let mut fixed = vec![false; p.len()];
    loop {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_mass: f64 = p
            .iter()
            .zip(&fixed)
            .filter(|(_, &f)| !f)
            .map(|(m, _)| m)
            .sum();
        let scale = (1.0 - floor * n_fixed as f64) / free_mass;
        let mut changed = false;
        for (m, f) in p.iter().zip(fixed.iter_mut()) {
            if !*f && m * scale < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (m, &f) in p.iter_mut().zip(&fixed) {
                *m = if f { floor } else { *m * scale };
            }
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mass() {
        let h = LocationHistogram::uniform((-1.0, 1.0, -1.0, 1.0), 32, 1e-6).unwrap();
        assert!(h.masses.iter().all(|&m| m == 1.0 / 1024.0));
        assert_eq!(h.bin_of(-1.0, -1.0), Some(0));
        assert_eq!(h.bin_of(1.0, 1.0), Some(1023));
        assert_eq!(h.bin_of(1.0001, 0.0), None);
    }

    #[test]
    fn point_mass_without_smoothing() {
        let b = 8;
        let eps = 1e-4;
        let h = LocationHistogram::fit(&[(0.1, 0.1)], (-1.0, 1.0, -1.0, 1.0), b, 0.0, eps).unwrap();
        let hit = h.bin_of(0.1, 0.1).unwrap();
        let expected = 1.0 - ((b * b - 1) as f64) * eps;
        assert!((h.masses[hit] - expected).abs() < 1e-12);
        for (i, &m) in h.masses.iter().enumerate() {
            if i != hit {
                assert_eq!(m, eps);
            }
        }
        h.validate().unwrap();
    }

    #[test]
    fn empty_locations_rejected() {
        let err = LocationHistogram::fit(&[], (-1.0, 1.0, -1.0, 1.0), 4, 1.0, 1e-6).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn parameter_checks() {
        let b = (-1.0, 1.0, -1.0, 1.0);
        assert!(LocationHistogram::fit(&[(0.0, 0.0)], b, 1, 1.0, 1e-6).is_err());
        assert!(LocationHistogram::fit(&[(0.0, 0.0)], b, 4, -1.0, 1e-6).is_err());
        assert!(LocationHistogram::fit(&[(0.0, 0.0)], b, 4, 1.0, 0.0).is_err());
        assert!(LocationHistogram::fit(&[(0.0, 0.0)], b, 4, 1.0, 1.0 / 16.0).is_err());
    }

    #[test]
    fn padded_bounds() {
        let b = Bounds::padded(&[(0.0, 0.0), (10.0, 2.0)], 0.1).unwrap();
        assert_eq!(b, Bounds::new(-1.0, 11.0, -0.2, 2.2));
        let b = Bounds::padded(&[(3.0, 3.0)], 0.1).unwrap();
        assert_eq!(b, Bounds::new(2.0, 4.0, 2.0, 4.0));
    }

    #[test]
    fn sampled_locations_stay_in_bounds() {
        use rand::SeedableRng;
        let h = LocationHistogram::fit(
            &[(0.0, 0.0), (0.5, -0.5)],
            (-1.0, 1.0, -1.0, 1.0),
            16,
            1.0,
            1e-6,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (x, y) = h.sample_location(&mut rng);
            assert!(h.bounds.contains(x, y));
        }
    }
}
