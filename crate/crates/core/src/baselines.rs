//! Classical comparison denoisers.
//!
//! `sg_filter` is a Savitzky-Golay smoother. `cotcat_like` is a simplified
//! stand-in for the CoTCAT toolkit: median/MAD spike replacement followed by a
//! centred moving average, repeated for a number of iterations. It is not a
//! reimplementation of CoTCAT. Both filters run on each detector segment
//! independently and never mix channels across the gap.

use serde::{Deserialize, Serialize};

use crate::spectral::{Spectrum, WavelengthGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SGParams {
    pub window: usize,
    pub poly_order: usize,
}

impl Default for SGParams {
    fn default() -> Self {
        Self { window: 11, poly_order: 3 }
    }
}

impl SGParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("SG window {} must be odd and >= 3", self.window)));
        }
        if self.poly_order >= self.window {
            return Err(Error::Config(format!(
                "SG polynomial order {} must be below the window {}",
                self.poly_order, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotcatLikeParams {
    pub spike_window: usize,
    /// Spike threshold in multiples of the window MAD.
    pub spike_threshold: f64,
    pub smooth_window: usize,
    pub iterations: usize,
}

impl Default for CotcatLikeParams {
    fn default() -> Self {
        Self { spike_window: 7, spike_threshold: 2.0, smooth_window: 7, iterations: 1 }
    }
}

impl CotcatLikeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("spike_window", self.spike_window), ("smooth_window", self.smooth_window)] {
            if w == 0 || w % 2 == 0 {
                return Err(Error::Config(format!("cotcat_like {name} {w} must be odd and positive")));
            }
        }
        if !(self.spike_threshold > 0.0) {
            return Err(Error::Config("cotcat_like spike_threshold must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("cotcat_like iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if a[piv * n + col].abs() < 1e-300 {
            return Err(Error::Numeric("singular least-squares system".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

/// Weights that evaluate, at sample `pos` of a `window`-long run, the
/// least-squares polynomial of degree `order` fitted to that run.
pub fn sg_weights_at(window: usize, order: usize, pos: usize) -> Result<Vec<f64>> {
    if order >= window || pos >= window {
        return Err(Error::Config(format!("invalid SG geometry: window {window}, order {order}, pos {pos}")));
    }
    let m = order + 1;
    // Abscissae scaled into [-1, 1] keep the normal equations well conditioned.
    let scale = (window - 1).max(1) as f64;
    let t: Vec<f64> = (0..window).map(|k| (k as f64 - pos as f64) / scale).collect();
    let basis = |k: usize, j: usize| t[k].powi(j as i32);
    let mut gram = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            gram[r * m + c] = (0..window).map(|k| basis(k, r) * basis(k, c)).sum();
        }
    }
    let mut e0 = vec![0.0; m];
    e0[0] = 1.0;
    let z = solve(gram, e0)?;
    Ok((0..window).map(|k| (0..m).map(|j| basis(k, j) * z[j]).sum()).collect())
}

/// Centre-point smoothing weights of the Savitzky-Golay filter.
pub fn sg_coefficients(p: &SGParams) -> Result<Vec<f64>> {
    p.validate()?;
    sg_weights_at(p.window, p.poly_order, p.window / 2)
}

fn sg_segment(x: &[f64], p: &SGParams, centre: &[f64]) -> Result<Vec<f64>> {
    let (n, w, h) = (x.len(), p.window, p.window / 2);
    if w > n {
        return Err(Error::Config(format!("SG window {w} exceeds segment length {n}")));
    }
    let mut out = vec![0.0; n];
    for i in h..n - h {
        out[i] = centre.iter().zip(&x[i - h..=i + h]).map(|(c, v)| c * v).sum();
    }
    // Edges: evaluate the polynomial fitted to the first / last full window.
    for i in 0..h {
        let wl = sg_weights_at(w, p.poly_order, i)?;
        out[i] = wl.iter().zip(&x[..w]).map(|(c, v)| c * v).sum();
        let j = n - 1 - i;
        let wr = sg_weights_at(w, p.poly_order, w - 1 - i)?;
        out[j] = wr.iter().zip(&x[n - w..]).map(|(c, v)| c * v).sum();
    }
    Ok(out)
}

fn per_segment<F>(s: &Spectrum, grid: &WavelengthGrid, mut f: F) -> Result<Spectrum>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if s.values.len() != grid.len() {
        return Err(Error::Shape(format!("spectrum {} has {} channels, grid {}", s.id, s.values.len(), grid.len())));
    }
    let mut out = Vec::with_capacity(s.values.len());
    for seg in grid.segments() {
        out.extend(f(&s.values[seg])?);
    }
    Ok(s.with_values(out))
}

/// Savitzky-Golay smoothing of each segment.
pub fn sg_filter(s: &Spectrum, p: &SGParams, grid: &WavelengthGrid) -> Result<Spectrum> {
    let centre = sg_coefficients(p)?;
    per_segment(s, grid, |x| sg_segment(x, p, &centre))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn window_bounds(i: usize, half: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(half), (i + half + 1).min(n))
}

/// Replaces channels deviating from the sliding median by more than
/// `threshold * MAD` with that median. Windows are truncated at the edges.
pub(crate) fn despike(x: &[f64], window: usize, threshold: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            let (lo, hi) = window_bounds(i, window / 2, n);
            buf.clear();
            buf.extend_from_slice(&x[lo..hi]);
            let med = median(&mut buf);
            for v in buf.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median(&mut buf);
            if (x[i] - med).abs() > threshold * mad {
                med
            } else {
                x[i]
            }
        })
        .collect()
}

/// Centred moving average, truncated one-sidedly at the edges.
pub(crate) fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = window_bounds(i, window / 2, n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Spike removal plus moving-average smoothing, per segment and iteration.
pub fn cotcat_like(s: &Spectrum, p: &CotcatLikeParams, grid: &WavelengthGrid) -> Result<Spectrum> {
    p.validate()?;
    per_segment(s, grid, |x| {
        if p.spike_window > x.len() || p.smooth_window > x.len() {
            return Err(Error::Config(format!("cotcat_like window exceeds segment length {}", x.len())));
        }
        let mut cur = x.to_vec();
        for _ in 0..p.iterations {
            cur = moving_average(&despike(&cur, p.spike_window, p.spike_threshold), p.smooth_window);
        }
        Ok(cur)
    })
}
