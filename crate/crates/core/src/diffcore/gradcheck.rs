//! Central finite-difference gradient checking.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Coordinates whose estimates at `step` and `step / 2` disagree by more
    /// than this relative amount sit on a kink and are skipped.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-4,
            kink_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport, offset: usize) {
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst_coordinate = other.worst_coordinate.map(|c| c + offset);
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], cfg: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut point = x.to_vec();
    let mut diff = |point: &mut Vec<f64>, i: usize, h: f64| {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(point);
        point[i] = orig - h;
        let down = f(point);
        point[i] = orig;
        (up - down) / (2.0 * h)
    };
    let mut report = GradCheckReport::default();
    for i in 0..x.len() {
        let coarse = diff(&mut point, i, cfg.step);
        let err = relative_error(analytic[i], coarse, cfg.floor);
        if err > cfg.kink_tolerance {
            let fine = diff(&mut point, i, cfg.step / 2.0);
            if relative_error(coarse, fine, cfg.floor) > cfg.kink_tolerance {
                report.skipped += 1;
                continue;
            }
        }
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_coordinate = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_is_exact() {
        let w = [0.3, -1.2, 2.5];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 4.0;
        let r = grad_check(f, &[1.0, 2.0, -3.0], &w, &GradCheckConfig::default());
        assert!(r.max_relative_error < 1e-7);
        assert_eq!((r.checked, r.skipped), (3, 0));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = grad_check(f, &[1.0], &[2.5], &GradCheckConfig::default());
        assert!(r.max_relative_error > 0.1);
    }

    #[test]
    fn kink_is_skipped() {
        let f = |x: &[f64]| x[0].abs();
        let r = grad_check(f, &[3e-5], &[1.0], &GradCheckConfig::default());
        assert_eq!((r.checked, r.skipped), (0, 1));
    }
}
