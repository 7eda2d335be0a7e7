//! SOC-dependent calendar capacity fade and its two-line linear approximation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::EvFleetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// %/h
    pub a1: f64,
    /// %/h
    pub a2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Shoulder SOC separating the two linear cuts.
    pub omega: f64,
    /// £ per % of capacity fade, per vehicle.
    pub c_d: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            a1: 5.70e-4,
            a2: 5.70e-5,
            alpha1: 2.76e-5,
            alpha2: 4.29e-5,
            beta1: 1.88e-4,
            beta2: -7.76e-5,
            omega: 0.76,
            c_d: 1500.0,
        }
    }
}

impl DegradationParams {
    /// SOC at which the two linear cuts intersect.
    pub fn crossover(&self) -> f64 {
        (self.beta2 - self.alpha2) / (self.alpha1 - self.beta1)
    }

    pub fn validate(&self, soc_min: f64, soc_max: f64) -> Result<()> {
        if !(self.a1 > 0.0 && self.a2 > 0.0) {
            return Err(Error::InvalidInput("a1 and a2 must be positive".into()));
        }
        let x = self.crossover();
        if !(x > soc_min && x < soc_max) {
            return Err(Error::InvalidInput(format!(
                "linear cuts intersect at SOC {x:.4}, outside ({soc_min}, {soc_max})"
            )));
        }
        if !(self.omega > soc_min && self.omega < soc_max) {
            return Err(Error::InvalidInput(
                "omega must lie inside the SOC range".into(),
            ));
        }
        if !(self.c_d >= 0.0) {
            return Err(Error::InvalidInput("c_d must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Capacity fade rate in %/h.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FadeRate {
    pub q_l: f64,
}

pub fn fade_cubic(soc: f64, p: &DegradationParams) -> FadeRate {
    FadeRate {
        q_l: p.a1 * (soc - 0.5).powi(3) + p.a2,
    }
}

/// Value attained by minimizing `q_l` subject to both linear cuts.
pub fn fade_linear(soc: f64, p: &DegradationParams) -> FadeRate {
    FadeRate {
        q_l: (p.alpha1 * soc + p.alpha2).max(p.beta1 * soc + p.beta2),
    }
}

pub fn fleet_fade_cost(q_l: f64, duration_h: f64, n_ev: u64, c_d: f64) -> f64 {
    q_l * duration_h * n_ev as f64 * c_d
}

/// Fade per vehicle over one workday on the road, assuming the SOC sits at
/// `c_out` for the first half of the trip and at `c_in` for the second.
pub fn workday_fade(fleet: &EvFleetSpec, p: &DegradationParams) -> f64 {
    let hours = (fleet.t_in - fleet.t_out).num_seconds() as f64 / 3600.0;
    0.5 * hours * (fade_cubic(fleet.c_out, p).q_l + fade_cubic(fleet.c_in, p).q_l)
}

/// SOC at which the cubic fade is halfway between its values at `lo` and `hi`.
pub fn shoulder_soc(p: &DegradationParams, lo: f64, hi: f64) -> f64 {
    let target = 0.5 * (fade_cubic(lo, p).q_l + fade_cubic(hi, p).q_l);
    // the cubic is increasing, so bisection is enough
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if fade_cubic(m, p).q_l < target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Least-squares refit of the two cuts to the cubic on `[lo, omega]` and
/// `[omega, hi]`. Returns a copy of `p` with new alpha/beta coefficients.
pub fn refit_linear_cuts(
    p: &DegradationParams,
    lo: f64,
    hi: f64,
    samples: usize,
) -> DegradationParams {
    let fit = |a: f64, b: f64| {
        let n = samples.max(2);
        let xs: Vec<f64> = (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| fade_cubic(x, p).q_l).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    };
    let (alpha1, alpha2) = fit(lo, p.omega);
    let (beta1, beta2) = fit(p.omega, hi);
    DegradationParams {
        alpha1,
        alpha2,
        beta1,
        beta2,
        ..*p
    }
}

/// Full equivalent cycles: discharge throughput over usable capacity.
pub fn full_equivalent_cycles(discharge_gwh: f64, usable_capacity_gwh: f64) -> f64 {
    if usable_capacity_gwh <= 0.0 {
        0.0
    } else {
        discharge_gwh / usable_capacity_gwh
    }
}
