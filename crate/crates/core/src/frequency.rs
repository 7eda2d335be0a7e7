//! Frequency-security constraints after the loss of the largest infeed.
//!
//! The three conditions are the RoCoF inertia floor, steady-state sufficiency
//! of frequency response, and the nadir condition. The nadir condition is a
//! rotated second-order cone in
//!
//! ```text
//! x1 = h/f0 - r_e*t_e/(4*df_max),   x2 = r_p,   y = (p_l - r_e)*sqrt(t_p/(4*df_max))
//! x1*x2 >= y^2,   x1, x2 >= 0
//! ```
//!
//! which the MILP path handles with tangent cuts and the conic path directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::FrequencyParams;

/// FR response is assumed to be held for two minutes.
pub const FR_HOLD_SECONDS: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrState {
    /// Post-loss system inertia (GWs).
    pub h: f64,
    /// EFR (GW).
    pub r_e: f64,
    /// PFR (GW).
    pub r_p: f64,
}

pub fn rocof_min_inertia(freq: &FrequencyParams) -> f64 {
    freq.p_l * freq.f0 / (2.0 * freq.rocof_max)
}

pub fn rocof_ok(state: &FrState, freq: &FrequencyParams) -> bool {
    state.h >= rocof_min_inertia(freq)
}

pub fn steady_state_ok(state: &FrState, freq: &FrequencyParams) -> bool {
    state.r_e + state.r_p >= freq.p_l
}

/// Coefficients mapping (h, r_e, r_p) onto the rotated-cone coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ConeMap {
    pub inv_f0: f64,
    /// t_e / (4 df_max)
    pub k_e: f64,
    /// sqrt(t_p / (4 df_max))
    pub k_y: f64,
    pub p_l: f64,
}

impl ConeMap {
    pub fn new(freq: &FrequencyParams) -> Self {
        Self {
            inv_f0: 1.0 / freq.f0,
            k_e: freq.t_e / (4.0 * freq.delta_f_max),
            k_y: (freq.t_p / (4.0 * freq.delta_f_max)).sqrt(),
            p_l: freq.p_l,
        }
    }

    /// (x1, x2, y)
    pub fn coords(&self, s: &FrState) -> (f64, f64, f64) {
        (
            s.h * self.inv_f0 - s.r_e * self.k_e,
            s.r_p,
            self.k_y * (self.p_l - s.r_e),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NadirStatus {
    Secure,
    Insecure,
    /// The inertia term `x1` is negative, so no amount of PFR secures the nadir.
    NegativeInertiaTerm,
}

pub fn nadir_status(state: &FrState, freq: &FrequencyParams) -> NadirStatus {
    let (x1, x2, y) = ConeMap::new(freq).coords(state);
    if x1 < 0.0 {
        return NadirStatus::NegativeInertiaTerm;
    }
    // r_e >= p_l leaves a nonpositive right-hand side
    let rhs = if y > 0.0 { y * y } else { 0.0 };
    if x1 * x2 >= rhs {
        NadirStatus::Secure
    } else {
        NadirStatus::Insecure
    }
}

pub fn nadir_ok(state: &FrState, freq: &FrequencyParams) -> bool {
    nadir_status(state, freq) == NadirStatus::Secure
}

/// Relative shortfall of the nadir condition, `max(0, (y^2 - x1*x2) / y^2)`,
/// or the absolute `-x1` when the inertia term is negative.
pub fn nadir_violation(state: &FrState, freq: &FrequencyParams) -> f64 {
    let (x1, x2, y) = ConeMap::new(freq).coords(state);
    if x1 < 0.0 {
        return -x1;
    }
    if y <= 0.0 {
        return 0.0;
    }
    ((y * y - x1 * x2) / (y * y)).max(0.0)
}

/// Inertia at which the nadir condition holds with equality (GWs).
pub fn min_nadir_inertia(r_e: f64, r_p: f64, freq: &FrequencyParams) -> f64 {
    let m = ConeMap::new(freq);
    let deficit = (freq.p_l - r_e).max(0.0);
    let x1 = if r_p > 0.0 {
        (m.k_y * deficit).powi(2) / r_p
    } else if deficit > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    (x1 + r_e * m.k_e) * freq.f0
}

fn ramp(t: f64, magnitude: f64, delivery: f64) -> f64 {
    magnitude * (t / delivery).min(1.0)
}

/// Integrates the undamped swing equation after the loss of `p_l` with linear
/// EFR/PFR ramps and returns the largest frequency drop (Hz) over the two
/// minute response window. Uses explicit trapezoidal steps of `dt` seconds.
pub fn swing_nadir_oracle(state: &FrState, freq: &FrequencyParams, dt: f64) -> Result<f64> {
    if !(state.h > 0.0) {
        return Err(Error::InvalidInput(
            "system inertia must be positive".into(),
        ));
    }
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::InvalidInput(
            "oracle step must lie in (0, 1 ms]".into(),
        ));
    }
    let gain = freq.f0 / (2.0 * state.h);
    let deficit = |t: f64| freq.p_l - ramp(t, state.r_e, freq.t_e) - ramp(t, state.r_p, freq.t_p);
    let steps = (FR_HOLD_SECONDS / dt).round() as usize;
    let mut df = 0.0_f64;
    let mut worst = 0.0_f64;
    let mut prev = deficit(0.0);
    for i in 1..=steps {
        let t = i as f64 * dt;
        let cur = deficit(t);
        df += 0.5 * dt * gain * (prev + cur);
        worst = worst.max(df);
        prev = cur;
    }
    Ok(worst)
}

/// Exact nadir of the piecewise-quadratic trajectory, by evaluating the
/// frequency drop at the ramp breakpoints and at every zero of the deficit.
pub fn analytic_nadir(state: &FrState, freq: &FrequencyParams) -> f64 {
    let integral = |t: f64, r: f64, tr: f64| {
        if t <= tr {
            r * t * t / (2.0 * tr)
        } else {
            r * (t - 0.5 * tr)
        }
    };
    let drop = |t: f64| {
        freq.f0 / (2.0 * state.h)
            * (freq.p_l * t - integral(t, state.r_e, freq.t_e) - integral(t, state.r_p, freq.t_p))
    };
    let mut candidates = vec![0.0, freq.t_e, freq.t_p, FR_HOLD_SECONDS];
    let slope1 = state.r_e / freq.t_e + state.r_p / freq.t_p;
    if slope1 > 0.0 {
        candidates.push(freq.p_l / slope1);
    }
    if state.r_p > 0.0 {
        candidates.push((freq.p_l - state.r_e) * freq.t_p / state.r_p);
    }
    candidates
        .into_iter()
        .filter(|t| (0.0..=FR_HOLD_SECONDS).contains(t))
        .map(drop)
        .fold(0.0, f64::max)
}

/// Linear inequality `a_h*h + a_e*r_e + a_p*r_p >= b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadirCut {
    pub a_h: f64,
    pub a_e: f64,
    pub a_p: f64,
    pub b: f64,
}

impl NadirCut {
    pub fn slack(&self, s: &FrState) -> f64 {
        self.a_h * s.h + self.a_e * s.r_e + self.a_p * s.r_p - self.b
    }

    pub fn admits(&self, s: &FrState) -> bool {
        self.slack(s) >= -1e-12
    }

    /// The `x1 >= 0` half-space.
    pub fn inertia_term(freq: &FrequencyParams) -> Self {
        let m = ConeMap::new(freq);
        Self {
            a_h: m.inv_f0,
            a_e: -m.k_e,
            a_p: 0.0,
            b: 0.0,
        }
    }

    /// Supporting half-space of the cone `||(2y, x1-x2)|| <= x1 + x2` whose
    /// normal is taken at cone coordinates `(x1, x2, y)`, `y > 0`. Every
    /// point of the cone satisfies it, and it is tangent at boundary points.
    fn from_coords(m: &ConeMap, x1: f64, x2: f64, y: f64) -> Option<Self> {
        if !(y > 0.0) {
            return None;
        }
        let norm = (4.0 * y * y + (x1 - x2).powi(2)).sqrt();
        let u = 2.0 * y / norm;
        let v = (x1 - x2) / norm;
        // (1-v) x1 + (1+v) x2 - 2u y >= 0
        Some(Self {
            a_h: (1.0 - v) * m.inv_f0,
            a_e: -(1.0 - v) * m.k_e + 2.0 * u * m.k_y,
            a_p: 1.0 + v,
            b: 2.0 * u * m.k_y * m.p_l,
        })
    }
}

/// Linearization point: the cut is tangent to the nadir boundary at
/// `(min_nadir_inertia(r_e, r_p), r_e, r_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPoint {
    pub r_e: f64,
    pub r_p: f64,
}

pub fn nadir_cuts(freq: &FrequencyParams, points: &[CutPoint]) -> Result<Vec<NadirCut>> {
    let m = ConeMap::new(freq);
    points
        .iter()
        .map(|pt| {
            if !(0.0..=freq.p_l).contains(&pt.r_e) {
                return Err(Error::InvalidInput(format!(
                    "linearization point r_e = {} outside [0, p_l]",
                    pt.r_e
                )));
            }
            if !(pt.r_p > 0.0) {
                return Err(Error::InvalidInput("reference r_p must be positive".into()));
            }
            let y = m.k_y * (freq.p_l - pt.r_e);
            Ok(NadirCut::from_coords(&m, y * y / pt.r_p, pt.r_p, y)
                .unwrap_or_else(|| NadirCut::inertia_term(freq)))
        })
        .collect()
}

/// Cuts at each `r_e` of a grid with a common reference PFR level.
pub fn nadir_cut_grid(
    freq: &FrequencyParams,
    re_points: &[f64],
    rp_reference: f64,
) -> Result<Vec<NadirCut>> {
    let points: Vec<CutPoint> = re_points
        .iter()
        .map(|&r_e| CutPoint {
            r_e,
            r_p: rp_reference,
        })
        .collect();
    nadir_cuts(freq, &points)
}

/// Tangent cuts whose cone-coordinate ratios `x1/x2` are log-spaced on
/// `[ratio_lo, ratio_hi]`.
pub fn nadir_cut_fan(
    freq: &FrequencyParams,
    count: usize,
    ratio_lo: f64,
    ratio_hi: f64,
) -> Vec<NadirCut> {
    let m = ConeMap::new(freq);
    (0..count)
        .filter_map(|i| {
            let s = if count == 1 {
                0.5
            } else {
                i as f64 / (count - 1) as f64
            };
            let ratio = (ratio_lo.ln() + s * (ratio_hi / ratio_lo).ln()).exp();
            // boundary point with x2 = 1: x1 = ratio, y = sqrt(ratio)
            NadirCut::from_coords(&m, ratio, 1.0, ratio.sqrt())
        })
        .collect()
}

/// Cut separating an insecure state from the nadir cone, if it is insecure.
pub fn separating_cut(state: &FrState, freq: &FrequencyParams) -> Option<NadirCut> {
    let m = ConeMap::new(freq);
    let (x1, x2, y) = m.coords(state);
    if x1 < 0.0 {
        return Some(NadirCut::inertia_term(freq));
    }
    if y > 0.0 && x1 * x2 < y * y {
        NadirCut::from_coords(&m, x1, x2, y)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingConstraint {
    Rocof,
    Nadir,
    SteadyState,
}

impl std::fmt::Display for BindingConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rocof => "rocof",
            Self::Nadir => "nadir",
            Self::SteadyState => "steady_state",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstgPoint {
    /// GW
    pub fr: f64,
    /// GW; `None` when the FR level cannot cover the loss.
    pub mstg: Option<f64>,
    pub binding: BindingConstraint,
}

/// Minimum system thermal generation needed to supply the inertia for a
/// single FR service of the given delivery time, converted through a
/// fleet-average inertia constant and MSG fraction.
pub fn mstg_curve(
    freq: &FrequencyParams,
    avg_inertia_constant: f64,
    msg_fraction: f64,
    fr_delivery_time: f64,
    fr_grid: &[f64],
) -> Result<Vec<MstgPoint>> {
    if !(avg_inertia_constant > 0.0) {
        return Err(Error::InvalidInput(
            "average inertia constant must be positive".into(),
        ));
    }
    if fr_grid.iter().any(|&fr| fr < 0.0) {
        return Err(Error::InvalidInput("FR levels must be nonnegative".into()));
    }
    let single = FrequencyParams {
        t_p: fr_delivery_time,
        ..*freq
    };
    let floor = rocof_min_inertia(freq);
    let to_gen = |h: f64| msg_fraction * h / avg_inertia_constant;
    Ok(fr_grid
        .iter()
        .map(|&fr| {
            if fr < freq.p_l {
                return MstgPoint {
                    fr,
                    mstg: None,
                    binding: BindingConstraint::SteadyState,
                };
            }
            let nadir_h = min_nadir_inertia(0.0, fr, &single);
            let (h, binding) = if nadir_h > floor {
                (nadir_h, BindingConstraint::Nadir)
            } else {
                (floor, BindingConstraint::Rocof)
            };
            MstgPoint {
                fr,
                mstg: Some(to_gen(h)),
                binding,
            }
        })
        .collect())
}

/// Writes `fr_gw,mstg_gw,binding_constraint`; infeasible levels leave `mstg_gw` empty.
pub fn write_mstg_csv<W: Write>(writer: W, points: &[MstgPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fr_gw", "mstg_gw", "binding_constraint"])?;
    for p in points {
        w.write_record([
            format!("{:.6}", p.fr),
            p.mstg.map(|v| format!("{v:.6}")).unwrap_or_default(),
            p.binding.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
