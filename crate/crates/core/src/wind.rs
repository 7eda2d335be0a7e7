//! Wind realizations and quantile scenario trees.
//!
//! The wind model is a first-order autoregression on a latent Gaussian
//! variable mapped through a logistic transform onto `[0, installed_capacity]`.
//! Conditional quantiles of the latent process are available in closed form,
//! which is what makes the branch-at-root scenario tree cheap to build.

use std::io::Write;

use chrono::{Duration, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Logistic map from the latent variable to normalized output in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticTransform {
    /// Latent value mapped to 50 % output.
    pub center: f64,
    /// Latent distance of one logistic unit.
    pub scale: f64,
}

impl Default for LogisticTransform {
    fn default() -> Self {
        Self {
            center: 0.57,
            scale: 1.0,
        }
    }
}

impl LogisticTransform {
    pub fn apply(&self, z: f64) -> f64 {
        1.0 / (1.0 + (-(z - self.center) / self.scale).exp())
    }

    /// Latent value producing normalized output `y`; `y` is clamped away from 0 and 1.
    pub fn inverse(&self, y: f64) -> f64 {
        let y = y.clamp(1e-9, 1.0 - 1e-9);
        self.center + self.scale * (y / (1.0 - y)).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindModel {
    /// GW
    pub installed_capacity: f64,
    /// Per half-hour step.
    pub ar_coefficient: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub transform: LogisticTransform,
}

impl WindModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.installed_capacity >= 0.0) {
            return Err(Error::InvalidInput(
                "wind capacity must be nonnegative".into(),
            ));
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::InvalidInput(
                "AR coefficient must satisfy |phi| < 1 for stationarity".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || !(self.transform.scale > 0.0) {
            return Err(Error::InvalidInput(
                "noise std must be nonnegative and transform scale positive".into(),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the stationary latent distribution.
    pub fn stationary_std(&self) -> f64 {
        self.noise_std / (1.0 - self.ar_coefficient * self.ar_coefficient).sqrt()
    }

    pub fn power_of_latent(&self, z: f64) -> f64 {
        self.installed_capacity * self.transform.apply(z)
    }

    pub fn latent_of_power(&self, power: f64) -> f64 {
        if self.installed_capacity <= 0.0 {
            return self.transform.center;
        }
        self.transform.inverse(power / self.installed_capacity)
    }

    /// Mean and standard deviation of the latent variable `steps` ahead of `z`.
    pub fn conditional_latent(&self, z: f64, steps: u32) -> (f64, f64) {
        let phi = self.ar_coefficient;
        let decay = phi.powi(steps as i32);
        let var = if steps == 0 {
            0.0
        } else {
            self.noise_std * self.noise_std * (1.0 - decay * decay) / (1.0 - phi * phi)
        };
        (decay * z, var.sqrt())
    }
}

/// Samples a realized wind path starting from a draw of the stationary latent
/// distribution.
pub fn sample_wind_path(model: &WindModel, seed: u64, steps: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = model.stationary_std() * Distribution::<f64>::sample(&StandardNormal, &mut rng);
    sample_path_with(model, &mut rng, z0, steps)
}

/// Samples a realized wind path from an explicit initial latent state.
pub fn sample_wind_path_from(
    model: &WindModel,
    seed: u64,
    steps: usize,
    initial_latent: f64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_path_with(model, &mut rng, initial_latent, steps)
}

fn sample_path_with(
    model: &WindModel,
    rng: &mut ChaCha8Rng,
    z0: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    model.validate()?;
    if steps == 0 {
        return Err(Error::InvalidInput(
            "wind path needs at least one step".into(),
        ));
    }
    let mut z = z0;
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        path.push(model.power_of_latent(z));
        let eps: f64 = StandardNormal.sample(rng);
        z = model.ar_coefficient * z + model.noise_std * eps;
    }
    Ok(path)
}

/// Writes a realized path as `step_index,time_iso8601,wind_gw`.
pub fn write_wind_csv<W: Write>(
    writer: W,
    start: NaiveDateTime,
    step_hours: f64,
    path: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step_index", "time_iso8601", "wind_gw"])?;
    for (i, value) in path.iter().enumerate() {
        let t = start + hours(step_hours * i as f64);
        w.write_record([
            i.to_string(),
            t.format("%Y-%m-%dT%H:%M:%S").to_string(),
            format!("{value:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn hours(h: f64) -> Duration {
    Duration::milliseconds((h * 3_600_000.0).round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Duration covered by this node (h).
    pub delta_tau: f64,
    pub t_ab: NaiveDateTime,
    pub pi: f64,
    /// GW
    pub wind_available: f64,
    /// Index of the root child heading this node's branch; `None` for the root.
    pub branch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub nodes: Vec<TreeNode>,
    pub quantiles: Vec<f64>,
    pub horizon: f64,
}

impl ScenarioTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(move |n| n.parent == Some(id))
    }

    /// Ancestors of `id`, nearest first, excluding `id` itself.
    pub fn ancestors(&self, id: usize) -> Ancestors<'_> {
        Ancestors {
            tree: self,
            next: self.nodes[id].parent,
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        let mut has_child = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                has_child[p] = true;
            }
        }
        self.nodes.iter().filter(move |n| !has_child[n.id])
    }

    /// Checks the structural invariants: single root with unit probability,
    /// topological order, probability conservation, and time consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if self.nodes.is_empty() {
            return fail("empty tree".into());
        }
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 || self.nodes[0].parent.is_some() {
            return fail(format!(
                "expected exactly one root at index 0, found {roots}"
            ));
        }
        if (self.nodes[0].pi - 1.0).abs() > 1e-12 {
            return fail("root probability must be 1".into());
        }
        let mut child_mass = vec![0.0; self.nodes.len()];
        let mut has_child = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if n.delta_tau <= 0.0 {
                return fail(format!("node {} has nonpositive duration", n.id));
            }
            if let Some(p) = n.parent {
                if p >= n.id {
                    return fail(format!("node {} precedes its parent {p}", n.id));
                }
                let parent = &self.nodes[p];
                if n.t_ab != parent.t_ab + hours(parent.delta_tau) {
                    return fail(format!("node {} time is inconsistent with parent", n.id));
                }
                child_mass[p] += n.pi;
                has_child[p] = true;
            }
        }
        for n in &self.nodes {
            if has_child[n.id] && (child_mass[n.id] - n.pi).abs() > 1e-9 {
                return fail(format!(
                    "children of node {} do not conserve probability",
                    n.id
                ));
            }
        }
        let leaf_mass: f64 = self.leaves().map(|n| n.pi).sum();
        if (leaf_mass - 1.0).abs() > 1e-9 {
            return fail(format!("leaf probability sums to {leaf_mass}"));
        }
        Ok(())
    }
}

pub struct Ancestors<'a> {
    tree: &'a ScenarioTree,
    next: Option<usize>,
}

impl<'a> Iterator for Ancestors<'a> {
    type Item = &'a TreeNode;

    fn next(&mut self) -> Option<Self::Item> {
        let id = self.next?;
        let node = &self.tree.nodes[id];
        self.next = node.parent;
        Some(node)
    }
}

/// Probability mass of each quantile child under the midpoint rule: child `k`
/// owns the interval between the midpoints to its neighbours, and the extreme
/// children absorb the tails.
pub fn midpoint_weights(quantiles: &[f64]) -> Vec<f64> {
    let k = quantiles.len();
    (0..k)
        .map(|i| {
            let lo = if i == 0 {
                0.0
            } else {
                0.5 * (quantiles[i - 1] + quantiles[i])
            };
            let hi = if i + 1 == k {
                1.0
            } else {
                0.5 * (quantiles[i] + quantiles[i + 1])
            };
            hi - lo
        })
        .collect()
}

/// Builds a tree that branches at the root only. Each root child heads a
/// non-branching path that follows the conditional quantile trajectory of the
/// AR model at its level.
pub fn build_tree(
    model: &WindModel,
    current_wind: f64,
    t_now: NaiveDateTime,
    quantiles: &[f64],
    horizon: f64,
    step: f64,
) -> Result<ScenarioTree> {
    model.validate()?;
    if quantiles.is_empty() {
        return Err(Error::InvalidInput("quantile list is empty".into()));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput("tree step must be positive".into()));
    }
    if quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidInput("quantiles must lie in (0, 1)".into()));
    }
    if quantiles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "quantiles must be strictly increasing".into(),
        ));
    }
    let ratio = horizon / step;
    if horizon < 0.0 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(
            "horizon must be a nonnegative multiple of step".into(),
        ));
    }
    let stages = ratio.round() as usize;

    let z0 = model.latent_of_power(current_wind);
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let weights = midpoint_weights(quantiles);

    let mut nodes = Vec::with_capacity(1 + quantiles.len() * stages);
    nodes.push(TreeNode {
        id: 0,
        parent: None,
        depth: 0,
        delta_tau: step,
        t_ab: t_now,
        pi: 1.0,
        wind_available: current_wind.clamp(0.0, model.installed_capacity),
        branch: None,
    });
    if stages > 0 {
        for (k, (&q, &w)) in quantiles.iter().zip(&weights).enumerate() {
            let score = std_normal.inverse_cdf(q);
            let mut parent = 0;
            for depth in 1..=stages {
                let (mean, sd) = model.conditional_latent(z0, depth as u32);
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    parent: Some(parent),
                    depth,
                    delta_tau: step,
                    t_ab: t_now + hours(step * depth as f64),
                    pi: if quantiles.len() == 1 { 1.0 } else { w },
                    wind_available: model.power_of_latent(mean + score * sd),
                    branch: Some(k),
                });
                parent = id;
            }
        }
    }
    Ok(ScenarioTree {
        nodes,
        quantiles: quantiles.to_vec(),
        horizon,
    })
}
