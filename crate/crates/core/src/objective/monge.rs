use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly weighted point cloud in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCloud {
    points: Vec<Vec<f64>>,
}

impl DiscreteCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Empty("point cloud".into()));
        };
        let d = first.len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::ShapeMismatch("points must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("point coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn from_1d(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCost {
    Absolute,
    Squared,
}

impl GroundCost {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            GroundCost::Absolute => (a - b).abs(),
            GroundCost::Squared => (a - b) * (a - b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MongeSolution {
    /// `assignment[i]` is the target index receiving source point `i`.
    pub assignment: Vec<usize>,
    /// Mean cost per point.
    pub cost: f64,
}

/// Mean cost of an arbitrary one-to-one assignment between 1-D clouds.
pub fn assignment_cost(
    source: &DiscreteCloud,
    target: &DiscreteCloud,
    assignment: &[usize],
    cost: GroundCost,
) -> Result<f64> {
    check_1d(source, target)?;
    let n = source.len();
    let mut seen = vec![false; n];
    if assignment.len() != n {
        return Err(Error::ShapeMismatch("assignment length differs from cloud size".into()));
    }
    for &j in assignment {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidArgument("assignment is not a permutation".into()));
        }
    }
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.eval(source.points[i][0], target.points[j][0]))
        .sum();
    Ok(total / n as f64)
}

fn check_1d(source: &DiscreteCloud, target: &DiscreteCloud) -> Result<()> {
    if source.dim() != 1 || target.dim() != 1 {
        return Err(Error::InvalidArgument("exact transport is implemented for 1-D clouds only".into()));
    }
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "clouds of {} and {} points",
            source.len(),
            target.len()
        )));
    }
    Ok(())
}

fn argsort(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let v: Vec<f64> = values.collect();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Optimal Monge map between equal-size 1-D clouds under a convex ground
/// cost: the k-th smallest source point goes to the k-th smallest target.
pub fn exact_monge_1d(source: &DiscreteCloud, target: &DiscreteCloud, cost: GroundCost) -> Result<MongeSolution> {
    check_1d(source, target)?;
    let si = argsort(source.points.iter().map(|p| p[0]));
    let ti = argsort(target.points.iter().map(|p| p[0]));
    let mut assignment = vec![0; source.len()];
    for (&s, &t) in si.iter().zip(&ti) {
        assignment[s] = t;
    }
    let cost = assignment_cost(source, target, &assignment, cost)?;
    Ok(MongeSolution { assignment, cost })
}

/// `W1` between two 1-D empirical measures, `∫ |F_a^{-1}(u) - F_b^{-1}(u)| du`.
/// The sample counts may differ.
pub fn empirical_w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("w1 needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        // Quantile levels are multiples of 1/na and 1/nb; compare in
        // integer units of 1/(na nb) to avoid drift.
        let ea = (i + 1) * nb;
        let eb = (j + 1) * na;
        let next = ea.min(eb);
        let du = next as f64 / (na * nb) as f64 - u;
        total += du * (a[i] - b[j]).abs();
        u = next as f64 / (na * nb) as f64;
        if ea == next {
            i += 1;
        }
        if eb == next {
            j += 1;
        }
    }
    Ok(total)
}
