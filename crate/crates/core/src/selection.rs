//! Choosing which k×k RSS fragments to expose as conditions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scenario::{RadioMap, Scenario};

/// A k×k window copied from a radio map; `origin` is (row, col) of its
/// top-left cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub origin: (usize, usize),
    pub size_k: usize,
    pub values_dbm: Vec<f32>,
}

impl Fragment {
    /// Copies the window at `origin` out of `map`.
    pub fn extract(map: &RadioMap, origin: (usize, usize), k: usize) -> Result<Self> {
        let n = map.grid_n;
        if k == 0 || origin.0 + k > n || origin.1 + k > n {
            return Err(Error::Selection(format!(
                "{k}x{k} window at {origin:?} does not fit a {n}x{n} map"
            )));
        }
        let values_dbm = (origin.0..origin.0 + k)
            .flat_map(|r| (origin.1..origin.1 + k).map(move |c| (r, c)))
            .map(|(r, c)| map.at(r, c))
            .collect();
        Ok(Self {
            origin,
            size_k: k,
            values_dbm,
        })
    }

    pub fn overlaps(&self, other: &Fragment) -> bool {
        let span = |a: usize, ka: usize, b: usize, kb: usize| a < b + kb && b < a + ka;
        span(self.origin.0, self.size_k, other.origin.0, other.size_k)
            && span(self.origin.1, self.size_k, other.origin.1, other.size_k)
    }
}

/// Cell rectangle `row0..row1` × `col0..col1` (end-exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Bounds {
    pub fn cells(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubareaRanking {
    pub subarea_index: usize,
    pub density: f64,
    pub bounds: Bounds,
}

/// Number of obstacles touching `bounds` plus the fraction of its cells
/// covered by at least one obstacle.
pub fn obstacle_density(scenario: &Scenario, bounds: Bounds) -> f64 {
    let touching = scenario
        .obstacles
        .iter()
        .filter(|o| {
            o.x0 < bounds.col1 && bounds.col0 <= o.x1 && o.y0 < bounds.row1 && bounds.row0 <= o.y1
        })
        .count();
    let covered = (bounds.row0..bounds.row1)
        .flat_map(|r| (bounds.col0..bounds.col1).map(move |c| (r, c)))
        .filter(|&(r, c)| scenario.obstacles.iter().any(|o| o.covers(c, r)))
        .count();
    touching as f64 + covered as f64 / bounds.cells() as f64
}

/// Side length (in subareas) of the uniform partition, validated.
fn partition_side(grid_n: usize, n_subareas: usize) -> Result<usize> {
    let side = (n_subareas as f64).sqrt().round() as usize;
    if n_subareas == 0 || side * side != n_subareas || !grid_n.is_multiple_of(side) {
        return Err(Error::Selection(format!(
            "{n_subareas} subareas do not tile a {grid_n}x{grid_n} grid uniformly"
        )));
    }
    Ok(side)
}

/// Every subarea with its density, densest first; ties keep ascending index.
pub fn rank_subareas(scenario: &Scenario, n_subareas: usize) -> Result<Vec<SubareaRanking>> {
    let side = partition_side(scenario.grid_n, n_subareas)?;
    let sub = scenario.grid_n / side;
    let mut ranking: Vec<SubareaRanking> = (0..n_subareas)
        .map(|i| {
            let (row0, col0) = ((i / side) * sub, (i % side) * sub);
            let bounds = Bounds {
                row0,
                col0,
                row1: row0 + sub,
                col1: col0 + sub,
            };
            SubareaRanking {
                subarea_index: i,
                density: obstacle_density(scenario, bounds),
                bounds,
            }
        })
        .collect();
    // Stable sort keeps ascending index among equal densities.
    ranking.sort_by(|a, b| b.density.total_cmp(&a.density));
    Ok(ranking)
}

/// Origin of the k×k window centred on `bounds`, shifted inward to fit.
pub fn centred_window(bounds: Bounds, k: usize, grid_n: usize) -> (usize, usize) {
    let place = |lo: usize, hi: usize| ((lo + (hi - lo) / 2).saturating_sub(k / 2)).min(grid_n - k);
    (
        place(bounds.row0, bounds.row1),
        place(bounds.col0, bounds.col1),
    )
}

/// Fragments centred in the `m` subareas with the highest obstacle density.
pub fn environment_aware_select(
    scenario: &Scenario,
    map: &RadioMap,
    n_subareas: usize,
    m: usize,
    k: usize,
) -> Result<Vec<Fragment>> {
    if m > n_subareas {
        return Err(Error::Selection(format!(
            "m = {m} exceeds {n_subareas} subareas"
        )));
    }
    if map.grid_n != scenario.grid_n || k == 0 || k > map.grid_n {
        return Err(Error::Selection(format!(
            "fragment size {k} invalid for a {}x{} map",
            map.grid_n, map.grid_n
        )));
    }
    rank_subareas(scenario, n_subareas)?
        .iter()
        .take(m)
        .map(|s| Fragment::extract(map, centred_window(s.bounds, k, map.grid_n), k))
        .collect()
}

/// `m` pairwise disjoint windows drawn uniformly by rejection sampling.
pub fn random_select(map: &RadioMap, m: usize, k: usize, seed: u64) -> Result<Vec<Fragment>> {
    let n = map.grid_n;
    if k == 0 || k > n || m * k * k > n * n {
        return Err(Error::Selection(format!(
            "{m} windows of {k}x{k} cannot fit a {n}x{n} map"
        )));
    }
    let mut rng = substream(seed, "selection");
    let mut chosen: Vec<Fragment> = Vec::with_capacity(m);
    let mut attempts = 0;
    while chosen.len() < m {
        if attempts == 10 * m * 100 {
            return Err(Error::Selection(format!(
                "placed only {} of {m} windows after {attempts} attempts",
                chosen.len()
            )));
        }
        attempts += 1;
        let origin = (rng.random_range(0..=n - k), rng.random_range(0..=n - k));
        let candidate = Fragment::extract(map, origin, k)?;
        if chosen.iter().all(|f| !f.overlaps(&candidate)) {
            chosen.push(candidate);
        }
    }
    Ok(chosen)
}

/// Fragments needed to expose `percent`% of the map's cells.
pub fn fragment_budget(percent: f64, grid_n: usize, k: usize) -> Result<usize> {
    if !(percent > 0.0 && percent <= 100.0) || k == 0 {
        return Err(Error::Configuration(format!(
            "budget {percent}% with k={k} is invalid"
        )));
    }
    let cells = (grid_n * grid_n) as f64;
    Ok((percent * cells / (100.0 * (k * k) as f64)).ceil() as usize)
}
