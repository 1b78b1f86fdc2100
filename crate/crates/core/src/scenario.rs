//! Synthetic network scenarios and their ground-truth radio maps.
//!
//! Propagation is a 2-D blockage model: free-space path loss, a
//! regime-dependent excess path-loss exponent, and a scalar penetration loss
//! for every obstacle the straight Tx→Rx segment passes through. The best
//! transmitter wins at every cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Indoor,
    Outdoor,
}

impl Regime {
    pub fn cell_size_m(self) -> f64 {
        match self {
            Regime::Indoor => 0.5,
            Regime::Outdoor => 10.0,
        }
    }

    pub fn freq_ghz(self) -> f64 {
        match self {
            Regime::Indoor => 60.0,
            Regime::Outdoor => 3.7,
        }
    }

    pub fn default_tx_power_dbm(self) -> f32 {
        match self {
            Regime::Indoor => 20.0,
            Regime::Outdoor => 40.0,
        }
    }

    /// Path-loss exponent in excess of free space (2).
    pub fn excess_exponent(self) -> f64 {
        match self {
            Regime::Indoor => 0.6,
            Regime::Outdoor => 1.0,
        }
    }

    /// Largest obstacle count a generated scenario may request.
    pub fn max_obstacles(self) -> usize {
        match self {
            Regime::Indoor => 12,
            Regime::Outdoor => 10,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Regime::Indoor => 0,
            Regime::Outdoor => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Regime::Indoor),
            1 => Ok(Regime::Outdoor),
            other => Err(Error::Format(format!("unknown regime code {other}"))),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Regime::Indoor),
            "outdoor" => Ok(Regime::Outdoor),
            other => Err(Error::Configuration(format!("unknown regime {other:?}"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Indoor => "indoor",
            Regime::Outdoor => "outdoor",
        })
    }
}

/// Axis-aligned obstacle covering cells `x0..=x1` × `y0..=y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub penetration_loss_db: f32,
}

impl Obstacle {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// Transmitter cell; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxLocation {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u32,
    pub regime: Regime,
    pub grid_n: usize,
    pub cell_size_m: f64,
    pub freq_ghz: f64,
    pub obstacles: Vec<Obstacle>,
    pub tx_list: Vec<TxLocation>,
    pub tx_power_dbm: f32,
}

impl Scenario {
    /// An empty scenario at the regime's canonical cell size and frequency.
    pub fn new(regime: Regime, grid_n: usize, tx_list: Vec<TxLocation>) -> Self {
        Self {
            id: 0,
            regime,
            grid_n,
            cell_size_m: regime.cell_size_m(),
            freq_ghz: regime.freq_ghz(),
            obstacles: Vec::new(),
            tx_list,
            tx_power_dbm: regime.default_tx_power_dbm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid_n;
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Configuration(format!(
                "grid_n {n} is not a power of two"
            )));
        }
        if self.tx_list.is_empty() {
            return Err(Error::Configuration("scenario has no transmitter".into()));
        }
        if let Some(tx) = self.tx_list.iter().find(|t| t.x >= n || t.y >= n) {
            return Err(Error::Configuration(format!(
                "transmitter {tx:?} outside {n}x{n} grid"
            )));
        }
        for o in &self.obstacles {
            let inside = o.x0 <= o.x1 && o.y0 <= o.y1 && o.x1 < n && o.y1 < n;
            let loss_ok = o.penetration_loss_db.is_finite() && o.penetration_loss_db >= 0.0;
            if !inside || !loss_ok {
                return Err(Error::Configuration(format!("invalid obstacle {o:?}")));
            }
        }
        if !(self.cell_size_m > 0.0 && self.freq_ghz > 0.0 && self.tx_power_dbm.is_finite()) {
            return Err(Error::Configuration(
                "non-physical cell size, frequency or power".into(),
            ));
        }
        Ok(())
    }
}

/// Knobs for [`random_scenario`]; every range is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub grid_n: usize,
    pub obstacle_count: (usize, usize),
    pub obstacle_side_cells: (usize, usize),
    pub tx_count: (usize, usize),
    pub penetration_loss_db: (f32, f32),
    pub tx_power_dbm: f32,
}

impl ScenarioParams {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Indoor => Self {
                grid_n: 32,
                obstacle_count: (3, 12),
                obstacle_side_cells: (1, 4),
                tx_count: (1, 2),
                penetration_loss_db: (15.0, 40.0),
                tx_power_dbm: regime.default_tx_power_dbm(),
            },
            Regime::Outdoor => Self {
                grid_n: 32,
                obstacle_count: (4, 10),
                obstacle_side_cells: (3, 8),
                tx_count: (1, 2),
                penetration_loss_db: (10.0, 25.0),
                tx_power_dbm: regime.default_tx_power_dbm(),
            },
        }
    }

    pub fn validate(&self, regime: Regime) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        let (omin, omax) = self.obstacle_count;
        let (smin, smax) = self.obstacle_side_cells;
        let (tmin, tmax) = self.tx_count;
        let (lmin, lmax) = self.penetration_loss_db;
        if self.grid_n == 0 || !self.grid_n.is_power_of_two() {
            return bad(format!("grid_n {} is not a power of two", self.grid_n));
        }
        if omin > omax || omax > regime.max_obstacles() {
            return bad(format!(
                "obstacle count {omin}..={omax} outside 0..={} for {regime}",
                regime.max_obstacles()
            ));
        }
        if smin == 0 || smin > smax || smax > self.grid_n {
            return bad(format!(
                "obstacle side {smin}..={smax} invalid for grid {}",
                self.grid_n
            ));
        }
        if tmin < 1 || tmin > tmax || tmax > 2 {
            return bad(format!("transmitter count {tmin}..={tmax} outside 1..=2"));
        }
        if !(lmin.is_finite() && lmax.is_finite() && 0.0 <= lmin && lmin <= lmax) {
            return bad(format!("penetration loss range {lmin}..={lmax} invalid"));
        }
        if !self.tx_power_dbm.is_finite() {
            return bad("transmit power must be finite".into());
        }
        Ok(())
    }
}

/// Draws a reproducible scenario from `seed`.
pub fn random_scenario(regime: Regime, seed: u64, params: &ScenarioParams) -> Result<Scenario> {
    params.validate(regime)?;
    let n = params.grid_n;
    let mut rng = substream(seed, "scenario");
    let count = rng.random_range(params.obstacle_count.0..=params.obstacle_count.1);
    let (smin, smax) = params.obstacle_side_cells;
    let (lmin, lmax) = params.penetration_loss_db;
    let obstacles: Vec<Obstacle> = (0..count)
        .map(|_| {
            let w = rng.random_range(smin..=smax);
            let h = rng.random_range(smin..=smax);
            let x0 = rng.random_range(0..=n - w);
            let y0 = rng.random_range(0..=n - h);
            let loss = if lmin == lmax {
                lmin
            } else {
                rng.random_range(lmin..=lmax)
            };
            Obstacle {
                x0,
                y0,
                x1: x0 + w - 1,
                y1: y0 + h - 1,
                penetration_loss_db: loss,
            }
        })
        .collect();

    let tx_count = rng.random_range(params.tx_count.0..=params.tx_count.1);
    let tx_list = (0..tx_count)
        .map(|_| {
            // Prefer free cells; a fully covered grid falls back to any cell.
            let mut cell = TxLocation { x: 0, y: 0 };
            for _ in 0..1000 {
                cell = TxLocation {
                    x: rng.random_range(0..n),
                    y: rng.random_range(0..n),
                };
                if !obstacles.iter().any(|o| o.covers(cell.x, cell.y)) {
                    break;
                }
            }
            cell
        })
        .collect();

    let scenario = Scenario {
        id: 0,
        regime,
        grid_n: n,
        cell_size_m: regime.cell_size_m(),
        freq_ghz: regime.freq_ghz(),
        obstacles,
        tx_list,
        tx_power_dbm: params.tx_power_dbm,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// An obstacle crossed by a Tx→Rx segment. Penetration is counted once per
/// obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    pub obstacle: usize,
    pub count: u32,
}

/// Obstacles whose bounding box the segment between the Tx and Rx cell
/// centres passes through with positive length. `rx` is `(x, y)`.
pub fn crossings(scenario: &Scenario, tx: TxLocation, rx: (usize, usize)) -> Vec<Crossing> {
    if (tx.x, tx.y) == rx {
        return Vec::new();
    }
    let p0 = (tx.x as f64 + 0.5, tx.y as f64 + 0.5);
    let d = (rx.0 as f64 - tx.x as f64, rx.1 as f64 - tx.y as f64);
    scenario
        .obstacles
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let bx = (o.x0 as f64, o.x1 as f64 + 1.0);
            let by = (o.y0 as f64, o.y1 as f64 + 1.0);
            segment_overlap(p0, d, bx, by) > 1e-12
        })
        .map(|(i, _)| Crossing {
            obstacle: i,
            count: 1,
        })
        .collect()
}

/// Liang–Barsky clip of `p0 + t·d`, `t ∈ [0, 1]`, against a closed box;
/// returns the clipped parameter length (0 when disjoint).
fn segment_overlap(p0: (f64, f64), d: (f64, f64), bx: (f64, f64), by: (f64, f64)) -> f64 {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let edges = [
        (-d.0, p0.0 - bx.0),
        (d.0, bx.1 - p0.0),
        (-d.1, p0.1 - by.0),
        (d.1, by.1 - p0.1),
    ];
    for (p, q) in edges {
        if p == 0.0 {
            if q < 0.0 {
                return 0.0;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t1 - t0).max(0.0)
}

/// Free-space path loss in dB for a distance in metres.
pub fn fspl_db(distance_m: f64, freq_ghz: f64) -> f64 {
    32.45 + 20.0 * (distance_m / 1000.0).log10() + 20.0 * (freq_ghz * 1000.0).log10()
}

/// RSS in dBm at cell `rx = (x, y)`: the strongest transmitter's contribution.
pub fn compute_rss(scenario: &Scenario, rx: (usize, usize)) -> f64 {
    let cell = scenario.cell_size_m;
    let n_extra = scenario.regime.excess_exponent();
    scenario
        .tx_list
        .iter()
        .map(|&tx| {
            let dx = rx.0 as f64 - tx.x as f64;
            let dy = rx.1 as f64 - tx.y as f64;
            let d = ((dx * dx + dy * dy).sqrt() * cell).max(cell / 2.0);
            // The excess term starts at the reference distance of one cell.
            let excess = n_extra * 10.0 * (d.max(cell) / cell).log10();
            let penetration: f64 = crossings(scenario, tx, rx)
                .iter()
                .map(|c| scenario.obstacles[c.obstacle].penetration_loss_db as f64 * c.count as f64)
                .sum();
            scenario.tx_power_dbm as f64 - fspl_db(d, scenario.freq_ghz) - penetration - excess
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `grid_n × grid_n` RSS field in dBm, row-major (row = y, column = x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMap {
    pub grid_n: usize,
    pub values_dbm: Vec<f32>,
    pub scenario_id: u32,
    pub tx_list: Vec<TxLocation>,
}

impl RadioMap {
    pub fn new(
        grid_n: usize,
        values_dbm: Vec<f32>,
        scenario_id: u32,
        tx_list: Vec<TxLocation>,
    ) -> Result<Self> {
        if values_dbm.len() != grid_n * grid_n {
            return Err(Error::Dimension(format!(
                "{} values for a {grid_n}x{grid_n} map",
                values_dbm.len()
            )));
        }
        Ok(Self {
            grid_n,
            values_dbm,
            scenario_id,
            tx_list,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values_dbm[row * self.grid_n + col]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values_dbm
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

pub fn generate_map(scenario: &Scenario) -> RadioMap {
    let n = scenario.grid_n;
    let values = (0..n)
        .flat_map(|y| (0..n).map(move |x| (x, y)))
        .map(|rx| compute_rss(scenario, rx) as f32)
        .collect();
    RadioMap {
        grid_n: n,
        values_dbm: values,
        scenario_id: scenario.id,
        tx_list: scenario.tx_list.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(regime: Regime, n: usize, tx: (usize, usize)) -> Scenario {
        Scenario::new(regime, n, vec![TxLocation { x: tx.0, y: tx.1 }])
    }

    fn wall(x0: usize, y0: usize, x1: usize, y1: usize, loss: f32) -> Obstacle {
        Obstacle {
            x0,
            y0,
            x1,
            y1,
            penetration_loss_db: loss,
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let p = ScenarioParams::for_regime(Regime::Indoor);
        assert_eq!(
            random_scenario(Regime::Indoor, 42, &p).unwrap(),
            random_scenario(Regime::Indoor, 42, &p).unwrap()
        );
        assert_ne!(
            random_scenario(Regime::Indoor, 42, &p).unwrap(),
            random_scenario(Regime::Indoor, 43, &p).unwrap()
        );
    }

    #[test]
    fn zero_obstacles_allowed() {
        let mut p = ScenarioParams::for_regime(Regime::Outdoor);
        p.obstacle_count = (0, 0);
        let s = random_scenario(Regime::Outdoor, 1, &p).unwrap();
        assert!(s.obstacles.is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ScenarioParams::for_regime(Regime::Indoor);
        p.obstacle_count = (3, 13);
        assert!(matches!(
            random_scenario(Regime::Indoor, 0, &p),
            Err(Error::Configuration(_))
        ));
        let mut p = ScenarioParams::for_regime(Regime::Outdoor);
        p.obstacle_count = (4, 11);
        assert!(random_scenario(Regime::Outdoor, 0, &p).is_err());
        let mut p = ScenarioParams::for_regime(Regime::Indoor);
        p.tx_count = (0, 1);
        assert!(random_scenario(Regime::Indoor, 0, &p).is_err());
        p.tx_count = (1, 3);
        assert!(random_scenario(Regime::Indoor, 0, &p).is_err());
        let mut p = ScenarioParams::for_regime(Regime::Indoor);
        p.grid_n = 24;
        assert!(random_scenario(Regime::Indoor, 0, &p).is_err());
    }

    #[test]
    fn crossing_cases() {
        let mut s = empty(Regime::Indoor, 5, (0, 2));
        s.obstacles.push(wall(2, 0, 2, 4, 20.0));
        assert!(crossings(&s, s.tx_list[0], (0, 2)).is_empty());
        assert_eq!(
            crossings(&s, s.tx_list[0], (4, 2)),
            vec![Crossing {
                obstacle: 0,
                count: 1
            }]
        );
        assert!(crossings(&s, s.tx_list[0], (1, 2)).is_empty());
        assert!(crossings(&s, s.tx_list[0], (0, 3)).is_empty());
    }

    #[test]
    fn corner_touch_is_not_a_crossing() {
        let mut s = empty(Regime::Indoor, 4, (0, 0));
        // Box [1,2]x[0,1]; the diagonal through (1,1) only touches its corner.
        s.obstacles.push(wall(1, 0, 1, 0, 20.0));
        assert!(crossings(&s, s.tx_list[0], (2, 2)).is_empty());
    }

    #[test]
    fn fspl_at_one_metre_60ghz() {
        let expected = 32.45 + 20.0 * 0.001f64.log10() + 20.0 * 60000f64.log10();
        assert!((fspl_db(1.0, 60.0) - expected).abs() < 1e-12);
        assert!((fspl_db(1.0, 60.0) - 68.0).abs() < 0.1);
    }

    #[test]
    fn rss_at_tx_cell() {
        let s = empty(Regime::Indoor, 8, (3, 3));
        let expected = 20.0 - fspl_db(0.25, 60.0);
        assert!((compute_rss(&s, (3, 3)) - expected).abs() < 1e-12);
    }

    #[test]
    fn obstacle_subtracts_its_loss() {
        let clear = empty(Regime::Indoor, 8, (0, 4));
        let mut blocked = clear.clone();
        blocked.obstacles.push(wall(4, 2, 4, 6, 20.0));
        let a = compute_rss(&clear, (7, 4));
        let b = compute_rss(&blocked, (7, 4));
        assert!((a - b - 20.0).abs() < 1e-12);
    }

    #[test]
    fn centred_map_is_rotation_symmetric_about_tx() {
        for regime in [Regime::Indoor, Regime::Outdoor] {
            let (n, c) = (32usize, 16i64);
            let m = generate_map(&empty(regime, n, (16, 16)));
            for y in 0..n as i64 {
                for x in 0..n as i64 {
                    let (dx, dy) = (x - c, y - c);
                    // 90° rotation about the Tx cell.
                    let (rx, ry) = (c - dy, c + dx);
                    if (0..n as i64).contains(&rx) && (0..n as i64).contains(&ry) {
                        assert_eq!(m.at(y as usize, x as usize), m.at(ry as usize, rx as usize));
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_along_clear_axes() {
        let m = generate_map(&empty(Regime::Outdoor, 32, (10, 5)));
        let row: Vec<f32> = (10..32).map(|x| m.at(5, x)).collect();
        assert!(row.windows(2).all(|w| w[1] <= w[0]));
        let col: Vec<f32> = (0..=5).rev().map(|y| m.at(y, 10)).collect();
        assert!(col.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn never_exceeds_tx_power() {
        let p = ScenarioParams::for_regime(Regime::Outdoor);
        for seed in 0..20 {
            let s = random_scenario(Regime::Outdoor, seed, &p).unwrap();
            let m = generate_map(&s);
            assert!(m
                .values_dbm
                .iter()
                .all(|&v| v.is_finite() && v <= s.tx_power_dbm));
        }
    }
}
