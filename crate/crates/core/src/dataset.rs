//! Collections of (scenario, radio map) pairs and the "RMG1" container.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scenario::{
    generate_map, random_scenario, Obstacle, RadioMap, Regime, Scenario, ScenarioParams, TxLocation,
};

pub const DATASET_MAGIC: &[u8; 4] = b"RMG1";

// Upper bounds applied while decoding untrusted files.
const MAX_GRID: usize = 4096;
const MAX_ITEMS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub scenario: Scenario,
    pub map: RadioMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub regime: Regime,
    pub grid_n: usize,
    pub cell_size_m: f64,
    pub freq_ghz: f64,
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub records: Vec<Record>,
}

/// Synthesizes `count` scenarios with their maps; a pure function of its
/// arguments.
pub fn build_dataset(
    regime: Regime,
    count: usize,
    seed: u64,
    params: &ScenarioParams,
) -> Result<DatasetFile> {
    if count == 0 {
        return Err(Error::Configuration(
            "dataset count must be at least 1".into(),
        ));
    }
    let mut seeds = substream(seed, "scenario");
    let records = (0..count)
        .map(|i| {
            let mut scenario = random_scenario(regime, seeds.random(), params)?;
            scenario.id = i as u32;
            let map = generate_map(&scenario);
            Ok(Record { scenario, map })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetFile::from_records(records)
}

impl DatasetFile {
    /// Wraps records sharing one regime and grid, computing global bounds.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Configuration("dataset has no records".into()))?;
        let (regime, grid_n) = (first.scenario.regime, first.scenario.grid_n);
        let (cell_size_m, freq_ghz) = (first.scenario.cell_size_m, first.scenario.freq_ghz);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &records {
            let s = &r.scenario;
            if s.regime != regime || s.grid_n != grid_n || r.map.grid_n != grid_n {
                return Err(Error::Configuration(
                    "records mix regimes or grid sizes".into(),
                ));
            }
            let (a, b) = r.map.min_max();
            lo = lo.min(a as f64);
            hi = hi.max(b as f64);
        }
        Ok(Self {
            regime,
            grid_n,
            cell_size_m,
            freq_ghz,
            min_dbm: lo,
            max_dbm: hi,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Training records and held-out records (the last 20% by index).
    pub fn split(&self) -> (&[Record], &[Record]) {
        let held = self.records.len() / 5;
        self.records.split_at(self.records.len() - held)
    }

    pub fn maps(&self) -> Vec<RadioMap> {
        self.records.iter().map(|r| r.map.clone()).collect()
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = Writer(w);
        w.bytes(DATASET_MAGIC)?;
        w.u32(self.regime.code())?;
        w.count(self.grid_n)?;
        w.f64(self.cell_size_m)?;
        w.f64(self.freq_ghz)?;
        w.count(self.records.len())?;
        w.f64(self.min_dbm)?;
        w.f64(self.max_dbm)?;
        for r in &self.records {
            let s = &r.scenario;
            w.index(s.id as usize)?;
            w.f32(s.tx_power_dbm)?;
            w.index(s.obstacles.len())?;
            for o in &s.obstacles {
                for v in [o.x0, o.y0, o.x1, o.y1] {
                    w.index(v)?;
                }
                w.f32(o.penetration_loss_db)?;
            }
            w.index(s.tx_list.len())?;
            for t in &s.tx_list {
                w.index(t.x)?;
                w.index(t.y)?;
            }
            for &v in &r.map.values_dbm {
                w.f32(v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(DATASET_MAGIC)?;
        let regime = Regime::from_code(r.u32()?)?;
        let grid_n = r.count(MAX_GRID)?;
        let cell_size_m = r.f64()?;
        let freq_ghz = r.f64()?;
        let count = r.count(MAX_ITEMS)?;
        let min_dbm = r.f64()?;
        let max_dbm = r.f64()?;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let id = r.index()? as u32;
            let tx_power_dbm = r.f32()?;
            let n_obs = r.index()?;
            if n_obs > MAX_ITEMS {
                return Err(Error::Format(format!("{n_obs} obstacles")));
            }
            let obstacles = (0..n_obs)
                .map(|_| {
                    Ok(Obstacle {
                        x0: r.index()?,
                        y0: r.index()?,
                        x1: r.index()?,
                        y1: r.index()?,
                        penetration_loss_db: r.f32()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n_tx = r.index()?;
            if n_tx > MAX_ITEMS {
                return Err(Error::Format(format!("{n_tx} transmitters")));
            }
            let tx_list = (0..n_tx)
                .map(|_| {
                    Ok(TxLocation {
                        x: r.index()?,
                        y: r.index()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let values = (0..grid_n * grid_n)
                .map(|_| r.f32())
                .collect::<Result<Vec<_>>>()?;
            let scenario = Scenario {
                id,
                regime,
                grid_n,
                cell_size_m,
                freq_ghz,
                obstacles,
                tx_list: tx_list.clone(),
                tx_power_dbm,
            };
            scenario
                .validate()
                .map_err(|e| Error::Format(format!("record {id}: {e}")))?;
            let map = RadioMap::new(grid_n, values, id, tx_list)?;
            records.push(Record { scenario, map });
        }
        r.expect_eof()?;
        Ok(Self {
            regime,
            grid_n,
            cell_size_m,
            freq_ghz,
            min_dbm,
            max_dbm,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
