//! Genie-aided baselines: slotted ALOHA, ADRA and centralized round robin.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Decision;
use crate::error::{Error, Result};

/// Slotted ALOHA with the optimal access probability `1/n`.
pub fn sa_decide<R: Rng + ?Sized>(active_users: usize, rng: &mut R) -> Decision {
    debug_assert!(active_users >= 1);
    Decision::from(rng.gen::<f64>() * (active_users as f64) < 1.0)
}

/// Access probability and AoI threshold for one active-user count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdraParams {
    pub access_prob: f64,
    pub aoi_threshold: f64,
}

impl AdraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.access_prob > 0.0 && self.access_prob <= 1.0) {
            return Err(Error::InvalidParams(format!("ADRA access probability {} outside (0, 1]", self.access_prob)));
        }
        if self.aoi_threshold.is_nan() || self.aoi_threshold < 1.0 {
            return Err(Error::InvalidParams(format!("ADRA AoI threshold {} below 1", self.aoi_threshold)));
        }
        Ok(())
    }
}

/// Age-dependent random access: transmit with probability `p(n)` once the
/// user's AoI has reached `θ(n)`.
pub fn adra_decide<R: Rng + ?Sized>(aoi: u64, params: &AdraParams, rng: &mut R) -> Decision {
    if (aoi as f64) < params.aoi_threshold {
        return Decision::Silent;
    }
    Decision::from(rng.gen::<f64>() < params.access_prob)
}

/// Round-robin genie: the user allowed to transmit in slot `t`.
pub fn rr_schedule(active_ids: &[usize], t: u64) -> Option<usize> {
    if active_ids.is_empty() {
        return None;
    }
    Some(active_ids[(t % active_ids.len() as u64) as usize])
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct AdraRow {
    n: usize,
    access_prob: f64,
    aoi_threshold: f64,
}

/// ADRA parameters tabulated per active-user count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AdraRow>", into = "Vec<AdraRow>")]
pub struct AdraTable {
    entries: BTreeMap<usize, AdraParams>,
}

impl TryFrom<Vec<AdraRow>> for AdraTable {
    type Error = Error;

    fn try_from(rows: Vec<AdraRow>) -> Result<Self> {
        let mut table = AdraTable { entries: BTreeMap::new() };
        for row in rows {
            table.insert(row.n, AdraParams { access_prob: row.access_prob, aoi_threshold: row.aoi_threshold })?;
        }
        Ok(table)
    }
}

impl From<AdraTable> for Vec<AdraRow> {
    fn from(table: AdraTable) -> Self {
        table
            .entries
            .into_iter()
            .map(|(n, p)| AdraRow { n, access_prob: p.access_prob, aoi_threshold: p.aoi_threshold })
            .collect()
    }
}

const BUILTIN_TABLE: &str = include_str!("../../data/adra_table.csv");

impl AdraTable {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// Table shipped with the crate, produced offline by the ADRA sweep.
    pub fn builtin() -> Self {
        Self::read_csv(BUILTIN_TABLE.as_bytes()).expect("bundled ADRA table is valid")
    }

    pub fn insert(&mut self, n: usize, params: AdraParams) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidParams("ADRA table rows start at n = 1".into()));
        }
        params.validate()?;
        self.entries.insert(n, params);
        Ok(())
    }

    pub fn get(&self, n: usize) -> Result<&AdraParams> {
        self.entries.get(&n).ok_or(Error::MissingAdraEntry(n))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &AdraParams)> {
        self.entries.iter().map(|(&n, p)| (n, p))
    }

    /// Reads `n,access_prob,aoi_threshold` rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<AdraRow>, _>>()?;
        Self::try_from(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (n, p) in self.iter() {
            wtr.serialize(AdraRow { n, access_prob: p.access_prob, aoi_threshold: p.aoi_threshold })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl Default for AdraTable {
    fn default() -> Self {
        Self::builtin()
    }
}
