//! Covariate decomposition, grand-mean centering, pairwise stacking and
//! dyad subsampling.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;

use crate::data::{recode_role, CodingScheme, LongDataset, LongRow, Stage};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// A person's covariate split into deviations from their own mean and that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredSeries {
    pub within: Vec<f64>,
    pub aggregate: f64,
}

pub fn person_center(raw: &[f64]) -> Result<CenteredSeries> {
    if raw.is_empty() {
        return Err(Error::EmptySeries);
    }
    let aggregate = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(CenteredSeries {
        within: raw.iter().map(|x| x - aggregate).collect(),
        aggregate,
    })
}

pub fn grand_center(aggregates: &[f64]) -> Result<Vec<f64>> {
    if aggregates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = aggregates.iter().sum::<f64>() / aggregates.len() as f64;
    Ok(aggregates.iter().map(|a| a - mean).collect())
}

/// What `center_covariate` subtracted, for output metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringInfo {
    /// Mean of the person aggregates over the persons in the analyzed dataset.
    pub grand_mean: f64,
    pub n_persons: usize,
}

/// Fills the actor columns of a raw dataset: within-person deviations and
/// grand-mean-centered person means of the covariate.
pub fn center_covariate(data: &LongDataset) -> Result<(LongDataset, CenteringInfo)> {
    if data.stage() != Stage::Raw {
        return Err(Error::WrongStage { expected: "raw" });
    }
    // rows are sorted by (dyad, person, wave), so each person is a contiguous run
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let rows = data.rows();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].person_id != rows[start].person_id {
            if i > start {
                spans.push((start, i));
            }
            start = i;
        }
    }
    let mut series = Vec::with_capacity(spans.len());
    for &(a, b) in &spans {
        let raw: Vec<f64> = rows[a..b]
            .iter()
            .map(|r| {
                r.covariate.ok_or(Error::MissingColumn("rapport".into()))
            })
            .collect::<Result<_>>()?;
        series.push(person_center(&raw)?);
    }
    if series.is_empty() {
        return Ok((data.clone(), CenteringInfo { grand_mean: 0.0, n_persons: 0 }));
    }
    let aggregates: Vec<f64> = series.iter().map(|s| s.aggregate).collect();
    let centered = grand_center(&aggregates)?;
    let grand_mean = aggregates[0] - centered[0];

    let mut out = rows.to_vec();
    for ((&(a, b), s), agg) in spans.iter().zip(&series).zip(&centered) {
        for (row, w) in out[a..b].iter_mut().zip(&s.within) {
            row.actor_within = *w;
            row.actor_agg = *agg;
        }
    }
    let info = CenteringInfo {
        grand_mean,
        n_persons: spans.len(),
    };
    Ok((data.with_rows(out, Stage::Raw)?, info))
}

/// Copies each co-member's actor columns into the partner columns at the same wave.
pub fn pairwise_stack(data: &LongDataset) -> Result<LongDataset> {
    let mut actor: HashMap<(u32, u32, u32), (f64, f64)> = HashMap::with_capacity(data.len());
    for r in data.rows() {
        actor.insert((r.dyad_id, r.person_id, r.wave), (r.actor_within, r.actor_agg));
    }
    let mut partner_of: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for r in data.rows() {
        let m = members.entry(r.dyad_id).or_default();
        if !m.contains(&r.person_id) {
            m.push(r.person_id);
        }
    }
    for (dyad, m) in &members {
        if m.len() != 2 {
            return Err(Error::DyadNotPaired(*dyad));
        }
        partner_of.insert((*dyad, m[0]), m[1]);
        partner_of.insert((*dyad, m[1]), m[0]);
    }
    let mut out = data.rows().to_vec();
    for row in out.iter_mut() {
        let partner = partner_of[&(row.dyad_id, row.person_id)];
        let &(within, agg) = actor
            .get(&(row.dyad_id, partner, row.wave))
            .ok_or(Error::MissingPartnerWave {
                dyad: row.dyad_id,
                wave: row.wave,
            })?;
        row.partner_within = within;
        row.partner_agg = agg;
    }
    data.with_rows(out, Stage::Prepared)
}

/// Raw → prepared: person centering, grand centering, pairwise stacking, role coding.
pub fn prepare(data: &LongDataset, coding: CodingScheme) -> Result<(LongDataset, CenteringInfo)> {
    let (centered, info) = center_covariate(data)?;
    let stacked = pairwise_stack(&centered)?;
    Ok((recode_role(&stacked, coding), info))
}

/// Shifts prepared aggregates so they average zero over the persons present.
/// Returns the dataset and the shift removed.
pub fn recenter_aggregates(data: &LongDataset) -> Result<(LongDataset, f64)> {
    if data.stage() != Stage::Prepared {
        return Err(Error::WrongStage { expected: "prepared" });
    }
    let per_person: BTreeMap<u32, f64> = data.rows().iter().map(|r| (r.person_id, r.actor_agg)).collect();
    if per_person.is_empty() {
        return Ok((data.clone(), 0.0));
    }
    let shift = per_person.values().sum::<f64>() / per_person.len() as f64;
    let rows = data
        .rows()
        .iter()
        .map(|r| LongRow {
            actor_agg: r.actor_agg - shift,
            partner_agg: r.partner_agg - shift,
            ..r.clone()
        })
        .collect();
    Ok((data.with_rows(rows, Stage::Prepared)?, shift))
}

/// Keeps all rows of `n` dyads drawn uniformly without replacement.
pub fn subsample_dyads(data: &LongDataset, n: usize, seed: u64) -> Result<LongDataset> {
    let ids = data.dyad_ids();
    if n > ids.len() {
        return Err(Error::NotEnoughDyads {
            requested: n,
            available: ids.len(),
        });
    }
    let mut rng = rng::stream(seed, Domain::Subsample, 0);
    let mut picked: Vec<u32> = index::sample(&mut rng, ids.len(), n)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    let rows = data
        .rows()
        .iter()
        .filter(|r| picked.binary_search(&r.dyad_id).is_ok())
        .cloned()
        .collect();
    data.with_rows(rows, data.stage())
}
