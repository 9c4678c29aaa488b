//! Per-step episode traces as CSV.
//!
//! Columns: `step_index, elapsed_s, status`, then six columns for each of the
//! five vehicle slots (`id, lane, intention, p, v, a`; empty when the slot is
//! unused). Rollout traces append the agent's decision: action, validity,
//! controller terms, reward and Q-values. Floats use the shortest
//! representation that parses back to the same value.

use std::io::{Read, Write};

use thiserror::Error;

use crate::control::N_ACTIONS;
use crate::sim::{Intention, Status, StepOutcome, VehicleState, MAX_OTHER_VEHICLES};

pub const VEHICLE_SLOTS: usize = MAX_OTHER_VEHICLES + 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Format { row: usize, message: String },
}

/// The agent's decision that produced a step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub action: usize,
    pub valid: bool,
    /// Controller output before clamping.
    pub request: f64,
    pub p_term: f64,
    pub sliding_term: Option<f64>,
    pub reward: f64,
    pub q_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step_index: usize,
    pub elapsed: f64,
    pub status: Status,
    pub vehicles: Vec<VehicleState>,
    pub agent: Option<AgentStep>,
}

impl TraceRow {
    pub fn from_outcome(outcome: &StepOutcome, agent: Option<AgentStep>) -> Self {
        Self {
            step_index: outcome.step_index,
            elapsed: outcome.elapsed,
            status: outcome.status,
            vehicles: outcome.states.clone(),
            agent,
        }
    }
}

pub fn header(with_agent: bool) -> Vec<String> {
    let mut h: Vec<String> = ["step_index", "elapsed_s", "status"].iter().map(|s| s.to_string()).collect();
    for k in 0..VEHICLE_SLOTS {
        for f in ["id", "lane", "intention", "p", "v", "a"] {
            h.push(format!("v{k}_{f}"));
        }
    }
    if with_agent {
        for f in ["action", "valid", "request", "p_term", "sm_term", "reward"] {
            h.push(f.into());
        }
        for a in 0..N_ACTIONS {
            h.push(format!("q{a}"));
        }
    }
    h
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    with_agent: bool,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(writer: W, with_agent: bool) -> Result<Self, TraceError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        inner.write_record(header(with_agent))?;
        Ok(Self { inner, with_agent })
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<(), TraceError> {
        let mut rec: Vec<String> = vec![row.step_index.to_string(), row.elapsed.to_string(), row.status.as_str().into()];
        for k in 0..VEHICLE_SLOTS {
            match row.vehicles.get(k) {
                Some(v) => rec.extend([
                    v.id.to_string(),
                    v.lane.to_string(),
                    v.intention.as_str().to_string(),
                    v.position.to_string(),
                    v.velocity.to_string(),
                    v.acceleration.to_string(),
                ]),
                None => rec.extend(std::iter::repeat(String::new()).take(6)),
            }
        }
        if self.with_agent {
            match &row.agent {
                Some(a) => {
                    rec.push(a.action.to_string());
                    rec.push(u8::from(a.valid).to_string());
                    rec.push(a.request.to_string());
                    rec.push(a.p_term.to_string());
                    rec.push(a.sliding_term.map(|x| x.to_string()).unwrap_or_default());
                    rec.push(a.reward.to_string());
                    for i in 0..N_ACTIONS {
                        rec.push(a.q_values.get(i).map(|x| x.to_string()).unwrap_or_default());
                    }
                }
                None => rec.extend(std::iter::repeat(String::new()).take(6 + N_ACTIONS)),
            }
        }
        self.inner.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| TraceError::Io(e.into_error()))
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, row: usize) -> Result<&'a str, TraceError> {
    rec.get(i).ok_or_else(|| TraceError::Format { row, message: format!("missing column {i}") })
}

fn num<T: std::str::FromStr>(s: &str, row: usize, what: &str) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Format { row, message: format!("bad {what} `{s}`") })
}

/// Parse a trace written by [`TraceWriter`].
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let with_agent = rdr.headers()?.len() > 3 + 6 * VEHICLE_SLOTS;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let status_s = field(&rec, 2, r)?;
        let status =
            Status::parse(status_s).ok_or_else(|| TraceError::Format { row: r, message: format!("bad status `{status_s}`") })?;
        let mut vehicles = Vec::new();
        for k in 0..VEHICLE_SLOTS {
            let base = 3 + 6 * k;
            let id = field(&rec, base, r)?;
            if id.is_empty() {
                continue;
            }
            let intention_s = field(&rec, base + 2, r)?;
            vehicles.push(VehicleState {
                id: num(id, r, "id")?,
                lane: num(field(&rec, base + 1, r)?, r, "lane")?,
                intention: Intention::parse(intention_s)
                    .ok_or_else(|| TraceError::Format { row: r, message: format!("bad intention `{intention_s}`") })?,
                position: num(field(&rec, base + 3, r)?, r, "p")?,
                velocity: num(field(&rec, base + 4, r)?, r, "v")?,
                acceleration: num(field(&rec, base + 5, r)?, r, "a")?,
                intersection_start: f64::NAN,
            });
        }
        let base = 3 + 6 * VEHICLE_SLOTS;
        let agent = if with_agent && !field(&rec, base, r)?.is_empty() {
            let sm = field(&rec, base + 4, r)?;
            let mut q_values = Vec::new();
            for i in 0..N_ACTIONS {
                let s = field(&rec, base + 6 + i, r)?;
                if !s.is_empty() {
                    q_values.push(num(s, r, "q")?);
                }
            }
            Some(AgentStep {
                action: num(field(&rec, base, r)?, r, "action")?,
                valid: field(&rec, base + 1, r)? == "1",
                request: num(field(&rec, base + 2, r)?, r, "request")?,
                p_term: num(field(&rec, base + 3, r)?, r, "p_term")?,
                sliding_term: if sm.is_empty() { None } else { Some(num(sm, r, "sm_term")?) },
                reward: num(field(&rec, base + 5, r)?, r, "reward")?,
                q_values,
            })
        } else {
            None
        };
        rows.push(TraceRow {
            step_index: num(field(&rec, 0, r)?, r, "step_index")?,
            elapsed: num(field(&rec, 1, r)?, r, "elapsed_s")?,
            status,
            vehicles,
            agent,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControllerGains;
    use crate::sim::{EpisodeConfig, SimParams, Simulator};

    #[test]
    fn sim_trace_round_trips() {
        let cfg = EpisodeConfig { seed: 3, n_other_vehicles: 3, params: SimParams::default() };
        let (mut sim, first) = Simulator::reset(&cfg, &ControllerGains::default()).unwrap();
        let mut rows = vec![TraceRow::from_outcome(&first, None)];
        while !sim.status().is_terminal() {
            rows.push(TraceRow::from_outcome(&sim.step(1.3).unwrap(), None));
        }
        let mut w = TraceWriter::new(Vec::new(), false).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(text.starts_with("step_index,elapsed_s,status,v0_id"));
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.step_index, b.step_index);
            assert_eq!(a.elapsed.to_bits(), b.elapsed.to_bits());
            assert_eq!(a.status, b.status);
            for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
                assert_eq!(va.position.to_bits(), vb.position.to_bits());
                assert_eq!(va.acceleration.to_bits(), vb.acceleration.to_bits());
                assert_eq!(va.intention, vb.intention);
            }
        }
    }

    #[test]
    fn agent_columns_round_trip() {
        let cfg = EpisodeConfig { seed: 4, n_other_vehicles: 1, params: SimParams::default() };
        let (_, first) = Simulator::reset(&cfg, &ControllerGains::default()).unwrap();
        let agent = AgentStep {
            action: 2,
            valid: false,
            request: -1.0 / 3.0,
            p_term: 0.1,
            sliding_term: None,
            reward: -1.000_000_1,
            q_values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        };
        let rows = vec![TraceRow::from_outcome(&first, None), TraceRow::from_outcome(&first, Some(agent.clone()))];
        let mut w = TraceWriter::new(Vec::new(), true).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let back = read_trace(w.finish().unwrap().as_slice()).unwrap();
        assert_eq!(back[0].agent, None);
        assert_eq!(back[1].agent.as_ref(), Some(&agent));
    }
}
