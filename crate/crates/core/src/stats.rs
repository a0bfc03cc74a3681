//! Execution statistics shared by the graph engine and the baselines, so
//! comparison reports can line the two up side by side.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct StageStat {
    pub name: String,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_rows: Option<u64>,
}

/// Per-run instrumentation: stage timings plus exact counters. Counters are
/// counted, never sampled.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunStats {
    pub engine: String,
    pub stages: Vec<StageStat>,
    pub counters: BTreeMap<String, u64>,
    /// Visit events when tracing was requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
}

impl RunStats {
    pub fn new(engine: impl Into<String>) -> RunStats {
        RunStats {
            engine: engine.into(),
            ..RunStats::default()
        }
    }

    pub fn stage(&mut self, name: impl Into<String>, started: Instant, rows: Option<u64>) {
        self.stages.push(StageStat {
            name: name.into(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            output_rows: rows,
        });
    }

    pub fn set(&mut self, counter: &str, value: u64) {
        self.counters.insert(counter.to_owned(), value);
    }

    pub fn bump_max(&mut self, counter: &str, value: u64) {
        let e = self.counters.entry(counter.to_owned()).or_insert(0);
        *e = (*e).max(value);
    }

    pub fn get(&self, counter: &str) -> u64 {
        self.counters.get(counter).copied().unwrap_or(0)
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_ms).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("stats serialize")
    }
}
