//! The connection-type x stage-set sweep driver.
//!
//! Every grid cell is one leave-one-subject-out evaluation. Rows land in a
//! fixed CSV schema (encoder, type, stages, accuracy, macro_f1, seconds)
//! with deterministic ordering; aggregate views average the rounded row
//! metrics per type and per stage set. A sidecar state file keyed by cell
//! fingerprint lets interrupted sweeps resume without recomputing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loso::{loso_evaluate, EvalReport};
use super::trainer::TrainOptions;
use crate::attx::{enumerate_connection_types, ConnectionType};
use crate::data::SegmentDataset;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::model::{fnv1a, PipelineConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub encoders: Vec<EncoderKind>,
    /// Connection types to sweep; `None` entries are filled from the full
    /// enumeration for the dataset's modality count.
    pub connection_types: Option<Vec<ConnectionType>>,
    pub stage_sets: Vec<Vec<usize>>,
    /// Include the no-sharing feature-fusion baseline row per encoder.
    #[serde(default = "default_true")]
    pub include_baseline: bool,
}

fn default_true() -> bool {
    true
}

impl SweepGrid {
    /// Singleton and multi-stage sets over stages 1-3.
    pub fn standard_stage_sets() -> Vec<Vec<usize>> {
        vec![
            vec![1],
            vec![2],
            vec![3],
            vec![1, 2],
            vec![1, 3],
            vec![2, 3],
            vec![1, 2, 3],
        ]
    }

    pub fn resolve_types(&self, modality_count: usize) -> Result<Vec<ConnectionType>> {
        match &self.connection_types {
            Some(types) => {
                for ty in types {
                    ty.validate_for(modality_count)?;
                }
                Ok(types.clone())
            }
            None => enumerate_connection_types(modality_count),
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub encoder: String,
    /// Connection type string, or "none" for the baseline row.
    pub connection: String,
    /// Stage set like "[2]" or "[1,2,3]"; "[]" for the baseline.
    pub stages: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SweepState {
    rows: BTreeMap<String, SweepRow>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub complete: bool,
    pub best: Option<PipelineConfig>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub workers: usize,
    /// Wall-clock budget; exceeding it flags the table incomplete.
    pub max_seconds: Option<f64>,
    /// Record per-cell wall time in the CSV. Off, the seconds column is
    /// empty and rerunning an identical sweep reproduces the CSV
    /// byte-for-byte.
    pub record_timing: bool,
    pub resume: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            workers: 1,
            max_seconds: None,
            record_timing: true,
            resume: false,
        }
    }
}

fn stages_string(stages: &[usize]) -> String {
    let inner: Vec<String> = stages.iter().map(|s| s.to_string()).collect();
    format!("[{}]", inner.join(","))
}

fn cell_config(
    base: &PipelineConfig,
    encoder: EncoderKind,
    cell: Option<(&ConnectionType, &[usize])>,
) -> PipelineConfig {
    let mut config = base.clone();
    config.encoder = encoder;
    match cell {
        Some((ty, stages)) => {
            config.connection_type = Some(ty.clone());
            config.attx_stages = stages.to_vec();
        }
        None => {
            config.connection_type = None;
            config.attx_stages = Vec::new();
        }
    }
    config
}

fn cell_fingerprint(config: &PipelineConfig, train_opts: &TrainOptions) -> String {
    let blob = format!(
        "{}|{}",
        serde_json::to_string(config).expect("config serializes"),
        serde_json::to_string(train_opts).expect("options serialize"),
    );
    format!("{:016x}", fnv1a(blob.as_bytes()))
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Run the grid. Each cell is a full LOSO evaluation; the per-fold worker
/// pool lives inside `loso_evaluate`.
pub fn run_sweep(
    base: &PipelineConfig,
    train_opts: &TrainOptions,
    grid: &SweepGrid,
    dataset: &SegmentDataset,
    opts: &SweepOptions,
    state_path: Option<&Path>,
) -> Result<SweepOutcome> {
    let types = grid.resolve_types(dataset.modality_names.len())?;
    let mut state = SweepState::default();
    if opts.resume {
        if let Some(path) = state_path {
            if path.exists() {
                let bytes = std::fs::read(path)?;
                state = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::format(format!("sweep state: {e}")))?;
            }
        }
    }

    // Deterministic cell order: per encoder, the baseline first, then
    // types x stage sets in enumeration order.
    let mut cells: Vec<(PipelineConfig, String, String)> = Vec::new();
    for &encoder in &grid.encoders {
        if grid.include_baseline {
            cells.push((
                cell_config(base, encoder, None),
                "none".to_string(),
                "[]".to_string(),
            ));
        }
        for ty in &types {
            for stages in &grid.stage_sets {
                cells.push((
                    cell_config(base, encoder, Some((ty, stages))),
                    ty.to_string(),
                    stages_string(stages),
                ));
            }
        }
    }

    let started = std::time::Instant::now();
    let mut rows = Vec::with_capacity(cells.len());
    let mut complete = true;
    for (config, connection, stages) in &cells {
        let fingerprint = cell_fingerprint(config, train_opts);
        if let Some(row) = state.rows.get(&fingerprint) {
            rows.push(row.clone());
            continue;
        }
        if let Some(budget) = opts.max_seconds {
            if started.elapsed().as_secs_f64() > budget {
                complete = false;
                break;
            }
        }
        let report: EvalReport = loso_evaluate(config, train_opts, dataset, opts.workers)?;
        let row = SweepRow {
            encoder: config.encoder.to_string(),
            connection: connection.clone(),
            stages: stages.clone(),
            accuracy: round6(report.mean_accuracy),
            macro_f1: round6(report.mean_macro_f1),
            seconds: opts.record_timing.then_some(report.seconds),
        };
        state.rows.insert(fingerprint, row.clone());
        if let Some(path) = state_path {
            let bytes = serde_json::to_vec_pretty(&state)
                .map_err(|e| Error::format(format!("sweep state: {e}")))?;
            std::fs::write(path, bytes)?;
        }
        rows.push(row);
    }

    let best = select_best(&rows).map(|row| {
        let encoder: EncoderKind = row.encoder.parse().expect("encoder round-trips");
        let cell = if row.connection == "none" {
            None
        } else {
            Some((
                row.connection.parse::<ConnectionType>().expect("type round-trips"),
                parse_stages(&row.stages),
            ))
        };
        cell_config(
            base,
            encoder,
            cell.as_ref().map(|(ty, stages)| (ty, stages.as_slice())),
        )
    });

    Ok(SweepOutcome {
        rows,
        complete,
        best,
    })
}

fn parse_stages(s: &str) -> Vec<usize> {
    s.trim_matches(['[', ']'])
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| t.trim().parse().expect("stage digits"))
        .collect()
}

/// Best cell: maximum accuracy, ties broken by macro-F1, then by the
/// lexicographic (encoder, type, stages) string.
pub fn select_best(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().min_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .unwrap()
            .then(b.macro_f1.partial_cmp(&a.macro_f1).unwrap())
            .then_with(|| config_string(a).cmp(&config_string(b)))
    })
}

fn config_string(row: &SweepRow) -> String {
    format!("{}|{}|{}", row.encoder, row.connection, row.stages)
}

/// Main report CSV in the fixed schema.
pub fn write_rows_csv(rows: &[SweepRow], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "encoder,type,stages,accuracy,macro_f1,seconds")?;
    for r in rows {
        let seconds = r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},\"{}\",{:.6},{:.6},{}",
            r.encoder, r.connection, r.stages, r.accuracy, r.macro_f1, seconds
        )?;
    }
    Ok(())
}

/// Mean metrics per connection type and per stage set, computed from the
/// (rounded) row values so a recount from the CSV matches exactly.
pub fn aggregate_rows(rows: &[SweepRow]) -> (Vec<(String, f64, f64, usize)>, Vec<(String, f64, f64, usize)>) {
    let mut by_type: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut by_stages: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let t = by_type.entry(r.connection.clone()).or_insert((0.0, 0.0, 0));
        t.0 += r.accuracy;
        t.1 += r.macro_f1;
        t.2 += 1;
        let s = by_stages.entry(r.stages.clone()).or_insert((0.0, 0.0, 0));
        s.0 += r.accuracy;
        s.1 += r.macro_f1;
        s.2 += 1;
    }
    let fold = |m: BTreeMap<String, (f64, f64, usize)>| {
        m.into_iter()
            .map(|(k, (a, f, n))| (k, a / n as f64, f / n as f64, n))
            .collect()
    };
    (fold(by_type), fold(by_stages))
}

pub fn write_aggregate_csv(
    aggregates: &[(String, f64, f64, usize)],
    key_name: &str,
    mut w: impl std::io::Write,
) -> Result<()> {
    writeln!(w, "{key_name},mean_accuracy,mean_macro_f1,rows")?;
    for (key, acc, f1, n) in aggregates {
        writeln!(w, "\"{key}\",{acc:.6},{f1:.6},{n}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(enc: &str, ty: &str, stages: &str, acc: f64, f1: f64) -> SweepRow {
        SweepRow {
            encoder: enc.into(),
            connection: ty.into(),
            stages: stages.into(),
            accuracy: acc,
            macro_f1: f1,
            seconds: None,
        }
    }

    #[test]
    fn best_prefers_accuracy_then_f1_then_string() {
        let rows = vec![
            row("vgg", "1->2", "[1]", 0.8, 0.7),
            row("vgg", "2->1", "[2]", 0.9, 0.6),
            row("vgg", "1<->2", "[3]", 0.9, 0.8),
        ];
        assert_eq!(select_best(&rows).unwrap().connection, "1<->2");
        let tied = vec![
            row("vgg", "2->1", "[2]", 0.9, 0.8),
            row("vgg", "1->2", "[2]", 0.9, 0.8),
        ];
        assert_eq!(select_best(&tied).unwrap().connection, "1->2");
    }

    #[test]
    fn aggregates_are_plain_means_of_rows() {
        let rows = vec![
            row("vgg", "1->2", "[1]", 0.8, 0.7),
            row("vgg", "1->2", "[2]", 0.6, 0.5),
            row("vgg", "2->1", "[1]", 1.0, 0.9),
        ];
        let (by_type, by_stages) = aggregate_rows(&rows);
        let t12 = by_type.iter().find(|(k, ..)| k == "1->2").unwrap();
        assert!((t12.1 - 0.7).abs() < 1e-12);
        assert!((t12.2 - 0.6).abs() < 1e-12);
        let s1 = by_stages.iter().find(|(k, ..)| k == "[1]").unwrap();
        assert!((s1.1 - 0.9).abs() < 1e-12);
        assert_eq!(s1.3, 2);
    }

    #[test]
    fn stage_strings_round_trip() {
        assert_eq!(stages_string(&[1, 2, 3]), "[1,2,3]");
        assert_eq!(parse_stages("[1,2,3]"), vec![1, 2, 3]);
        assert_eq!(parse_stages("[]"), Vec::<usize>::new());
    }

    #[test]
    fn standard_grid_size_for_two_modalities() {
        // 3 connection types x 7 stage sets per encoder, plus a baseline row.
        let grid = SweepGrid {
            encoders: vec![crate::encoders::EncoderKind::Vgg, crate::encoders::EncoderKind::Resnet],
            connection_types: None,
            stage_sets: SweepGrid::standard_stage_sets(),
            include_baseline: true,
        };
        assert_eq!(grid.stage_sets.len(), 7);
        assert_eq!(grid.resolve_types(2).unwrap().len(), 3);
        let cells_per_encoder = 1 + 3 * 7;
        assert_eq!(grid.encoders.len() * cells_per_encoder, 44);
    }
}
