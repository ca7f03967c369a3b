//! Ablation grids: one shared dataset and seed list, only the model variant
//! changes between rows.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::AsoKind;
use crate::scalar::Scalar;
use crate::train::{self, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Summarizer kinds under the full cell.
    Aso,
    /// LSTM and GRU replacements against the full cell.
    Baseline,
    /// Cell component ablations.
    Mcu,
    /// Self content against cross content, with per-stream probes.
    #[serde(rename = "self")]
    SelfContent,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Aso, Grid::Baseline, Grid::Mcu, Grid::SelfContent];

    pub fn as_str(self) -> &'static str {
        match self {
            Grid::Aso => "aso",
            Grid::Baseline => "baseline",
            Grid::Mcu => "mcu",
            Grid::SelfContent => "self",
        }
    }

    /// Row variants; `None` keeps the base config's summarizer.
    pub fn variants(self) -> Vec<Variant> {
        let v = |label: &str, cell, aso| Variant {
            label: label.to_string(),
            cell_kind: cell,
            aso_kind: aso,
        };
        match self {
            Grid::Aso => vec![
                v("GRU", CellKind::Mcu, Some(AsoKind::Gru)),
                v("Max pooling", CellKind::Mcu, Some(AsoKind::Max)),
                v("Average pooling", CellKind::Mcu, Some(AsoKind::Mean)),
            ],
            Grid::Baseline => vec![
                v("LSTM", CellKind::Lstm, None),
                v("GRU", CellKind::Gru, None),
                v("MCU", CellKind::Mcu, None),
            ],
            Grid::Mcu => vec![
                v("concat mix, no LN", CellKind::McuConcatMix, None),
                v("no LN", CellKind::McuNoLn, None),
                v("full", CellKind::Mcu, None),
            ],
            Grid::SelfContent => vec![
                v("MCU-self", CellKind::McuSelf, None),
                v("MCU", CellKind::Mcu, None),
            ],
        }
    }

    pub fn with_aux(self) -> bool {
        self == Grid::SelfContent
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown grid {s:?} (expected aso|baseline|mcu|self)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub cell_kind: CellKind,
    pub aso_kind: Option<AsoKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub cell_kind: CellKind,
    pub aso_kind: AsoKind,
    pub seeds: Vec<u64>,
    /// Selected-checkpoint test accuracy per seed.
    pub test_acc: Vec<f64>,
    pub best_epoch: Vec<usize>,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    /// Per seed, per modality probe test accuracy.
    pub aux_test_acc: Option<Vec<Vec<f64>>>,
    pub seconds: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates one variant over all seeds.
pub fn run_variant<T: Scalar>(
    variant: &Variant,
    base: &TrainConfig,
    seeds: &[u64],
    with_aux: bool,
    train_set: &[ModalSample],
    test_set: &[ModalSample],
    num_classes: usize,
) -> Result<GridRow> {
    let aso_kind = variant.aso_kind.unwrap_or(base.aso_kind);
    let mut test_acc = Vec::with_capacity(seeds.len());
    let mut best_epoch = Vec::with_capacity(seeds.len());
    let mut aux = Vec::new();
    let mut seconds = 0.0;
    for &seed in seeds {
        let config = TrainConfig {
            seed,
            cell_kind: variant.cell_kind,
            aso_kind,
            checkpoint_path: None,
            metrics_path: None,
            ..base.clone()
        };
        let (mut model, metrics) = train::train::<T>(&config, train_set, test_set, num_classes)?;
        seconds += metrics.wall_seconds;
        test_acc.push(metrics.best_test_acc);
        best_epoch.push(metrics.best_epoch);
        if with_aux {
            aux.push(train::train_aux_heads(&mut model, train_set, test_set, &config)?.test_acc);
        }
    }
    let (mean, std) = mean_std(&test_acc);
    Ok(GridRow {
        label: variant.label.clone(),
        cell_kind: variant.cell_kind,
        aso_kind,
        seeds: seeds.to_vec(),
        test_acc,
        best_epoch,
        mean,
        std,
        aux_test_acc: with_aux.then_some(aux),
        seconds,
    })
}

pub fn run_grid<T: Scalar>(
    grid: Grid,
    base: &TrainConfig,
    seeds: &[u64],
    train_set: &[ModalSample],
    test_set: &[ModalSample],
    num_classes: usize,
) -> Result<Vec<GridRow>> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    grid.variants()
        .iter()
        .map(|v| run_variant::<T>(v, base, seeds, grid.with_aux(), train_set, test_set, num_classes))
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    cell: CellKind,
    aso: AsoKind,
    seeds: usize,
    mean: f64,
    std: f64,
    aux_mean: String,
}

/// Comparison table as pretty JSON plus a flat CSV.
pub fn write_table(rows: &[GridRow], json: &Path, csv: &Path) -> Result<()> {
    for p in [json, csv] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::Json {
        path: json.to_path_buf(),
        source: e,
    })?;
    std::fs::write(json, text).map_err(|e| Error::io(json, e))?;
    let flat: Vec<CsvRow> = rows
        .iter()
        .map(|r| CsvRow {
            label: &r.label,
            cell: r.cell_kind,
            aso: r.aso_kind,
            seeds: r.seeds.len(),
            mean: r.mean,
            std: r.std,
            aux_mean: r
                .aux_test_acc
                .as_ref()
                .map(|a| {
                    let n = a.first().map_or(0, Vec::len);
                    (0..n)
                        .map(|i| format!("{:.4}", mean_std(&a.iter().map(|s| s[i]).collect::<Vec<_>>()).0))
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default(),
        })
        .collect();
    crate::train::write_csv(csv, &flat)
}
