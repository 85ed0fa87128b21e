//! Published CMI, separation, NCMI and top-1 error of 18 pretrained
//! ImageNet classifiers, with a consistency and correlation report.

use serde::Serialize;

use crate::error::Result;
use crate::metrics::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedRow {
    pub model: &'static str,
    pub cmi: f64,
    pub gamma: f64,
    pub ncmi: f64,
    pub error: f64,
}

const fn row(model: &'static str, cmi: f64, gamma: f64, ncmi: f64, error: f64) -> PublishedRow {
    PublishedRow {
        model,
        cmi,
        gamma,
        ncmi,
        error,
    }
}

/// Values as printed, to three decimals.
pub const PUBLISHED: [PublishedRow; 18] = [
    row("ResNet18", 0.999, 9.891, 0.101, 0.302),
    row("ResNet34", 0.902, 9.919, 0.090, 0.266),
    row("ResNet50", 0.815, 9.929, 0.082, 0.238),
    row("ResNet101", 0.779, 9.948, 0.078, 0.226),
    row("ResNet152", 0.749, 9.953, 0.075, 0.216),
    row("VGG11", 0.959, 9.899, 0.096, 0.296),
    row("VGG13", 0.930, 9.909, 0.094, 0.284),
    row("VGG16", 0.878, 9.925, 0.088, 0.266),
    row("VGG19", 0.860, 9.930, 0.086, 0.257),
    row("AlexNet", 1.331, 9.830, 0.135, 0.434),
    row("EfficientNet-B0", 0.692, 9.433, 0.073, 0.220),
    row("EfficientNet-B1", 0.661, 9.114, 0.072, 0.213),
    row("EfficientNet-B2", 0.639, 9.224, 0.069, 0.193),
    row("EfficientNet-B3", 0.627, 9.365, 0.067, 0.180),
    row("Wide-ResNet50", 0.749, 9.935, 0.075, 0.215),
    row("Wide-ResNet101", 0.734, 9.937, 0.073, 0.211),
    row("MobileNet-V3-Small", 1.088, 9.898, 0.110, 0.323),
    row("MobileNet-V3-Large", 0.922, 9.956, 0.092, 0.259),
];

/// Half a unit in the third decimal.
pub const ROUNDING_TOLERANCE: f64 = 0.0005;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckedRow {
    pub model: &'static str,
    pub published_ncmi: f64,
    pub recomputed_ncmi: f64,
    pub discrepancy: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Report {
    pub rows: Vec<CheckedRow>,
    pub max_discrepancy: f64,
    pub worst_model: &'static str,
    /// Rows whose recomputed NCMI is within [`ROUNDING_TOLERANCE`].
    pub consistent_rows: usize,
    pub pearson_published: f64,
    pub pearson_recomputed: f64,
}

pub fn table1_report() -> Result<Table1Report> {
    let rows: Vec<CheckedRow> = PUBLISHED
        .iter()
        .map(|r| {
            let recomputed = r.cmi / r.gamma;
            CheckedRow {
                model: r.model,
                published_ncmi: r.ncmi,
                recomputed_ncmi: recomputed,
                discrepancy: (recomputed - r.ncmi).abs(),
                error: r.error,
            }
        })
        .collect();
    let worst = rows
        .iter()
        .max_by(|a, b| a.discrepancy.total_cmp(&b.discrepancy))
        .expect("table is nonempty");
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let published: Vec<f64> = rows.iter().map(|r| r.published_ncmi).collect();
    let recomputed: Vec<f64> = rows.iter().map(|r| r.recomputed_ncmi).collect();
    Ok(Table1Report {
        max_discrepancy: worst.discrepancy,
        worst_model: worst.model,
        consistent_rows: rows
            .iter()
            .filter(|r| r.discrepancy <= ROUNDING_TOLERANCE)
            .count(),
        pearson_published: pearson(&published, &errors)?,
        pearson_recomputed: pearson(&recomputed, &errors)?,
        rows,
    })
}
