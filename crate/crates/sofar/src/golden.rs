//! Published parameter and Flops figures for the table presets, and the
//! ±5% comparison against the cost model.

use std::fmt::Write;

use sofar_core::arch::{parse_arch_name, ArchError, Dataset};
use sofar_core::complexity::{analyze_arch, ComplexityReport, CountPolicy};
use sofar_core::graph::Region;

pub const TOLERANCE: f64 = 0.05;

/// Short label for a cost region; stages are numbered from 1.
pub fn region_label(region: Region) -> String {
    match region {
        Region::Other => "other".into(),
        Region::Stem => "stem".into(),
        Region::Block { stage, .. } => format!("stage {} blocks", stage + 1),
        Region::Transition { stage } => format!("transition {stage}"),
        Region::Head => "head".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenRow {
    pub dataset: Dataset,
    pub name: &'static str,
    pub mbit: f64,
    pub flops: f64,
}

const fn row(dataset: Dataset, name: &'static str, mbit: f64, flops: f64) -> GoldenRow {
    GoldenRow { dataset, name, mbit, flops }
}

pub const TABLE: &[GoldenRow] = &[
    row(Dataset::Imagenet, "Bi-Real ResNet18(64)", 33.18, 1.64e8),
    row(Dataset::Imagenet, "RF-c3d4 ResNet21(53)", 32.63, 1.46e8),
    row(Dataset::Imagenet, "RF-c4d8 ResNet37(41)", 32.24, 1.28e8),
    row(Dataset::Imagenet, "RF-c5d16 ResNet69(31)", 32.16, 1.14e8),
    row(Dataset::Imagenet, "Bi-Real ResNet34(64)", 43.28, 1.93e8),
    row(Dataset::Imagenet, "RF-c3d4 ResNet41(48)", 42.61, 1.64e8),
    row(Dataset::Imagenet, "RF-c4d8 ResNet77(35)", 41.53, 1.44e8),
    row(Dataset::Imagenet, "BinaryDenseNet51(32)", 34.80, 2.70e8),
    row(Dataset::Imagenet, "DRF-c2d2 DenseNet51(53)", 34.53, 2.97e8),
    row(Dataset::Imagenet, "BinaryDenseNet69(32)", 41.95, 2.82e8),
    row(Dataset::Imagenet, "DRF-c2d2 DenseNet69(48)", 41.52, 3.06e8),
    row(Dataset::Cifar, "Bi-Real ResNet18(64)", 18.18, 1.67e7),
    row(Dataset::Cifar, "RF-c3d4 ResNet21(50)", 18.07, 1.53e7),
    row(Dataset::Cifar, "RF-c4d8 ResNet37(36)", 17.57, 1.42e7),
    row(Dataset::Cifar, "RF-c5d16 ResNet69(26)", 17.63, 1.38e7),
    row(Dataset::Cifar, "Bi-Real ResNet34(64)", 28.28, 2.61e7),
    row(Dataset::Cifar, "RF-c3d4 ResNet41(45)", 27.64, 2.28e7),
    row(Dataset::Cifar, "RF-c4d8 ResNet77(32)", 27.94, 2.24e7),
    row(Dataset::Cifar, "RF-c5d16 ResNet149(22)", 26.35, 2.08e7),
    row(Dataset::Cifar, "BinaryDenseNet51(32)", 17.65, 5.13e7),
    row(Dataset::Cifar, "DRF-c2d2 DenseNet51(48)", 17.51, 5.32e7),
    row(Dataset::Cifar, "DRF-c3d4 DenseNet97(38)", 17.32, 5.46e7),
    row(Dataset::Cifar, "BinaryDenseNet69(32)", 23.70, 5.50e7),
    row(Dataset::Cifar, "DRF-c2d2 DenseNet69(44)", 23.33, 5.67e7),
    row(Dataset::Cifar, "DRF-c3d4 DenseNet133(36)", 23.70, 6.02e7),
];

/// Looks up a row by name and dataset, ignoring surrounding whitespace.
pub fn lookup(dataset: Dataset, name: &str) -> Option<&'static GoldenRow> {
    TABLE.iter().find(|r| r.dataset == dataset && r.name == name.trim())
}

#[derive(Debug, Clone)]
pub struct GoldenCheck {
    pub row: GoldenRow,
    pub report: ComplexityReport,
    /// Flops with full-precision downsampling convolutions left out.
    pub flops_without_downsample: f64,
}

impl GoldenCheck {
    pub fn mbit_deviation(&self) -> f64 {
        self.report.mbit() / self.row.mbit - 1.0
    }

    pub fn flops_deviation(&self) -> f64 {
        self.report.flops() / self.row.flops - 1.0
    }

    pub fn pass(&self) -> bool {
        self.mbit_deviation().abs() <= TOLERANCE && self.flops_deviation().abs() <= TOLERANCE
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {:<26} {:>8} {:8.2} Mbit (table {:6.2}, {:+6.2}%)  {:.3e} Flops (table {:.2e}, {:+6.2}%; {:.3e} without downsampling)",
            if self.pass() { "PASS" } else { "FAIL" },
            self.row.name,
            format!("{:?}", self.row.dataset).to_lowercase(),
            self.report.mbit(),
            self.row.mbit,
            100.0 * self.mbit_deviation(),
            self.report.flops(),
            self.row.flops,
            100.0 * self.flops_deviation(),
            self.flops_without_downsample,
        )
    }

    /// Where the computed cost sits: per region, then per layer with its
    /// share of the total Flops.
    pub fn diff(&self) -> String {
        let r = &self.report;
        let bits_gap = r.param_bits() as f64 - self.row.mbit * 1e6;
        let flops_gap = r.flops() - self.row.flops;
        let mut s = String::new();
        let _ = writeln!(s, "  gap: {:+.0} bits, {:+.4e} Flops", bits_gap, flops_gap);
        let _ = writeln!(s, "  {:<24} {:>14} {:>14}", "region", "bits", "flops");
        for (region, bits, flops) in r.by_region() {
            let _ = writeln!(s, "  {:<24} {:>14} {:>14.4e}", region_label(region), bits, flops);
        }
        let _ = writeln!(s, "  {:<40} {:<10} {:>12} {:>14} {:>8}", "layer", "kind", "bits", "flops", "flops%");
        for l in &r.layers {
            let _ = writeln!(
                s,
                "  {:<40} {:<10} {:>12} {:>14.4e} {:>7.2}%",
                l.name,
                l.kind,
                l.param_bits(),
                l.flops(),
                100.0 * l.flops() / r.flops()
            );
        }
        s
    }
}

pub fn check(row: &GoldenRow, policy: CountPolicy) -> Result<GoldenCheck, ArchError> {
    let spec = parse_arch_name(row.name, row.dataset)?;
    let report = analyze_arch(&spec, policy)?;
    let without = analyze_arch(&spec, CountPolicy { include_downsample: false, ..policy })?;
    Ok(GoldenCheck { row: *row, report, flops_without_downsample: without.flops() })
}
