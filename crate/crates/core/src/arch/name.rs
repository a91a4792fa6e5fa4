//! Architecture names such as `RF-c4d8 ResNet37(41)`.
//!
//! Grammar:
//!
//! ```text
//! fractal  := FAMILY "-c" INT "d" INT " " ("ResNet" | "DenseNet") INT "(" INT ")"
//! bireal   := "Bi-Real ResNet" INT "(" INT ")"
//! bdn      := "BinaryDenseNet" INT "(" INT ")"
//! ```
//!
//! The trailing parenthesized number is the base channel count for residual
//! families and the growth rate for dense ones.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{default_stage_blocks, fractal_depth, ArchError, ArchSpec, Dataset, Family, TransitionPlan};

fn malformed(name: &str) -> ArchError {
    ArchError::Malformed { name: name.to_string() }
}

fn parse_int(s: &str, name: &str) -> Result<usize, ArchError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(name));
    }
    s.parse().map_err(|_| malformed(name))
}

/// Splits `"<prefix><depth>(<width>)"` into `(depth, width)`.
fn depth_width(rest: &str, prefix: &str, name: &str) -> Result<(usize, usize), ArchError> {
    let body = rest.strip_prefix(prefix).ok_or_else(|| malformed(name))?;
    let (depth, tail) = body.split_once('(').ok_or_else(|| malformed(name))?;
    let width = tail.strip_suffix(')').ok_or_else(|| malformed(name))?;
    Ok((parse_int(depth, name)?, parse_int(width, name)?))
}

fn unsupported(depth: usize, detail: &str) -> ArchError {
    ArchError::UnsupportedDepth { depth, detail: detail.to_string() }
}

/// Dense-fractal stage layouts share the BinaryDenseNet28/37 block counts;
/// transition widths follow a growth-64 reference net with the same stages.
fn dense_fractal_layout(blocks: usize, depth: usize) -> Result<(Vec<usize>, TransitionPlan), ArchError> {
    match blocks {
        23 => {
            Ok((vec![6, 6, 6, 5], TransitionPlan::Skeleton { stem: 64, growth: 64, reductions: vec![2.6, 2.6, 2.2] }))
        }
        32 => {
            Ok((vec![6, 8, 12, 6], TransitionPlan::Skeleton { stem: 64, growth: 64, reductions: vec![2.7, 2.7, 4.0] }))
        }
        _ => Err(unsupported(depth, "dense fractal presets have 23 or 32 blocks")),
    }
}

pub fn parse_arch_name(name: &str, dataset: Dataset) -> Result<ArchSpec, ArchError> {
    let trimmed = name.trim();
    if let Some(rest) = trimmed.strip_prefix("Bi-Real ").or_else(|| trimmed.strip_prefix("Bi-real ")) {
        let (depth, width) = depth_width(rest, "ResNet", name)?;
        let blocks = match depth {
            18 => vec![2, 2, 2, 2],
            34 => vec![3, 4, 6, 3],
            _ => return Err(unsupported(depth, "Bi-Real presets are 18 or 34 layers")),
        };
        return Ok(ArchSpec::resnet(Family::BiReal, 1, blocks, width, dataset));
    }
    if trimmed.starts_with("BinaryDenseNet") {
        let (depth, growth) = depth_width(trimmed, "BinaryDenseNet", name)?;
        let (layers, red) = match depth {
            51 => (vec![12, 12, 12, 10], vec![2.7, 2.7, 2.2]),
            69 => (vec![12, 16, 24, 12], vec![3.3, 3.3, 4.0]),
            _ => return Err(unsupported(depth, "BinaryDenseNet presets are 51 or 69 layers")),
        };
        return Ok(ArchSpec::densenet(
            Family::BinaryDenseNet,
            1,
            layers,
            growth,
            dataset,
            TransitionPlan::Reduction(red),
        ));
    }

    let (head, rest) = trimmed.split_once(' ').ok_or_else(|| malformed(name))?;
    let (fam, cd) = head.split_once("-c").ok_or_else(|| malformed(name))?;
    let family = match fam {
        "F" => Family::F,
        "RF" => Family::RF,
        "DF" => Family::DF,
        "DRF" => Family::DRF,
        _ => return Err(malformed(name)),
    };
    let (c, d) = cd.split_once('d').ok_or_else(|| malformed(name))?;
    let columns = parse_int(c, name)?;
    let longest = parse_int(d, name)?;
    if columns == 0 || columns > 16 {
        return Err(malformed(name));
    }
    if longest != fractal_depth(columns) {
        return Err(ArchError::InconsistentColumns { columns, longest, expected: fractal_depth(columns) });
    }
    let base = if family.is_dense() { "DenseNet" } else { "ResNet" };
    let (depth, width) = depth_width(rest, base, name)?;
    let overhead = 5;
    if depth <= overhead || (depth - overhead) % longest != 0 {
        return Err(unsupported(depth, "depth must be 5 + blocks * longest path"));
    }
    let blocks = (depth - overhead) / longest;
    if family.is_dense() {
        let (stages, plan) = dense_fractal_layout(blocks, depth)?;
        Ok(ArchSpec::densenet(family, columns, stages, width, dataset, plan))
    } else {
        if blocks < 4 {
            return Err(unsupported(depth, "residual fractal nets have at least one block per stage"));
        }
        Ok(ArchSpec::resnet(family, columns, default_stage_blocks(blocks), width, dataset))
    }
}

pub fn format_arch_name(spec: &ArchSpec) -> String {
    let depth = spec.depth();
    match spec.family {
        Family::BiReal => format!("Bi-Real ResNet{depth}({})", spec.width),
        Family::BinaryDenseNet => format!("BinaryDenseNet{depth}({})", spec.width),
        f => {
            let fam = match f {
                Family::F => "F",
                Family::RF => "RF",
                Family::DF => "DF",
                _ => "DRF",
            };
            let base = if f.is_dense() { "DenseNet" } else { "ResNet" };
            format!("{fam}-c{}d{} {base}{depth}({})", spec.columns, fractal_depth(spec.columns), spec.width)
        }
    }
}
