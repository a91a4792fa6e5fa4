//! Graph description export and import (JSON node lists).

use sofar_core::arch::{
    assemble_network, build_dense_fractal_block, build_fractal, build_residual_fractal, ArchError, ArchSpec, Family,
    FractalSpec, ShortcutMode,
};
use sofar_core::graph::{Graph, GraphDesc, GraphError, ParamInit};

#[derive(Debug, thiserror::Error)]
pub enum GraphIoError {
    #[error("{0}")]
    Arch(#[from] ArchError),
    #[error("{0}")]
    Graph(#[from] GraphError),
    #[error("graph description: {0}")]
    Json(#[from] serde_json::Error),
}

/// The whole network.
pub fn network(arch: &ArchSpec) -> Result<Graph, ArchError> {
    assemble_network(arch, ParamInit::Zeros)
}

/// One standalone block of the architecture's first stage.
pub fn first_block(arch: &ArchSpec) -> Result<Graph, ArchError> {
    let shortcut = if arch.family.has_residuals() { ShortcutMode::Residual } else { ShortcutMode::None };
    let block = match arch.family {
        Family::F | Family::RF => {
            let mut spec = FractalSpec::new(arch.columns, arch.width, shortcut);
            spec.precision = arch.precision;
            if arch.family == Family::RF {
                build_residual_fractal(&spec)?
            } else {
                build_fractal(&spec)?
            }
        }
        Family::DF | Family::DRF => {
            build_dense_fractal_block(arch.columns, arch.width, arch.stem_channels, shortcut, 8)?
        }
        other => return Err(ArchError::Invalid(format!("{other:?} has no fractal block to export"))),
    };
    Ok(block.graph)
}

pub fn to_json(graph: &Graph) -> String {
    serde_json::to_string_pretty(&graph.describe()).expect("graph description serializes")
}

pub fn from_json(text: &str) -> Result<Graph, GraphIoError> {
    let desc: GraphDesc = serde_json::from_str(text)?;
    Ok(Graph::from_desc(&desc, ParamInit::Zeros)?)
}
