//! Cross-attention over tensors read from the binary container.

use std::fs;
use std::path::Path;

use dgv_core::format::{decode_tensors, encode_tensors, FusionWeights, Tensors};
use dgv_core::fusion::{align, cross_attend_trace, TokenMatrix};
use dgv_core::config::FusionConfig;

use crate::error::{CliError, CliResult};

fn read_tensors(path: &Path) -> CliResult<Tensors> {
    let bytes = fs::read(path).map_err(|e| CliError::Log(format!("{}: {e}", path.display())))?;
    Ok(decode_tensors(&bytes)?)
}

/// Reads `query` and `context` from `input`, projects the context through
/// the optional `align` weights and writes `output` plus per-head
/// `attention_<h>` weights to `out`.
pub fn run_attend(weights: &Path, input: &Path, out: &Path, opts: &FusionConfig) -> CliResult<Tensors> {
    let w = FusionWeights::from_tensors(read_tensors(weights)?, opts.heads)?;
    let mut t = read_tensors(input)?;
    let mut take = |name: &str| {
        t.remove(name)
            .ok_or_else(|| CliError::Log(format!("{}: missing tensor {name:?}", input.display())))
    };
    let query = TokenMatrix::new(take("query")?)?;
    let mut context = TokenMatrix::new(take("context")?)?;
    if let Some(p) = &w.align {
        context = align(&context, p)?;
    }
    let trace = cross_attend_trace(&query, &context, &w.attention, opts)?;

    let mut result = Tensors::new();
    for (h, a) in trace.weights.into_iter().enumerate() {
        result.insert(format!("attention_{h}"), a);
    }
    result.insert("output".into(), trace.output.into_matrix());
    fs::write(out, encode_tensors(&result)?)?;
    Ok(result)
}
