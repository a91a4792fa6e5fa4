//! Packed versus float binary convolution timings.
//!
//! Each size is a batch-1, 3×3, stride-1, pad-1 convolution over a
//! `size × size` map with [`CHANNELS`] input and output channels. Results
//! are checked for exact equality before anything is timed.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sofar_core::binarize::{BinConvParams, ScaleMode};
use sofar_core::bitkernel::{binary_conv2d, binary_conv2d_float, KernelError, PackedActivations};
use sofar_core::{Shape, Tensor};

pub const CHANNELS: usize = 64;
pub const DEFAULT_SIZES: &[usize] = &[8, 16, 32];
const MIN_TIME: Duration = Duration::from_millis(200);

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("sizes must be positive")]
    Size,
    #[error("packed and float kernels disagree at size {size}: max abs diff {diff}")]
    Mismatch { size: usize, diff: f32 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kernel: String,
    pub size: usize,
    pub float_ns: f64,
    pub packed_ns: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.float_ns / self.packed_ns
    }
}

struct Case {
    x: Tensor,
    params: BinConvParams,
}

fn case(size: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: Shape| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0f32));
    let x = draw(Shape::new(1, CHANNELS, size, size));
    let w = draw(Shape::new(CHANNELS, CHANNELS, 3, 3));
    let mut params = BinConvParams::new(w, ScaleMode::PerFilter).expect("non-empty weights");
    params.pack();
    Case { x, params }
}

/// Mean nanoseconds per call, repeating until [`MIN_TIME`] has passed.
fn time(mut f: impl FnMut()) -> f64 {
    f();
    let start = Instant::now();
    let mut calls = 0u32;
    while start.elapsed() < MIN_TIME {
        f();
        calls += 1;
    }
    start.elapsed().as_nanos() as f64 / calls as f64
}

/// Checks every size, logs each check to `log`, then times them.
pub fn run(sizes: &[usize], log: &mut dyn Write) -> Result<Vec<BenchRow>, BenchError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(BenchError::Size);
    }
    let cases: Vec<Case> = sizes.iter().map(|&s| case(s, s as u64)).collect();
    for (&size, c) in sizes.iter().zip(&cases) {
        let packed = binary_conv2d(&PackedActivations::from_tensor(&c.x), &c.params, 1, 1)?;
        let float = binary_conv2d_float(&c.x, &c.params, 1, 1)?;
        let same = packed.shape() == float.shape()
            && packed.data().iter().zip(float.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(BenchError::Mismatch { size, diff: packed.max_abs_diff(&float) });
        }
        writeln!(log, "equivalence ok: size {size}, {} outputs identical", packed.numel())?;
    }
    let mut rows = Vec::new();
    for (&size, c) in sizes.iter().zip(&cases) {
        let float_ns = time(|| {
            std::hint::black_box(binary_conv2d_float(&c.x, &c.params, 1, 1).unwrap());
        });
        let packed_ns = time(|| {
            let a = PackedActivations::from_tensor(&c.x);
            std::hint::black_box(binary_conv2d(&a, &c.params, 1, 1).unwrap());
        });
        rows.push(BenchRow { kernel: format!("conv3x3_c{CHANNELS}"), size, float_ns, packed_ns });
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kernel", "size", "float_ns", "packed_ns", "speedup"])?;
    for r in rows {
        w.write_record([
            r.kernel.clone(),
            r.size.to_string(),
            format!("{:.0}", r.float_ns),
            format!("{:.0}", r.packed_ns),
            format!("{:.3}", r.speedup()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
