//! Measured heap peaks of single attention calls against the analytic
//! transient-scalar counts reported by the benchmark.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use cosformer_core::*;
use cosformer_harness::bench::{bench_inputs, BenchVariant, Mode};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
        PEAK.fetch_max(now, Ordering::SeqCst);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Peak bytes allocated by `f` above the live heap at entry.
fn peak_bytes<R>(f: impl FnOnce() -> R) -> usize {
    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let out = f();
    let peak = PEAK.load(Ordering::SeqCst) - base;
    drop(out);
    peak
}

fn measured(variant: BenchVariant, n: usize, d: usize) -> usize {
    let [q, k, v, _] = bench_inputs::<f64>(0, n, d);
    match variant {
        BenchVariant::Softmax => peak_bytes(|| softmax_attention(&q, &k, &v, false, true).unwrap()),
        BenchVariant::Cosformer => peak_bytes(|| cosformer_attention(&q, &k, &v, &AttentionConfig::cosformer(false)).unwrap()),
        BenchVariant::Linear => peak_bytes(|| linear_attention(&q, &k, &v, FeatureMapKind::Relu, false, DEFAULT_EPS).unwrap()),
        BenchVariant::KernelQuadratic => peak_bytes(|| {
            kernel_attention_quadratic(&q, &k, &v, &AttentionConfig::linear(FeatureMapKind::Relu, false)).unwrap()
        }),
    }
}

// One test, so no other test thread allocates while a peak is recorded.
#[test]
fn heap_peaks_follow_analytic_counts() {
    let d = 64;
    let variants = [BenchVariant::Softmax, BenchVariant::KernelQuadratic, BenchVariant::Linear, BenchVariant::Cosformer];
    for variant in variants {
        for n in [256, 512, 1024] {
            let bytes = measured(variant, n, d);
            let analytic = variant.transient_scalars(n, d, Mode::Inference).unwrap() * 8;
            println!("{} n={n}: measured {bytes} B, analytic {analytic} B", variant.name());
            assert!(bytes <= analytic + 1024, "{} n={n}: {bytes} > {analytic}", variant.name());
            assert!(bytes * 2 >= analytic, "{} n={n}: {bytes} far below {analytic}", variant.name());
        }
    }

    let growth = |v| measured(v, 2048, d) as f64 / measured(v, 1024, d) as f64;
    let (cos, soft) = (growth(BenchVariant::Cosformer), growth(BenchVariant::Softmax));
    println!("peak growth 1024 -> 2048: cosformer {cos:.2}, softmax {soft:.2}");
    assert!(cos < 2.2, "cosformer peak grows by {cos}");
    assert!(soft > 3.0, "softmax peak grows by {soft}");
}
