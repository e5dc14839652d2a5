//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_intervals: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: Vec<f64>,
    /// Sum of per-interval Kronrod–Gauss differences, componentwise.
    pub error: Vec<f64>,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    score: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.score == other.score
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score)
    }
}

fn rule<F>(f: &mut F, a: f64, b: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; n];
    let mut gauss = vec![0.0; n];
    let centre = f(c)?;
    for i in 0..n {
        kron[i] = WGK[7] * centre[i];
        gauss[i] = WG[3] * centre[i];
    }
    for (j, &x) in XGK[..7].iter().enumerate() {
        let lo = f(c - h * x)?;
        let hi = f(c + h * x)?;
        for i in 0..n {
            let s = lo[i] + hi[i];
            kron[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let value: Vec<f64> = kron.iter().map(|v| v * h).collect();
    let error: Vec<f64> = kron
        .iter()
        .zip(&gauss)
        .map(|(k, g)| ((k - g) * h).abs())
        .collect();
    Ok((value, error))
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Integrates `f` over `[a, b]`, starting from `initial_pieces` equal
/// subintervals and bisecting the worst one until the summed error estimate
/// meets `max(abs_tol, rel_tol·‖I‖∞)` in every component.
pub fn integrate<F>(mut f: F, a: f64, b: f64, initial_pieces: usize, opts: QuadOptions) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if !(b > a) {
        return Err(Error::Quadrature(format!("empty interval [{a}, {b}]")));
    }
    let n = f(a)?.len();
    let pieces = initial_pieces.max(1);
    let width = (b - a) / pieces as f64;
    let mut heap = BinaryHeap::new();
    let mut total = vec![0.0; n];
    let mut err = vec![0.0; n];
    for p in 0..pieces {
        let lo = a + width * p as f64;
        let hi = if p + 1 == pieces { b } else { lo + width };
        let (v, e) = rule(&mut f, lo, hi, n)?;
        for i in 0..n {
            total[i] += v[i];
            err[i] += e[i];
        }
        let score = norm_inf(&e);
        heap.push(Piece { a: lo, b: hi, value: v, error: e, score });
    }
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * norm_inf(&total));
        if norm_inf(&err) <= target {
            break;
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {:.3e} above target {:.3e} after {} intervals",
                norm_inf(&err),
                target,
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = rule(&mut f, worst.a, mid, n)?;
        let (rv, re) = rule(&mut f, mid, worst.b, n)?;
        for i in 0..n {
            total[i] += lv[i] + rv[i] - worst.value[i];
            err[i] += le[i] + re[i] - worst.error[i];
        }
        let ls = norm_inf(&le);
        let rs = norm_inf(&re);
        heap.push(Piece { a: worst.a, b: mid, value: lv, error: le, score: ls });
        heap.push(Piece { a: mid, b: worst.b, value: rv, error: re, score: rs });
    }
    // Recompute from the pieces to shed accumulated rounding in the running sums.
    let mut value = vec![0.0; n];
    let mut error = vec![0.0; n];
    let intervals = heap.len();
    for p in heap.into_vec() {
        for i in 0..n {
            value[i] += p.value[i];
            error[i] += p.error[i];
        }
    }
    Ok(QuadResult { value, error, intervals })
}
