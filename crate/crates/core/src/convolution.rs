//! Renewal sequences `u = 1/(1 − F)` as power series.
//!
//! `renewal_sequence` runs the online recursion `u_k = Σ_{j=1}^k f_j u_{k−j}`
//! by divide and conquer: the left half of every block is finished first and
//! its contribution to the right half is added with one FFT convolution.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const NAIVE_BLOCK: usize = 64;

/// Direct `O(n²)` recursion. `f[0]` is ignored.
pub fn renewal_sequence_naive(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut u = vec![0.0; n];
    if n == 0 {
        return u;
    }
    u[0] = 1.0;
    for k in 1..n {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += f[j] * u[k - j];
        }
        u[k] = acc;
    }
    u
}

/// `u_0..u_{len−1}` for the increments `f` (`f[0]` is ignored).
pub fn renewal_sequence(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n <= 2 * NAIVE_BLOCK {
        return renewal_sequence_naive(f);
    }
    let mut u = vec![0.0; n];
    let mut solver = Solver { f, planner: FftPlanner::new(), a: Vec::new(), b: Vec::new() };
    solver.solve(&mut u, 0, n);
    u
}

struct Solver<'a> {
    f: &'a [f64],
    planner: FftPlanner<f64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
}

impl Solver<'_> {
    /// On entry `u[l..r]` holds the contributions of `u[..l]`.
    fn solve(&mut self, u: &mut [f64], l: usize, r: usize) {
        if r - l <= NAIVE_BLOCK {
            for k in l..r {
                if k == 0 {
                    u[0] = 1.0;
                    continue;
                }
                let mut acc = u[k];
                for i in l..k {
                    acc += self.f[k - i] * u[i];
                }
                u[k] = acc;
            }
            return;
        }
        let m = l + (r - l) / 2;
        self.solve(u, l, m);
        self.push(u, l, m, r);
        self.solve(u, m, r);
    }

    /// Adds `Σ_{i∈[l,m)} u_i f_{k−i}` to `u_k` for `k ∈ [m, r)`.
    fn push(&mut self, u: &mut [f64], l: usize, m: usize, r: usize) {
        let len_a = m - l;
        let len_b = r - l;
        let size = (len_a + len_b).next_power_of_two();
        // Pack both real inputs into one complex transform.
        self.a.clear();
        self.a.resize(size, Complex64::new(0.0, 0.0));
        for i in 0..len_a {
            self.a[i].re = u[l + i];
        }
        for j in 1..len_b {
            self.a[j].im = self.f[j];
        }
        let fwd = self.planner.plan_fft_forward(size);
        let inv = self.planner.plan_fft_inverse(size);
        fwd.process(&mut self.a);
        // Unpack: A_k = (Z_k + conj Z_{-k})/2, B_k = (Z_k − conj Z_{-k})/(2i).
        self.b.clear();
        self.b.resize(size, Complex64::new(0.0, 0.0));
        for k in 0..size {
            let z = self.a[k];
            let zc = self.a[(size - k) % size].conj();
            let x = (z + zc) * 0.5;
            let y = (z - zc) * Complex64::new(0.0, -0.5);
            self.b[k] = x * y;
        }
        inv.process(&mut self.b);
        let scale = 1.0 / size as f64;
        for k in m..r {
            u[k] += self.b[k - l].re * scale;
        }
    }
}
