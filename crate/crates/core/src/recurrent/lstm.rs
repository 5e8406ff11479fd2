use super::{sigmoid, RecurrentWeights};

// Per-step tape record: h_prev, c_prev, i, f, g, o, c.
const SLOTS: usize = 7;

pub(super) fn run(
    w: &RecurrentWeights,
    window: &[f64],
    mut tape: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let l = w.spec.layout();
    let (n, m, width) = (l.n, l.m, l.width);
    let p = &w.params;
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut z = vec![0.0; width];
    for x in window.chunks_exact(m) {
        z.copy_from_slice(&p[l.bias..l.bias + width]);
        for (i, &xi) in x.iter().enumerate() {
            let row = &p[l.kernel + i * width..l.kernel + (i + 1) * width];
            for (zc, r) in z.iter_mut().zip(row) {
                *zc += xi * r;
            }
        }
        for (k, &hk) in h.iter().enumerate() {
            let row = &p[l.recurrent + k * width..l.recurrent + (k + 1) * width];
            for (zc, r) in z.iter_mut().zip(row) {
                *zc += hk * r;
            }
        }
        if let Some(t) = tape.as_deref_mut() {
            t.extend_from_slice(&h);
            t.extend_from_slice(&c);
        }
        for j in 0..n {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[n + j]);
            let gg = z[2 * n + j].tanh();
            let og = sigmoid(z[3 * n + j]);
            z[j] = ig;
            z[n + j] = fg;
            z[2 * n + j] = gg;
            z[3 * n + j] = og;
            c[j] = fg * c[j] + ig * gg;
            h[j] = og * c[j].tanh();
        }
        if let Some(t) = tape.as_deref_mut() {
            t.extend_from_slice(&z);
            t.extend_from_slice(&c);
        }
    }
    h
}

pub(super) fn backward(
    w: &RecurrentWeights,
    window: &[f64],
    tape: &[f64],
    mut dh: Vec<f64>,
    grad: &mut [f64],
) {
    let l = w.spec.layout();
    let (n, m, width) = (l.n, l.m, l.width);
    let p = &w.params;
    let steps = window.len() / m;
    debug_assert_eq!(tape.len(), steps * SLOTS * n);
    let mut dc = vec![0.0; n];
    let mut dz = vec![0.0; width];
    for t in (0..steps).rev() {
        let rec = &tape[t * SLOTS * n..(t + 1) * SLOTS * n];
        let h_prev = &rec[0..n];
        let c_prev = &rec[n..2 * n];
        let gates = &rec[2 * n..6 * n];
        let c = &rec[6 * n..7 * n];
        for j in 0..n {
            let (ig, fg, gg, og) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            let tc = c[j].tanh();
            dc[j] += dh[j] * og * (1.0 - tc * tc);
            dz[j] = dc[j] * gg * ig * (1.0 - ig);
            dz[n + j] = dc[j] * c_prev[j] * fg * (1.0 - fg);
            dz[2 * n + j] = dc[j] * ig * (1.0 - gg * gg);
            dz[3 * n + j] = dh[j] * tc * og * (1.0 - og);
            dc[j] *= fg;
        }
        let x = &window[t * m..(t + 1) * m];
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut grad[l.kernel + i * width..l.kernel + (i + 1) * width];
            for (g, d) in row.iter_mut().zip(&dz) {
                *g += xi * d;
            }
        }
        for (g, d) in grad[l.bias..l.bias + width].iter_mut().zip(&dz) {
            *g += d;
        }
        for k in 0..n {
            let off = l.recurrent + k * width;
            let hk = h_prev[k];
            let mut acc = 0.0;
            for c in 0..width {
                grad[off + c] += hk * dz[c];
                acc += p[off + c] * dz[c];
            }
            dh[k] = acc;
        }
    }
}
