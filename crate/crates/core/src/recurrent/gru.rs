use super::{sigmoid, RecurrentWeights};

// Per-step tape record: h_prev, z, r, candidate.
const SLOTS: usize = 4;

pub(super) fn run(
    w: &RecurrentWeights,
    window: &[f64],
    mut tape: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let l = w.spec.layout();
    let (n, m, width) = (l.n, l.m, l.width);
    let p = &w.params;
    let mut h = vec![0.0; n];
    let mut a = vec![0.0; width];
    let mut rh = vec![0.0; n];
    for x in window.chunks_exact(m) {
        a.copy_from_slice(&p[l.bias..l.bias + width]);
        for (i, &xi) in x.iter().enumerate() {
            let row = &p[l.kernel + i * width..l.kernel + (i + 1) * width];
            for (ac, r) in a.iter_mut().zip(row) {
                *ac += xi * r;
            }
        }
        // update and reset gates see h, the candidate sees r * h
        for (k, &hk) in h.iter().enumerate() {
            let row = &p[l.recurrent + k * width..l.recurrent + k * width + 2 * n];
            for (ac, r) in a[..2 * n].iter_mut().zip(row) {
                *ac += hk * r;
            }
        }
        for j in 0..2 * n {
            a[j] = sigmoid(a[j]);
        }
        for j in 0..n {
            rh[j] = a[n + j] * h[j];
        }
        for (k, &v) in rh.iter().enumerate() {
            let off = l.recurrent + k * width + 2 * n;
            for (ac, r) in a[2 * n..].iter_mut().zip(&p[off..off + n]) {
                *ac += v * r;
            }
        }
        for j in 0..n {
            a[2 * n + j] = a[2 * n + j].tanh();
        }
        if let Some(t) = tape.as_deref_mut() {
            t.extend_from_slice(&h);
            t.extend_from_slice(&a);
        }
        for j in 0..n {
            let z = a[j];
            h[j] = z * h[j] + (1.0 - z) * a[2 * n + j];
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
    let mut dz = vec![0.0; width];
    let mut drh = vec![0.0; n];
    let mut dh_prev = vec![0.0; n];
    for t in (0..steps).rev() {
        let rec = &tape[t * SLOTS * n..(t + 1) * SLOTS * n];
        let h_prev = &rec[0..n];
        let zg = &rec[n..2 * n];
        let rg = &rec[2 * n..3 * n];
        let cand = &rec[3 * n..4 * n];
        for j in 0..n {
            dz[j] = dh[j] * (h_prev[j] - cand[j]) * zg[j] * (1.0 - zg[j]);
            dz[2 * n + j] = dh[j] * (1.0 - zg[j]) * (1.0 - cand[j] * cand[j]);
            dh_prev[j] = dh[j] * zg[j];
        }
        for k in 0..n {
            let off = l.recurrent + k * width + 2 * n;
            let rh = rg[k] * h_prev[k];
            let mut acc = 0.0;
            for j in 0..n {
                grad[off + j] += rh * dz[2 * n + j];
                acc += p[off + j] * dz[2 * n + j];
            }
            drh[k] = acc;
        }
        for j in 0..n {
            dz[n + j] = drh[j] * h_prev[j] * rg[j] * (1.0 - rg[j]);
            dh_prev[j] += drh[j] * rg[j];
        }
        for k in 0..n {
            let off = l.recurrent + k * width;
            let hk = h_prev[k];
            let mut acc = 0.0;
            for c in 0..2 * n {
                grad[off + c] += hk * dz[c];
                acc += p[off + c] * dz[c];
            }
            dh_prev[k] += acc;
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
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}
