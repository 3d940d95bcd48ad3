//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use proxynorm::tensor::{ActivationTensor, Kernel};

/// Direct summation over every output position, tap and input channel.
pub fn conv_oracle(z: &ActivationTensor, w: &Kernel, s: usize) -> Vec<f64> {
    let sh = z.shape();
    let (kh, kw, c_in, c_out) = w.shape();
    let (ho, wo) = (sh.h / s, sh.w / s);
    let mut out = vec![0.0; sh.n * ho * wo * c_out];
    for n in 0..sh.n {
        for i in 0..ho {
            for j in 0..wo {
                for co in 0..c_out {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let r = (i * s + dy + kh * sh.h - kh / 2) % sh.h;
                            let c = (j * s + dx + kw * sh.w - kw / 2) % sh.w;
                            for ci in 0..c_in {
                                acc += w.get(dy, dx, ci, co) * z.get(n, r, c, ci);
                            }
                        }
                    }
                    out[((n * ho + i) * wo + j) * c_out + co] = acc;
                }
            }
        }
    }
    out
}

/// Two-pass per-channel terms, written without the library's helpers.
pub fn decomposition_oracle(y: &ActivationTensor) -> Vec<[f64; 5]> {
    let sh = y.shape();
    let m = (sh.h * sh.w) as f64;
    let nn = sh.n as f64;
    (0..sh.c)
        .map(|c| {
            let mut mus = Vec::new();
            let mut sigmas = Vec::new();
            let mut total = 0.0;
            for n in 0..sh.n {
                let mut s = 0.0;
                for i in 0..sh.h {
                    for j in 0..sh.w {
                        s += y.get(n, i, j, c);
                    }
                }
                let mu = s / m;
                let mut v = 0.0;
                for i in 0..sh.h {
                    for j in 0..sh.w {
                        let d = y.get(n, i, j, c) - mu;
                        v += d * d;
                        total += y.get(n, i, j, c) * y.get(n, i, j, c);
                    }
                }
                mus.push(mu);
                sigmas.push((v / m).sqrt());
            }
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / nn;
            let var = |xs: &[f64]| {
                let mu = mean(xs);
                xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / nn
            };
            let (em, es) = (mean(&mus), mean(&sigmas));
            [total / (nn * m), em * em, var(&mus), es * es, var(&sigmas)]
        })
        .collect()
}
