use injecttst::numerics::Array;

/// `buf[i0, i1, ...]` for a row-major shape.
pub fn at(a: &Array<f64>, idx: &[usize]) -> f64 {
    let mut o = 0;
    for (i, d) in idx.iter().zip(a.shape()) {
        o = o * d + i;
    }
    a.data()[o]
}

/// `x[rows × k] · w[k × n] + b`
pub fn affine(x: &[Vec<f64>], w: &Array<f64>, b: Option<&Array<f64>>) -> Vec<Vec<f64>> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..n)
                .map(|j| {
                    let mut acc = b.map_or(0.0, |b| b.data()[j]);
                    for p in 0..k {
                        acc += row[p] * w.data()[p * n + j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm_rows(x: &[Vec<f64>], gain: &Array<f64>, bias: &Array<f64>, eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gain.data()[j] + bias.data()[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn add_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Multi-head attention of `queries` over `context` with explicit loops.
/// Returns the output rows and per-head weight rows.
pub fn multi_head(
    queries: &[Vec<f64>],
    context: &[Vec<f64>],
    p: &dyn Fn(&str) -> Array<f64>,
    prefix: &str,
    heads: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let q = affine(queries, &p(&format!("{prefix}.wq")), Some(&p(&format!("{prefix}.bq"))));
    let k = affine(context, &p(&format!("{prefix}.wk")), Some(&p(&format!("{prefix}.bk"))));
    let v = affine(context, &p(&format!("{prefix}.wv")), Some(&p(&format!("{prefix}.bv"))));
    let d = q[0].len();
    let dh = d / heads;
    let mut mixed = vec![vec![0.0; d]; q.len()];
    let mut weights = vec![vec![vec![0.0; k.len()]; q.len()]; heads];
    for h in 0..heads {
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| (0..dh).map(|t| qi[h * dh + t] * kj[h * dh + t]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let w = (s - max).exp() / z;
                weights[h][i][j] = w;
                for t in 0..dh {
                    mixed[i][h * dh + t] += w * v[j][h * dh + t];
                }
            }
        }
    }
    let out = affine(&mixed, &p(&format!("{prefix}.wo")), Some(&p(&format!("{prefix}.bo"))));
    (out, weights)
}

pub fn ffn(x: &[Vec<f64>], p: &dyn Fn(&str) -> Array<f64>, prefix: &str) -> Vec<Vec<f64>> {
    let h = affine(x, &p(&format!("{prefix}.w1")), Some(&p(&format!("{prefix}.b1"))));
    let h: Vec<Vec<f64>> = h.into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    affine(&h, &p(&format!("{prefix}.w2")), Some(&p(&format!("{prefix}.b2"))))
}

/// Post-norm SCA block for one channel: queries `z_i` (PN × D), context `z_glb`.
pub fn sca_block(
    z_i: &[Vec<f64>],
    z_glb: &[Vec<f64>],
    p: &dyn Fn(&str) -> Array<f64>,
    heads: usize,
    residual: bool,
    eps: f64,
) -> Vec<Vec<f64>> {
    let (a, _) = multi_head(z_i, z_glb, p, "sca.attn", heads);
    let h = if residual { add_rows(z_i, &a) } else { a };
    let h = layer_norm_rows(&h, &p("sca.norm1.gain"), &p("sca.norm1.bias"), eps);
    let f = ffn(&h, p, "sca.ffn");
    layer_norm_rows(&add_rows(&h, &f), &p("sca.norm2.gain"), &p("sca.norm2.bias"), eps)
}
