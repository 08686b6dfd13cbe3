//! A straight-line, loop-only re-derivation of the denoiser forward pass in f64.

use dsft_core::model::forward;
use dsft_core::{DenoiserParams, ModelConfig, Seed};
use rand::Rng;

struct Oracle<'a> {
    p: &'a DenoiserParams<f64>,
    d: usize,
}

impl Oracle<'_> {
    fn t(&self, name: &str) -> &[f64] {
        self.p.tensor(name).unwrap()
    }

    fn mat(&self, name: &str, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let t = self.t(name);
        (0..rows).map(|r| t[r * cols..(r + 1) * cols].to_vec()).collect()
    }

    fn ln(&self, x: &[f64], g: &str, b: &str) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (g, b) = (self.t(g), self.t(b));
        (0..self.d).map(|j| (x[j] - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
    }

    fn affine(x: &[f64], w: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        (0..b.len()).map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i][j]).sum::<f64>()).collect()
    }

    fn run(&self, cfg: &ModelConfig, ids: &[u32]) -> Vec<Vec<f64>> {
        let (d, f, v, l) = (cfg.dim, cfg.ff_dim, cfg.vocab_size, ids.len());
        let dh = d / cfg.heads;
        let tok = self.mat("tok_emb", v, d);
        let pos = self.mat("pos_emb", cfg.max_len, d);
        let mut x: Vec<Vec<f64>> = (0..l).map(|i| (0..d).map(|j| tok[ids[i] as usize][j] + pos[i][j]).collect()).collect();
        for layer in 0..cfg.layers {
            let n = |s: &str| format!("layers.{layer}.{s}");
            let h: Vec<Vec<f64>> = x.iter().map(|r| self.ln(r, &n("ln1.gain"), &n("ln1.bias"))).collect();
            let proj = |w: &str, b: &str| -> Vec<Vec<f64>> {
                let w = self.mat(&n(w), d, d);
                h.iter().map(|r| Self::affine(r, &w, self.t(&n(b)))).collect()
            };
            let (q, k, vv) = (proj("attn.wq", "attn.bq"), proj("attn.wk", "attn.bk"), proj("attn.wv", "attn.bv"));
            let mut att = vec![vec![0.0; d]; l];
            for head in 0..cfg.heads {
                let cols = head * dh..(head + 1) * dh;
                for i in 0..l {
                    let scores: Vec<f64> = (0..l)
                        .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                    for j in 0..l {
                        let a = (scores[j] - m).exp() / z;
                        for c in cols.clone() {
                            att[i][c] += a * vv[j][c];
                        }
                    }
                }
            }
            let wo = self.mat(&n("attn.wo"), d, d);
            for i in 0..l {
                let o = Self::affine(&att[i], &wo, self.t(&n("attn.bo")));
                for j in 0..d {
                    x[i][j] += o[j];
                }
            }
            let (w1, w2) = (self.mat(&n("ffn.w1"), d, f), self.mat(&n("ffn.w2"), f, d));
            for row in x.iter_mut() {
                let h2 = self.ln(row, &n("ln2.gain"), &n("ln2.bias"));
                let pre = Self::affine(&h2, &w1, self.t(&n("ffn.b1")));
                let act: Vec<f64> = pre
                    .iter()
                    .map(|&z| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh()))
                    .collect();
                let o = Self::affine(&act, &w2, self.t(&n("ffn.b2")));
                for j in 0..d {
                    row[j] += o[j];
                }
            }
        }
        let head = self.mat("head.w", d, v);
        x.iter().map(|r| Self::affine(&self.ln(r, "ln_f.gain", "ln_f.bias"), &head, self.t("head.b"))).collect()
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let cfg = ModelConfig { layers: 2, heads: 2, dim: 8, ff_dim: 16, max_len: 6, vocab_size: 12 };
    let mut params = DenoiserParams::<f64>::init(cfg, Seed(31)).unwrap();
    // Non-trivial gains and biases so every tensor matters.
    let mut rng = Seed(5).stream(dsft_core::Domain::Init, &[99]);
    for x in params.as_mut_slice() {
        *x += rng.random_range(-0.2..0.2);
    }
    let oracle = Oracle { p: &params, d: cfg.dim };
    for ids in [vec![9u32, 4, 0, 7, 0, 11], vec![3, 4, 1], vec![0]] {
        let got = forward(&params, &ids).unwrap();
        let want = oracle.run(&cfg, &ids);
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                let g = got.row(i)[j];
                assert!((g - w).abs() <= 1e-6, "logit[{i}][{j}]: {g} vs {w}");
            }
        }
    }
}

#[test]
fn f32_forward_tracks_f64() {
    let cfg = ModelConfig { layers: 2, heads: 2, dim: 8, ff_dim: 16, max_len: 6, vocab_size: 12 };
    let p64 = DenoiserParams::<f64>::init(cfg, Seed(2)).unwrap();
    let p32 = p64.cast::<f32>();
    let ids = [1u32, 4, 0, 0, 10, 3];
    let (a, b) = (forward(&p64, &ids).unwrap(), forward(&p32, &ids).unwrap());
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}
