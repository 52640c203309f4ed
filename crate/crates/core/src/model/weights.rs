use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    /// `[d_model × d_model]`, row-major (output rows).
    pub wq: Vec<f32>,
    /// `[d_kv × d_model]`
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ffn_norm: Vec<f32>,
    /// `[d_ff × d_model]` gate and up projections, `[d_model × d_ff]` down.
    pub w_gate: Vec<f32>,
    pub w_up: Vec<f32>,
    pub w_down: Vec<f32>,
}

/// All parameters. The token embedding doubles as the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| rng.gen_range(-1.0f32..1.0) * scale)
        .collect()
}

impl Weights {
    /// Seeded initialization; identical seeds give identical weights.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (d, dkv, dff) = (cfg.d_model, cfg.d_kv_total, cfg.d_ff());
        let s_in = 1.0 / (d as f32).sqrt();
        let s_ff = 1.0 / (dff as f32).sqrt();
        let embed = uniform(&mut rng, cfg.vocab_size * d, 1.0);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: uniform(&mut rng, d * d, s_in),
                wk: uniform(&mut rng, dkv * d, s_in),
                wv: uniform(&mut rng, dkv * d, s_in),
                wo: uniform(&mut rng, d * d, s_in),
                ffn_norm: vec![1.0; d],
                w_gate: uniform(&mut rng, dff * d, s_in),
                w_up: uniform(&mut rng, dff * d, s_in),
                w_down: uniform(&mut rng, d * dff, s_ff),
            })
            .collect();
        Self {
            embed,
            layers,
            final_norm: vec![1.0; d],
        }
    }

    /// Named tensors in canonical storage order.
    pub fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut out: Vec<(String, &[f32])> = vec![("embed".into(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("attn_norm", &l.attn_norm),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ffn_norm", &l.ffn_norm),
                ("w_gate", &l.w_gate),
                ("w_up", &l.w_up),
                ("w_down", &l.w_down),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = vec![&mut self.embed];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ffn_norm,
                &mut l.w_gate,
                &mut l.w_up,
                &mut l.w_down,
            ]);
        }
        out.push(&mut self.final_norm);
        out
    }
}
