//! Toy pre-norm transformer over scene tokens with optional LoRA / HCLoRA
//! branches, per-layer auxiliary evidence heads, a per-token heatmap decoder and
//! an in/out head.

use serde::{Deserialize, Serialize};

use crate::adapter::{prior_column, HcLoraLayer, DEFAULT_RANK};
use crate::autograd::{softmax_all, Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{head_prior, GridSpec, HeadBox, DEFAULT_EPS};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Projections inside a block that can carry a low-rank branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Query,
    Key,
    Value,
    AttnOut,
    MlpIn,
}

impl Site {
    pub const ALL: [Site; 5] = [Site::Query, Site::Key, Site::Value, Site::AttnOut, Site::MlpIn];

    pub fn name(self) -> &'static str {
        match self {
            Site::Query => "q",
            Site::Key => "k",
            Site::Value => "v",
            Site::AttnOut => "o",
            Site::MlpIn => "mlp_in",
        }
    }

    pub fn parse(s: &str) -> Result<Site> {
        Site::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapter site '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub grid: GridSpec,
    pub d_in: usize,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub adapted_layers: Vec<usize>,
    /// Number of trailing adapted layers that carry auxiliary heads.
    pub aux_layers: usize,
    pub rank: usize,
    pub sites: Vec<Site>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            grid: GridSpec { height: 16, width: 16 },
            d_in: 32,
            d: 32,
            n_layers: 4,
            n_heads: 4,
            mlp_ratio: 2,
            adapted_layers: vec![0, 1, 2, 3],
            aux_layers: 2,
            rank: DEFAULT_RANK,
            sites: vec![Site::AttnOut, Site::MlpIn],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return bad(format!("d={} must be divisible by n_heads={}", self.d, self.n_heads));
        }
        if self.d_in == 0 || self.mlp_ratio == 0 || self.n_layers == 0 {
            return bad("d_in, mlp_ratio and n_layers must be positive".into());
        }
        let mut seen = vec![false; self.n_layers];
        for &l in &self.adapted_layers {
            if l >= self.n_layers || seen[l] {
                return bad(format!("adapted layer {l} is out of range or repeated"));
            }
            seen[l] = true;
        }
        if self.aux_layers > self.adapted_layers.len() {
            return bad(format!(
                "aux_layers={} exceeds the {} adapted layers",
                self.aux_layers,
                self.adapted_layers.len()
            ));
        }
        if self.rank == 0 || 2 * self.rank > self.d {
            return bad(format!("rank {} must satisfy 1 <= r <= d/2", self.rank));
        }
        if self.sites.is_empty() {
            return bad("at least one adapter site is required".into());
        }
        Ok(())
    }

    /// Adapted layers carrying auxiliary heads, in layer order.
    pub fn aux_layer_ids(&self) -> Vec<usize> {
        let mut layers = self.adapted_layers.clone();
        layers.sort_unstable();
        layers[layers.len() - self.aux_layers..].to_vec()
    }

    /// Site whose modulated low-rank feature feeds the auxiliary heads.
    pub fn aux_site(&self) -> Site {
        if self.sites.contains(&Site::MlpIn) {
            Site::MlpIn
        } else {
            *self.sites.last().expect("validated")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMode {
    Frozen,
    Lora,
    HcLora,
}

impl AdapterMode {
    pub fn name(self) -> &'static str {
        match self {
            AdapterMode::Frozen => "frozen",
            AdapterMode::Lora => "lora",
            AdapterMode::HcLora => "hclora",
        }
    }
}

/// Fixed 2D sinusoidal position code: for octave `f` the pairs
/// `sin(π·2^f·x), cos(π·2^f·x), sin(π·2^f·y), cos(π·2^f·y)` fill channels in
/// order; leftover channels stay zero.
pub fn position_embedding(grid: GridSpec, d: usize) -> Tensor {
    let mut p = Tensor::zeros(&[grid.cells(), d]);
    for (n, c) in grid.centers().enumerate() {
        let mut j = 0;
        let mut freq = 1.0;
        while j + 4 <= d && freq <= 8.0 {
            for a in [c.x, c.y] {
                let t = std::f64::consts::PI * freq * a;
                p.set(n, j, t.sin());
                p.set(n, j + 1, t.cos());
                j += 2;
            }
            freq *= 2.0;
        }
    }
    p
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (ParamId, ParamId),
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct InOutHead {
    pub w: ParamId,
    pub b: ParamId,
}

/// Per aux layer: evidence logits `Z·w` and an optional gaze-vector regressor.
#[derive(Debug, Clone, Copy)]
pub struct AuxHead {
    pub layer: usize,
    pub w: ParamId,
    pub vector: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub tokens: Var,
    /// `H×W` probabilities.
    pub heatmap: Var,
    /// `1×1` in-frame probability.
    pub inout: Var,
    /// Modulated low-rank features of the aux layers, `N×r` each, in layer order.
    pub aux_features: Vec<Var>,
    /// Head prior column used for gating (`N×1`).
    pub prior: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: BackboneConfig,
    pub mode: AdapterMode,
    pub store: ParamStore,
    pos: Tensor,
    embed: ParamId,
    blocks: Vec<Block>,
    final_ln: (ParamId, ParamId),
    pub decoder: Decoder,
    pub inout: InOutHead,
    /// `adapters[l]` holds the branches of layer `l` keyed by site.
    adapters: Vec<Vec<(Site, HcLoraLayer)>>,
    pub aux_heads: Vec<AuxHead>,
}

fn dense(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    rng.gaussian_tensor(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
}

impl Model {
    /// Freshly initialized backbone, decoder and in/out head, all trainable, no adapters.
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Rng::new(seed).fork(0xB0B);
        let mut s = ParamStore::new();
        let (d, h) = (cfg.d, cfg.d * cfg.mlp_ratio);
        let embed = s.add("embed", dense(&mut rng, cfg.d_in, d), true);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("block{l}");
            blocks.push(Block {
                ln1: (
                    s.add(&format!("{p}.ln1.gain"), Tensor::filled(&[d], 1.0), true),
                    s.add(&format!("{p}.ln1.bias"), Tensor::zeros(&[d]), true),
                ),
                q: s.add(&format!("{p}.attn.q"), dense(&mut rng, d, d), true),
                k: s.add(&format!("{p}.attn.k"), dense(&mut rng, d, d), true),
                v: s.add(&format!("{p}.attn.v"), dense(&mut rng, d, d), true),
                o: s.add(&format!("{p}.attn.o"), dense(&mut rng, d, d), true),
                ln2: (
                    s.add(&format!("{p}.ln2.gain"), Tensor::filled(&[d], 1.0), true),
                    s.add(&format!("{p}.ln2.bias"), Tensor::zeros(&[d]), true),
                ),
                w1: s.add(&format!("{p}.mlp.w1"), dense(&mut rng, d, h), true),
                b1: s.add(&format!("{p}.mlp.b1"), Tensor::zeros(&[h]), true),
                w2: s.add(&format!("{p}.mlp.w2"), dense(&mut rng, h, d), true),
                b2: s.add(&format!("{p}.mlp.b2"), Tensor::zeros(&[d]), true),
            });
        }
        let final_ln = (
            s.add("final_ln.gain", Tensor::filled(&[d], 1.0), true),
            s.add("final_ln.bias", Tensor::zeros(&[d]), true),
        );
        let decoder = Decoder {
            w1: s.add("decoder.w1", dense(&mut rng, d, d), true),
            b1: s.add("decoder.b1", Tensor::zeros(&[d]), true),
            w2: s.add("decoder.w2", dense(&mut rng, d, 1), true),
            b2: s.add("decoder.b2", Tensor::zeros(&[1]), true),
        };
        let inout = InOutHead {
            w: s.add("inout.w", Tensor::zeros(&[d, 1]), true),
            b: s.add("inout.b", Tensor::zeros(&[1]), true),
        };
        Ok(Model {
            pos: position_embedding(cfg.grid, d),
            adapters: vec![Vec::new(); cfg.n_layers],
            cfg,
            mode: AdapterMode::Frozen,
            store: s,
            embed,
            blocks,
            final_ln,
            decoder,
            inout,
            aux_heads: Vec::new(),
        })
    }

    pub fn has_adapters(&self) -> bool {
        self.adapters.iter().any(|a| !a.is_empty())
    }

    fn site_param(&self, l: usize, site: Site) -> ParamId {
        let b = &self.blocks[l];
        match site {
            Site::Query => b.q,
            Site::Key => b.k,
            Site::Value => b.v,
            Site::AttnOut => b.o,
            Site::MlpIn => b.w1,
        }
    }

    /// Freezes every existing parameter, then adds low-rank branches on the
    /// configured sites of the adapted layers. With `aux_vector`, each aux head
    /// also gets a gaze-vector regressor. `Frozen` adds nothing.
    pub fn attach_adapters(&mut self, mode: AdapterMode, aux_vector: bool, seed: u64) -> Result<()> {
        if self.has_adapters() {
            return Err(Error::InvalidArgument("adapters already attached".into()));
        }
        self.store.freeze_all();
        self.mode = mode;
        if mode == AdapterMode::Frozen {
            return Ok(());
        }
        let mut rng = Rng::new(seed).fork(0xADA);
        let mut layers = self.cfg.adapted_layers.clone();
        layers.sort_unstable();
        for &l in &layers {
            for &site in &self.cfg.sites {
                let w = self.site_param(l, site);
                let name = format!("block{l}.{}", site.name());
                let layer = HcLoraLayer::new(
                    &mut self.store,
                    &name,
                    w,
                    self.cfg.rank,
                    mode == AdapterMode::HcLora,
                    &mut rng,
                )?;
                self.adapters[l].push((site, layer));
            }
        }
        for l in self.cfg.aux_layer_ids() {
            let w = self.store.add(
                &format!("aux{l}.w"),
                rng.gaussian_tensor(&[self.cfg.rank, 1], 0.1),
                true,
            );
            let vector = aux_vector.then(|| {
                self.store
                    .add(&format!("aux{l}.vector"), Tensor::zeros(&[self.cfg.rank, 2]), true)
            });
            self.aux_heads.push(AuxHead { layer: l, w, vector });
        }
        Ok(())
    }

    /// Makes the decoder and in/out head trainable (adaptation trains them with the adapters).
    pub fn unfreeze_heads(&mut self) {
        for id in [
            self.decoder.w1,
            self.decoder.b1,
            self.decoder.w2,
            self.decoder.b2,
            self.inout.w,
            self.inout.b,
        ] {
            self.store.set_trainable(id, true);
        }
    }

    pub fn adapter(&self, layer: usize, site: Site) -> Option<&HcLoraLayer> {
        self.adapters
            .get(layer)?
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, a)| a)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &HcLoraLayer> {
        self.adapters.iter().flatten().map(|(_, a)| a)
    }

    /// Head prior column for a box on this model's grid.
    pub fn prior(&self, head_box: HeadBox) -> Result<Tensor> {
        prior_column(&head_prior(head_box, self.cfg.grid, DEFAULT_EPS), self.cfg.grid)
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.shape() != [self.cfg.grid.cells(), self.cfg.d_in] {
            return Err(Error::Dimension {
                op: "model_forward",
                lhs: features.shape().to_vec(),
                rhs: vec![self.cfg.grid.cells(), self.cfg.d_in],
            });
        }
        Ok(())
    }

    fn project(
        &self,
        g: &mut Graph,
        l: usize,
        site: Site,
        x: Var,
        prior: Var,
        z_out: &mut Option<Var>,
    ) -> Result<Var> {
        match self.adapter(l, site) {
            None => {
                let w = g.param(&self.store, self.site_param(l, site));
                g.matmul(x, w)
            }
            Some(ad) => {
                let m = match &ad.gate {
                    Some(gate) => Some(gate.apply(g, &self.store, prior)?),
                    None => None,
                };
                let out = ad.apply(g, &self.store, x, m)?;
                if site == self.cfg.aux_site() {
                    *z_out = Some(out.z);
                }
                Ok(out.y)
            }
        }
    }

    /// Full forward pass on the graph. `head_box` feeds the gates; it is
    /// ignored by the frozen and LoRA paths.
    pub fn forward(&self, g: &mut Graph, features: &Tensor, head_box: HeadBox) -> Result<ForwardOutput> {
        self.check_features(features)?;
        let prior = g.constant(self.prior(head_box)?);
        let f = g.input(features.clone());
        let e = g.param(&self.store, self.embed);
        let x0 = g.matmul(f, e)?;
        let pos = g.constant(self.pos.clone());
        let mut x = g.add(x0, pos)?;
        let aux_layers = self.cfg.aux_layer_ids();
        let mut aux_features = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            let mut z = None;
            let (g1, b1) = (g.param(&self.store, b.ln1.0), g.param(&self.store, b.ln1.1));
            let h = g.layer_norm(x, g1, b1)?;
            let q = self.project(g, l, Site::Query, h, prior, &mut z)?;
            let k = self.project(g, l, Site::Key, h, prior, &mut z)?;
            let v = self.project(g, l, Site::Value, h, prior, &mut z)?;
            let a = g.attention(q, k, v, self.cfg.n_heads)?;
            let o = self.project(g, l, Site::AttnOut, a, prior, &mut z)?;
            x = g.add(x, o)?;
            let (g2, b2) = (g.param(&self.store, b.ln2.0), g.param(&self.store, b.ln2.1));
            let h = g.layer_norm(x, g2, b2)?;
            let m = self.project(g, l, Site::MlpIn, h, prior, &mut z)?;
            let bias1 = g.param(&self.store, b.b1);
            let m = g.add_row(m, bias1)?;
            let m = g.relu(m);
            let w2 = g.param(&self.store, b.w2);
            let m = g.matmul(m, w2)?;
            let bias2 = g.param(&self.store, b.b2);
            let m = g.add_row(m, bias2)?;
            x = g.add(x, m)?;
            if self.has_adapters() && aux_layers.contains(&l) {
                aux_features.push(z.ok_or_else(|| {
                    Error::InvalidArgument(format!("layer {l} has no adapter on the aux site"))
                })?);
            }
        }
        let (gf, bf) = (g.param(&self.store, self.final_ln.0), g.param(&self.store, self.final_ln.1));
        let tokens = g.layer_norm(x, gf, bf)?;
        let heatmap = self.decode(g, tokens)?;
        let inout = self.inout_head(g, tokens)?;
        Ok(ForwardOutput {
            tokens,
            heatmap,
            inout,
            aux_features,
            prior,
        })
    }

    /// Per-token MLP `d → d → 1` with a sigmoid, reshaped to the grid.
    pub fn decode(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let p = &self.decoder;
        let w1 = g.param(&self.store, p.w1);
        let b1 = g.param(&self.store, p.b1);
        let w2 = g.param(&self.store, p.w2);
        let b2 = g.param(&self.store, p.b2);
        let h = g.matmul(tokens, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        let o = g.add_row(o, b2)?;
        let o = g.sigmoid(o);
        g.reshape(o, &[self.cfg.grid.height, self.cfg.grid.width])
    }

    /// Mean-pooled tokens → linear → sigmoid.
    pub fn inout_head(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let w = g.param(&self.store, self.inout.w);
        let b = g.param(&self.store, self.inout.b);
        let pooled = g.mean_rows(tokens);
        let o = g.matmul(pooled, w)?;
        let o = g.add_row(o, b)?;
        Ok(g.sigmoid(o))
    }

    /// Per-token evidence logits `Z·w` (`N×1`) for aux head `i`.
    pub fn aux_logits(&self, g: &mut Graph, z: Var, i: usize) -> Result<Var> {
        let w = g.param(&self.store, self.aux_heads[i].w);
        g.matmul(z, w)
    }

    /// Predicted 2D gaze vector from prior-weighted pooled features (`1×2`).
    pub fn aux_vector(&self, g: &mut Graph, z: Var, prior: Var, i: usize) -> Result<Var> {
        let id = self.aux_heads[i]
            .vector
            .ok_or(Error::NotApplicable("aux head has no gaze-vector regressor"))?;
        let weights = {
            let p = g.value(prior);
            let s = p.sum();
            p.map(|v| v / s).reshape(&[1, p.len()])?
        };
        let wv = g.constant(weights);
        let pooled = g.matmul(wv, z)?;
        let w = g.param(&self.store, id);
        g.matmul(pooled, w)
    }

    /// Eager inference: heatmap (`H×W`), in/out probability and normalized aux evidence maps.
    pub fn predict(&self, features: &Tensor, head_box: HeadBox) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, features, head_box)?;
        let mut evidence = Vec::new();
        for (i, &z) in out.aux_features.iter().enumerate() {
            let logits = self.aux_logits(&mut g, z, i)?;
            evidence.push(
                softmax_all(g.value(logits)).reshape(&[self.cfg.grid.height, self.cfg.grid.width])?,
            );
        }
        Ok(Prediction {
            heatmap: g.value(out.heatmap).clone(),
            inout: g.scalar(out.inout),
            tokens: g.value(out.tokens).clone(),
            evidence,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub heatmap: Tensor,
    pub inout: f64,
    pub tokens: Tensor,
    pub evidence: Vec<Tensor>,
}

/// Normalized evidence map of aux logits: softmax over all cells.
pub fn aux_evidence(logits: &Tensor) -> Tensor {
    softmax_all(logits)
}
