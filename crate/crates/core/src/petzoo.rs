//! Parameter-efficient baselines (bottleneck adapters and low-rank
//! deltas) plus the trainable-parameter ledger used to compare them with
//! the Bridger.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::transformer::{Proj, TransformerLayer};
use crate::backbone::{Backbone, ImageEncoder};
use crate::config::{ModelConfig, PetMethod};
use crate::error::{Error, Result};
use crate::ndgrad::layers::{map_to_tokens, tokens_to_map, Linear};
use crate::ndgrad::{DiffArray, Graph, ParamId, ParamStore, Var};

/// Houlsby bottleneck: `h + up(gelu(down(h)))` with `up` starting at zero.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 || width % reduction != 0 {
            return Err(Error::config(format!("adapter width {width} is not divisible by reduction factor {reduction}")));
        }
        let hidden = width / reduction;
        Ok(Adapter {
            down: Linear::new(store, &format!("{name}.down"), width, hidden, true, rng)?,
            up: Linear::zeros(store, &format!("{name}.up"), hidden, width, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let z = self.down.forward(g, store, h)?;
        let z = g.gelu(z)?;
        let z = self.up.forward(g, store, z)?;
        g.add(h, z)
    }

    /// Applies the adapter at every pixel of a `[C, h, w]` map.
    pub fn forward_chw(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let t = map_to_tokens(g, x)?;
        let y = self.forward(g, store, t)?;
        tokens_to_map(g, y, s[1], s[2])
    }
}

/// Closed-form size of one adapter.
pub fn adapter_numel(width: usize, reduction: usize) -> usize {
    let h = width / reduction;
    width * h + h + h * width + width
}

/// Low-rank delta `(alpha / rank) · B · A` added to a frozen weight.
#[derive(Clone, Debug)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f64,
}

impl Lora {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 || rank >= fan_in.min(fan_out) {
            return Err(Error::config(format!("LoRA rank {rank} must be below min({fan_in}, {fan_out})")));
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let a = store.register(format!("{name}.lora_a"), DiffArray::uniform(&[rank, fan_in], bound, rng))?;
        let b = store.register(format!("{name}.lora_b"), DiffArray::zeros(&[fan_out, rank]))?;
        Ok(Lora { a, b, rank, scale: alpha / rank as f64 })
    }

    pub fn delta(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        let z = g.linear(x, a, None)?;
        let z = g.linear(z, b, None)?;
        g.scale(z, self.scale)
    }
}

pub fn lora_numel(fan_in: usize, fan_out: usize, rank: usize) -> usize {
    rank * (fan_in + fan_out)
}

/// Which PET family a parameter name belongs to, if any.
pub fn pet_kind(name: &str) -> Option<PetMethod> {
    if name.contains(".adapter") {
        Some(PetMethod::Adapter)
    } else if name.contains(".lora_") {
        Some(PetMethod::Lora)
    } else {
        None
    }
}

fn transformer_layers(backbone: &mut Backbone) -> Vec<&mut TransformerLayer> {
    let mut layers: Vec<&mut TransformerLayer> = backbone.text.layers.iter_mut().collect();
    if let ImageEncoder::Vit(v) = &mut backbone.image {
        layers.extend(v.layers.iter_mut());
    }
    layers
}

/// Inserts a trainable adapter after every attention and FFN sublayer of
/// both towers, and after both conv blocks of every CNN stage.
pub fn attach_adapter(backbone: &mut Backbone, store: &mut ParamStore, reduction: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    for layer in transformer_layers(backbone) {
        let name = layer.name.clone();
        layer.adapter_attn = Some(Adapter::new(store, &format!("{name}.adapter_attn"), layer.width, reduction, &mut rng)?);
        layer.adapter_mlp = Some(Adapter::new(store, &format!("{name}.adapter_mlp"), layer.width, reduction, &mut rng)?);
    }
    if let ImageEncoder::Cnn(stages) = &mut backbone.image {
        for (i, st) in stages.iter_mut().enumerate() {
            let name = format!("backbone.image.stages.{i}");
            st.adapter_down = Some(Adapter::new(store, &format!("{name}.adapter_down"), st.width, reduction, &mut rng)?);
            st.adapter_conv = Some(Adapter::new(store, &format!("{name}.adapter_conv"), st.width, reduction, &mut rng)?);
        }
    }
    Ok(())
}

/// Adds low-rank deltas to the query and value projections of every
/// transformer layer in both towers.
pub fn attach_lora(backbone: &mut Backbone, store: &mut ParamStore, rank: usize, alpha: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    for layer in transformer_layers(backbone) {
        let name = layer.name.clone();
        for (tag, proj) in [("q", &mut layer.attn.q), ("v", &mut layer.attn.v)] {
            let l = &proj.linear;
            proj.lora = Some(Lora::new(store, &format!("{name}.attn.{tag}"), l.fan_in, l.fan_out, rank, alpha, &mut rng)?);
        }
    }
    Ok(())
}

/// Folds every low-rank delta into its base weight, returning a backbone
/// without deltas and a store holding the merged weights.
pub fn merge_lora(backbone: &Backbone, store: &ParamStore) -> Result<(Backbone, ParamStore)> {
    let mut bb = backbone.clone();
    let mut st = store.clone();
    for layer in transformer_layers(&mut bb) {
        for proj in layer.projections_mut() {
            if let Some(l) = proj.lora.take() {
                fold(&mut st, proj, &l)?;
            }
        }
    }
    Ok((bb, st))
}

fn fold(store: &mut ParamStore, proj: &Proj, l: &Lora) -> Result<()> {
    let (fin, fout, r) = (proj.linear.fan_in, proj.linear.fan_out, l.rank);
    let a = store.get(l.a).array.values().to_vec();
    let b = store.get(l.b).array.values().to_vec();
    let mut w = store.get(proj.linear.weight).array.values().to_vec();
    for o in 0..fout {
        for i in 0..fin {
            w[o * fin + i] += l.scale * (0..r).map(|k| b[o * r + k] * a[k * fin + i]).sum::<f64>();
        }
    }
    store.set_values(proj.linear.weight, &w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Bridger,
    Adapter,
    Lora,
    Decoder,
}

impl Group {
    pub fn of(name: &str) -> Group {
        match pet_kind(name) {
            Some(PetMethod::Adapter) => Group::Adapter,
            Some(PetMethod::Lora) => Group::Lora,
            _ if name.starts_with("bridger.") => Group::Bridger,
            _ if name.starts_with("decoder.") => Group::Decoder,
            _ => Group::Backbone,
        }
    }

    pub fn backbone_side(self) -> bool {
        self != Group::Decoder
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionEntry {
    pub name: String,
    pub group: Group,
    pub count: usize,
    pub trainable: bool,
}

/// Frozen/trainable ledger. The decoder is kept out of the backbone ratio.
#[derive(Clone, Debug, Serialize)]
pub struct ParamPartition {
    pub entries: Vec<PartitionEntry>,
    pub total: usize,
    pub frozen: usize,
    pub backbone_total: usize,
    pub backbone_trainable: usize,
    pub head_trainable: usize,
    pub ratio: f64,
}

impl ParamPartition {
    pub fn group_count(&self, group: Group, trainable: Option<bool>) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group && trainable.map_or(true, |t| e.trainable == t))
            .map(|e| e.count)
            .sum()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.name.as_str()).collect()
    }

    /// Aligned text summary, one row per group.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>12} {:>12}", "group", "trainable", "frozen");
        for group in [Group::Backbone, Group::Bridger, Group::Adapter, Group::Lora, Group::Decoder] {
            let t = self.group_count(group, Some(true));
            let f = self.group_count(group, Some(false));
            if t + f > 0 {
                let label = serde_json::to_value(group).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let _ = writeln!(out, "{label:<10} {t:>12} {f:>12}");
            }
        }
        let _ = writeln!(out, "{:<10} {:>12} {:>12}", "total", self.total - self.frozen, self.frozen);
        let _ = writeln!(
            out,
            "backbone-side trainable {} of {} ({:.3}%)",
            self.backbone_trainable,
            self.backbone_total,
            100.0 * self.ratio
        );
        out
    }
}

/// Exact counts from the parameter registry.
pub fn count_params(store: &ParamStore) -> Result<ParamPartition> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Internal(format!("duplicate parameter name {}", p.name)));
        }
        entries.push(PartitionEntry { name: p.name.clone(), group: Group::of(&p.name), count: p.numel(), trainable: p.trainable });
    }
    let sum = |f: &dyn Fn(&PartitionEntry) -> bool| entries.iter().filter(|e| f(e)).map(|e| e.count).sum::<usize>();
    let total = sum(&|_| true);
    let frozen = sum(&|e| !e.trainable);
    let backbone_total = sum(&|e| e.group.backbone_side());
    let backbone_trainable = sum(&|e| e.group.backbone_side() && e.trainable);
    let head_trainable = sum(&|e| !e.group.backbone_side() && e.trainable);
    let ratio = if backbone_total == 0 { 0.0 } else { backbone_trainable as f64 / backbone_total as f64 };
    Ok(ParamPartition { entries, total, frozen, backbone_total, backbone_trainable, head_trainable, ratio })
}

/// One row of the method comparison. Methods outside this crate's scope
/// keep their slot with no count so reports can be merged by hand.
#[derive(Clone, Debug, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub backbone_trainable: Option<usize>,
    pub ratio: Option<f64>,
}

/// Backbone-side trainable counts for every method on the same backbone.
pub fn compare_methods(config: &ModelConfig) -> Result<Vec<MethodRow>> {
    let count = |cfg: ModelConfig| -> Result<(usize, f64)> {
        let m = crate::model::Etris::new(&cfg)?;
        let p = count_params(&m.store)?;
        Ok((p.backbone_trainable, p.ratio))
    };
    let base = ModelConfig { bridger: crate::config::BridgerConfig { count: 0, ..config.bridger.clone() }, ..config.clone() };
    let with = |method| ModelConfig { pet: crate::config::PetConfig { method, ..config.pet.clone() }, ..base.clone() };
    let mut bridger_cfg = config.clone();
    bridger_cfg.pet.method = PetMethod::None;
    if bridger_cfg.bridger.count == 0 {
        bridger_cfg.bridger = crate::config::BridgerConfig::default();
    }
    let row = |name: &str, r: Option<(usize, f64)>| MethodRow {
        method: name.to_string(),
        backbone_trainable: r.map(|x| x.0),
        ratio: r.map(|x| x.1),
    };
    Ok(vec![
        row("lora", Some(count(with(PetMethod::Lora))?)),
        row("compacter", None),
        row("coop", None),
        row("conv_adapter", None),
        row("bridger", Some(count(bridger_cfg)?)),
        row("adapter", Some(count(with(PetMethod::Adapter))?)),
    ])
}

pub fn methods_to_text(rows: &[MethodRow]) -> String {
    let mut out = format!("{:<14} {:>12} {:>10}\n", "method", "trainable", "ratio");
    for r in rows {
        match (r.backbone_trainable, r.ratio) {
            (Some(c), Some(q)) => {
                let _ = writeln!(out, "{:<14} {:>12} {:>9.3}%", r.method, c, 100.0 * q);
            }
            _ => {
                let _ = writeln!(out, "{:<14} {:>12} {:>10}", r.method, "-", "-");
            }
        }
    }
    out
}
