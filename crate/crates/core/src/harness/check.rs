//! Gradient verification: every differentiable primitive on random inputs,
//! and the loss of the assembled model on a one-sample toy instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::Sample;
use super::synth;
use super::vocab::Vocab;
use crate::config::{ModelConfig, PetMethod};
use crate::error::Result;
use crate::model::Etris;
use crate::ndgrad::{
    gradcheck, AttnMask, DiffArray, GradcheckOptions, GradcheckReport, Graph, MhaParams, Padding, ParamId, ParamStore, Var,
};
use crate::objective::contrastive_loss;

/// Entries probed per parameter when `full` is off.
pub const QUICK_ENTRIES: usize = 6;

/// Standard deviation of the noise added to trainable parameters.
pub const PERTURB_STD: f64 = 0.05;

/// Standard deviation used for parameters that start at zero.
pub const ZERO_STD: f64 = 0.3;

/// Model variant exercised by one gradcheck pass.
#[derive(Clone, Debug)]
pub struct VariantReport {
    pub variant: String,
    pub report: GradcheckReport,
}

/// Configurations covering every trainable group: the base model with its
/// Bridgers, then the Adapter and LoRA baselines without Bridgers.
pub fn variants(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let mut out = vec![("bridger".to_string(), ModelConfig { pet: Default::default(), ..base.clone() })];
    for (name, method) in [("adapter", PetMethod::Adapter), ("lora", PetMethod::Lora)] {
        let mut c = base.clone();
        c.bridger.count = 0;
        c.pet.method = method;
        out.push((name.to_string(), c));
    }
    out
}

/// Moves every trainable parameter off its initial value so that
/// zero-initialized projections do not mask gradient paths. Parameters that
/// start at exactly zero are redrawn with `zero_std`, the rest get additive
/// noise with `std`.
pub fn perturb_trainable(model: &mut Etris, std: f64, zero_std: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).expect("positive std");
    let fresh = Normal::new(0.0, zero_std).expect("positive std");
    for id in model.store.trainable_ids() {
        let mut v = model.store.get(id).array.values().to_vec();
        let dist = if v.iter().all(|&x| x == 0.0) { &fresh } else { &noise };
        v.iter_mut().for_each(|x| *x += dist.sample(&mut rng));
        model.store.set_values(id, &v)?;
    }
    Ok(())
}

/// One sample at the model's image size drawn from the synthetic grammar.
pub fn toy_sample(config: &ModelConfig) -> Result<Sample> {
    let size = config.backbone.image_size;
    let rec = synth::generate_one(config.seed, 0, size, &Vocab::standard(), config.backbone.max_len)?;
    Ok(Sample::from_record(&rec, size))
}

/// Gradchecks the loss of a perturbed model built from `config`.
pub fn check_model(config: &ModelConfig, full: bool) -> Result<GradcheckReport> {
    let mut model = Etris::new(config)?;
    perturb_trainable(&mut model, PERTURB_STD, ZERO_STD, config.seed ^ 0x9e37)?;
    let sample = toy_sample(config)?;
    let opts = GradcheckOptions { max_entries_per_param: if full { None } else { Some(QUICK_ENTRIES) }, ..Default::default() };
    gradcheck(
        &model.store,
        |g, store| Ok(model.loss_with(g, store, &sample.image, &sample.tokens, &sample.mask)?.0),
        &opts,
    )
}

pub fn check_all(base: &ModelConfig, full: bool) -> Result<Vec<VariantReport>> {
    variants(base)
        .into_iter()
        .map(|(variant, c)| Ok(VariantReport { variant, report: check_model(&c, full)? }))
        .collect()
}

type Op = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Checks `sum(op(inputs) ⊙ R)` for uniform random inputs and a fixed
/// random `R`, so the upstream gradient is not constant.
fn probe(inputs: Vec<DiffArray>, seed: u64, op: &Op) -> Result<GradcheckReport> {
    let mut store = ParamStore::new();
    let ids = inputs
        .into_iter()
        .enumerate()
        .map(|(i, a)| store.register(format!("in{i}"), a))
        .collect::<Result<Vec<ParamId>>>()?;
    gradcheck(
        &store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = op(g, &vars)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let w = g.constant(&DiffArray::uniform(g.shape(y), 1.0, &mut rng));
            let prod = g.mul(y, w)?;
            g.sum_all(prod)
        },
        &GradcheckOptions::default(),
    )
}

fn random(shapes: &[&[usize]], seed: u64) -> Vec<DiffArray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|s| DiffArray::uniform(s, 1.0, &mut rng)).collect()
}

/// Gradchecks every tape primitive, the attention block and the loss.
/// Returns one report per primitive, in a fixed order.
pub fn check_primitives() -> Result<Vec<VariantReport>> {
    let pad = Padding { top: 0, bottom: 1, left: 0, right: 1 };
    let masked = AttnMask { causal: true, key_valid: Some(vec![true, true, false, true]) };
    let cases: Vec<(&str, Vec<DiffArray>, Op)> = vec![
        ("add", random(&[&[3, 4], &[3, 4]], 1), Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", random(&[&[3, 4], &[3, 4]], 2), Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", random(&[&[3, 4], &[3, 4]], 3), Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", random(&[&[3, 4]], 4), Box::new(|g, v| g.scale(v[0], -1.7))),
        ("sigmoid", random(&[&[6]], 5), Box::new(|g, v| g.sigmoid(v[0]))),
        ("gelu", random(&[&[6]], 6), Box::new(|g, v| g.gelu(v[0]))),
        (
            "relu",
            vec![DiffArray::new(&[4], vec![-1.0, 0.5, -0.2, 2.0])?],
            Box::new(|g, v| g.relu(v[0])),
        ),
        ("concat", random(&[&[2, 3], &[1, 3]], 7), Box::new(|g, v| g.concat(&[v[0], v[1]]))),
        ("slice", random(&[&[4, 3]], 8), Box::new(|g, v| g.slice(v[0], 1, 3))),
        ("transpose2d", random(&[&[4, 3]], 9), Box::new(|g, v| g.transpose2d(v[0]))),
        ("reshape", random(&[&[4, 3]], 10), Box::new(|g, v| g.reshape(v[0], &[2, 6]))),
        ("gather_rows", random(&[&[5, 3]], 11), Box::new(|g, v| g.gather_rows(v[0], &[4, 0, 4]))),
        ("mean_axis", random(&[&[4, 3]], 12), Box::new(|g, v| g.mean_axis(v[0], 1))),
        ("mean_all", random(&[&[4, 3]], 13), Box::new(|g, v| g.mean_all(v[0]))),
        ("sum_all", random(&[&[4, 3]], 14), Box::new(|g, v| g.sum_all(v[0]))),
        ("matmul", random(&[&[3, 4], &[4, 5]], 20), Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("linear", random(&[&[3, 4], &[5, 4], &[5]], 21), Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])))),
        ("layer_norm", random(&[&[3, 6], &[6], &[6]], 22), Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("softmax", random(&[&[3, 6]], 23), Box::new(|g, v| g.softmax(v[0]))),
        (
            "conv2d",
            random(&[&[2, 5, 5], &[3, 2, 3, 3], &[3]], 30),
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "conv2d_padded",
            random(&[&[2, 4, 4], &[2, 2, 2, 2], &[2]], 31),
            Box::new(move |g, v| g.conv2d_padded(v[0], v[1], Some(v[2]), 1, pad)),
        ),
        (
            "conv_transpose2d",
            random(&[&[2, 3, 3], &[2, 3, 2, 2], &[3]], 32),
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2)),
        ),
        ("resize_bilinear", random(&[&[2, 3, 4]], 33), Box::new(|g, v| g.resize_bilinear(v[0], 7, 5))),
        ("upsample_nearest", random(&[&[2, 2, 3]], 34), Box::new(|g, v| g.upsample_nearest(v[0], 4))),
        (
            "attention",
            random(&[&[3, 8], &[5, 8], &[5, 8]], 40),
            Box::new(|g, v| g.scaled_dot_attention(v[0], v[1], v[2], 2, &AttnMask::none())),
        ),
        (
            "attention_masked",
            random(&[&[4, 4], &[4, 4], &[4, 4]], 41),
            Box::new(move |g, v| g.scaled_dot_attention(v[0], v[1], v[2], 1, &masked)),
        ),
        (
            "contrastive_loss",
            random(&[&[4, 4]], 50),
            Box::new(|g, v| {
                let gt: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
                contrastive_loss(g, v[0], &gt)
            }),
        ),
    ];
    let mut out = Vec::with_capacity(cases.len() + 1);
    for (i, (name, inputs, op)) in cases.iter().enumerate() {
        out.push(VariantReport { variant: name.to_string(), report: probe(inputs.clone(), i as u64, op)? });
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mha = MhaParams::new(&mut store, "attn", 8, 6, 2, false, &mut rng)?;
    let q = store.register("q", DiffArray::uniform(&[3, 8], 1.0, &mut rng))?;
    let kv = store.register("kv", DiffArray::uniform(&[4, 6], 1.0, &mut rng))?;
    let report = gradcheck(
        &store,
        |g, s| {
            let (qv, k) = (g.param(s, q), g.param(s, kv));
            let y = g.multi_head_attention(s, &mha, qv, k, k, &AttnMask::none())?;
            let y2 = g.mul(y, y)?;
            g.sum_all(y2)
        },
        &GradcheckOptions::default(),
    )?;
    out.push(VariantReport { variant: "multi_head_attention".to_string(), report });
    Ok(out)
}
