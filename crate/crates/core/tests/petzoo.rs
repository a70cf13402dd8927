mod common;

use bridgeseg::config::{ImageVariant, PetMethod};
use bridgeseg::harness::optim::Adam;
use bridgeseg::harness::train::train_step;
use bridgeseg::petzoo::{self, count_params, Group};
use bridgeseg::{Error, Etris, ModelConfig};
use common::*;

fn pet(base: ModelConfig, method: PetMethod) -> ModelConfig {
    let mut c = base;
    c.bridger.count = 0;
    c.pet.method = method;
    c
}

fn logits(model: &Etris, seed: u64) -> Vec<f64> {
    model.predict(&random_image(model.image_size(), seed), &ids(&model.config, "the small green square")).unwrap()
}

#[test]
fn freshly_attached_modules_are_identities() {
    for base in [toy(), toy_vit()] {
        let plain = Etris::new(&pet(base.clone(), PetMethod::None)).unwrap();
        let reference = logits(&plain, 1);
        for method in [PetMethod::Adapter, PetMethod::Lora] {
            let m = Etris::new(&pet(base.clone(), method)).unwrap();
            assert!(m.store.len() > plain.store.len());
            assert_eq!(logits(&m, 1), reference, "{method:?}");
        }
    }
}

#[test]
fn merged_lora_reproduces_the_unmerged_model() {
    for base in [toy(), toy_vit()] {
        let mut m = Etris::new(&pet(base, PetMethod::Lora)).unwrap();
        let ids: Vec<_> = m.store.iter().filter(|(_, p)| p.name.contains(".lora_")).map(|(id, _)| id).collect();
        let mut r = rng(5);
        for id in ids {
            let v: Vec<f64> = (0..m.store.get(id).numel()).map(|_| rand::Rng::gen_range(&mut r, -0.3..0.3)).collect();
            m.store.set_values(id, &v).unwrap();
        }
        let unmerged = logits(&m, 2);
        let (bb, store) = petzoo::merge_lora(&m.backbone, &m.store).unwrap();
        let merged = Etris { backbone: bb, store, ..m.clone() };
        let folded = logits(&merged, 2);
        let err = unmerged.iter().zip(&folded).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max diff {err}");
        assert!(unmerged != logits(&Etris::new(&pet(m.config.clone(), PetMethod::None)).unwrap(), 2));
    }
}

#[test]
fn ledger_counts_match_closed_forms() {
    let mut vit = ModelConfig::default();
    vit.backbone.image_variant = ImageVariant::Vit;
    for base in [ModelConfig::default(), vit, toy(), toy_vit()] {
        let a = pet(base.clone(), PetMethod::Adapter);
        let p = count_params(&Etris::new(&a).unwrap().store).unwrap();
        assert_eq!(p.group_count(Group::Adapter, Some(true)), expected_adapter(&a));
        assert_eq!(p.backbone_trainable, expected_adapter(&a));
        let l = pet(base.clone(), PetMethod::Lora);
        let p = count_params(&Etris::new(&l).unwrap().store).unwrap();
        assert_eq!(p.group_count(Group::Lora, Some(true)), expected_lora(&l));
        assert_eq!(p.backbone_trainable, expected_lora(&l));
        assert_eq!(p.group_count(Group::Backbone, Some(true)), 0);
    }
}

#[test]
fn ledger_totals_are_consistent() {
    let m = Etris::new(&ModelConfig::default()).unwrap();
    let p = count_params(&m.store).unwrap();
    assert_eq!(p.total, m.store.total_numel());
    assert_eq!(p.total, p.entries.iter().map(|e| e.count).sum::<usize>());
    assert_eq!(p.total - p.frozen, p.backbone_trainable + p.head_trainable);
    assert_eq!(p.frozen, p.group_count(Group::Backbone, None));
    assert_eq!(p.backbone_trainable, p.group_count(Group::Bridger, None));
    assert!((p.ratio - p.backbone_trainable as f64 / p.backbone_total as f64).abs() < 1e-15);
    let text = p.to_text();
    assert!(text.contains("bridger") && text.contains("decoder"));
}

#[test]
fn methods_are_ordered_and_bridger_stays_under_five_percent() {
    let rows = petzoo::compare_methods(&ModelConfig::default()).unwrap();
    let get = |name: &str| rows.iter().find(|r| r.method == name).unwrap();
    let (l, b, a) = (get("lora"), get("bridger"), get("adapter"));
    let (lc, bc, ac) = (l.backbone_trainable.unwrap(), b.backbone_trainable.unwrap(), a.backbone_trainable.unwrap());
    assert!(lc < bc && bc < ac, "lora {lc} bridger {bc} adapter {ac}");
    assert!(b.ratio.unwrap() <= 0.05);
    assert!(get("compacter").backbone_trainable.is_none());
    let text = petzoo::methods_to_text(&rows);
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn bridger_and_pet_cannot_be_combined() {
    for method in [PetMethod::Adapter, PetMethod::Lora] {
        let mut c = ModelConfig::default();
        c.pet.method = method;
        assert!(c.bridger.count > 0);
        assert!(matches!(Etris::new(&c), Err(Error::Config(_))));
    }
}

#[test]
fn adapter_rejects_indivisible_width() {
    let mut c = pet(toy(), PetMethod::Adapter);
    c.pet.reduction_factor = 3;
    assert!(matches!(Etris::new(&c), Err(Error::Config(_))));
    let mut c = pet(toy(), PetMethod::Lora);
    c.pet.lora_rank = c.backbone.text_width;
    assert!(matches!(Etris::new(&c), Err(Error::Config(_))));
}

#[test]
fn optimizer_updates_only_trainable_parameters() {
    for method in [PetMethod::None, PetMethod::Adapter, PetMethod::Lora] {
        let cfg = if method == PetMethod::None { toy() } else { pet(toy(), method) };
        let mut m = Etris::new(&cfg).unwrap();
        let before = m.store.clone();
        let data = small_dataset(2, 3, m.image_size());
        let batch: Vec<_> = data.samples.iter().collect();
        let mut opt = Adam::default();
        for _ in 0..2 {
            train_step(&mut m, &mut opt, &batch, (1e-3, 1e-3)).unwrap();
        }
        let mut changed_trainable = 0;
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            assert_eq!(a.name, b.name);
            let same = a.array.values() == b.array.values();
            if !a.trainable {
                assert!(same, "{method:?}: frozen {} moved", a.name);
            } else if !same {
                changed_trainable += 1;
                let g = Group::of(&a.name);
                assert!(g != Group::Backbone, "{}", a.name);
            }
        }
        assert!(changed_trainable > 0);
        let moved_pet = m
            .store
            .iter()
            .zip(before.iter())
            .any(|((_, a), (_, b))| petzoo::pet_kind(&a.name).is_some() && a.array.values() != b.array.values());
        assert_eq!(moved_pet, method != PetMethod::None, "{method:?}");
    }
}
