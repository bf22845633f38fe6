use dwvit::analyzer::{compare, count_flops};
use dwvit::attention::{msw_msa, MswMsaParams};
use dwvit::dwm::DmswMode;
use dwvit::model::{dw_block_pair, Model, ModelConfig, StageConfig};
use dwvit::nn::{Init, Module};
use dwvit::oracle::{block_oracle, dense_msa, Dense, OracleReport, Weights};
use dwvit::tensor::{Tape, Tensor};
use dwvit::verify::random_config;
use dwvit::window::WindowSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

#[test]
fn nine_tokens_match_dense_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let windows = WindowSet::new(vec![3]).unwrap();
    let mut p = MswMsaParams::<f32>::init(&mut Init::new(0), "a", 8, 2, &windows).unwrap();
    p.qkv.visit_mut(&mut |w| w.value_mut().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0)));
    let x = Tensor::<f32>::from_fn([3, 3, 8], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let got = msw_msa(&Tape::inference().constant(x.clone()), &p, &windows, false).unwrap().y;
    let want = dense_msa(&to_f64(&x), 9, &Dense::from_linear(&p.qkv), 2, None);
    let r = OracleReport::absolute("N=9 C=8", &to_f64(got.value()), &want, 1e-5);
    assert!(r.pass, "{r}");
}

#[test]
fn block_pair_on_14x14x96_matches_composition() {
    let stage = StageConfig {
        channels: 96,
        heads: 3,
        windows: vec![7, 14, 21],
        depth: 2,
    };
    let cfg = ModelConfig {
        image_size: [56, 56],
        num_classes: 10,
        dmsw_mode: DmswMode::Dynamic,
        stages: vec![stage.clone()],
        in_channels: 3,
        patch_size: 4,
        mlp_ratio: 4,
    };
    let mut model = Model::<f32>::build(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    model.visit_mut(&mut |p| {
        if p.name().contains("rel_bias") || p.name().ends_with(".bias") {
            p.value_mut().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    });
    let blocks = &model.stages[0].blocks;
    assert_eq!(blocks[0].windows.effective(), &[7, 14, 14]);
    let x = Tensor::<f32>::from_fn([14, 14, 96], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let got = dw_block_pair(&Tape::inference().constant(x.clone()), &blocks[0], &blocks[1]).unwrap();

    let weights = Weights::of(&model);
    let mut want = to_f64(&x);
    for (i, shifted) in [false, true].into_iter().enumerate() {
        want = block_oracle(
            &weights,
            &format!("stages.0.blocks.{i}"),
            &want,
            14,
            14,
            96,
            3,
            &stage.windows,
            shifted,
            DmswMode::Dynamic,
            4,
        );
    }
    let r = OracleReport::absolute("block pair 14x14x96", &to_f64(got.value()), &want, 1e-5);
    assert!(r.pass, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_configs_match_closed_form(seed in any::<u64>()) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let model = Model::<f32>::skeleton(&cfg).unwrap();
        let cmp = compare(&count_flops(&model)).unwrap();
        prop_assert!(cmp.all_match, "{:?}", cmp.mismatches().collect::<Vec<_>>());
    }

    #[test]
    fn random_configs_trace_consistently(seed in any::<u64>()) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let model = Model::<f64>::build(&cfg, seed).unwrap();
        let [h, w] = cfg.image_size;
        let image = Tensor::from_fn([h, w, 3], |i| ((i * 7) % 11) as f64 / 11.0).unwrap();
        let (logits, trace) = model.forward_traced(&image).unwrap();
        prop_assert_eq!(logits.shape(), &[cfg.num_classes]);
        prop_assert_eq!(trace, model.trace());
    }
}
