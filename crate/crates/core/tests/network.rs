use ddunet::engine::{Rng, Stream, Tensor};
use ddunet::network::{
    build_model, count_parameters, describe, predict, ArchitectureConfig, Attention, Downsample,
    Gating, ModelParams,
};

fn tiny() -> ArchitectureConfig {
    ArchitectureConfig {
        in_channels: 1,
        num_classes: 2,
        stage_channels: vec![2, 4],
        convs_per_stage: vec![1, 1],
        decoders: 2,
        attention: Attention::PerDecoderPerLevel,
        gating: Gating::SameLevel,
        ..Default::default()
    }
}

/// Closed-form count, written independently of the parameter builder.
fn symbolic_count(c: &ArchitectureConfig) -> usize {
    let conv = |ci: usize, co: usize, k: usize| co * ci * k * k * k + co;
    let normed = |ci: usize, co: usize| conv(ci, co, 3) + 2 * co;
    let ch = &c.stage_channels;
    let mut enc = 0;
    for (s, &n) in c.convs_per_stage.iter().enumerate() {
        let first_in = if s == 0 { c.in_channels } else { ch[s - 1] };
        enc += normed(first_in, ch[s]) + (n - 1) * normed(ch[s], ch[s]);
        if s > 0 && c.downsample == Downsample::StridedConv {
            enc += conv(ch[s - 1], ch[s - 1], 2);
        }
    }
    let gate = |cx: usize, cg: usize| {
        let f = (cx / 2).max(1);
        (f * cx + f) + (f * cg + f) + (f + 1)
    };
    let mut dec = 0;
    let mut gates = 0;
    for l in 0..ch.len() - 1 {
        let n = c.convs_per_stage[l];
        dec += conv(ch[l + 1], ch[l], 2) + normed(2 * ch[l], ch[l]) + (n - 1) * normed(ch[l], ch[l]);
        let cg = if c.gating == Gating::SameLevel { ch[l] } else { ch[l + 1] };
        gates += gate(ch[l], cg);
    }
    let head = conv(ch[0], c.num_classes, 1);
    let gate_sets = match c.attention {
        Attention::None => 0,
        Attention::SharedPerLevel => 1,
        Attention::PerDecoderPerLevel => 2,
    };
    let fuse = if c.decoders == 2 { conv(2 * c.num_classes, c.num_classes, 1) } else { 0 };
    enc + c.decoders * (dec + head) + gate_sets * gates + fuse
}

fn variants() -> Vec<ArchitectureConfig> {
    let base = ArchitectureConfig {
        in_channels: 2,
        num_classes: 3,
        stage_channels: vec![4, 8, 8],
        convs_per_stage: vec![1, 2, 1],
        ..Default::default()
    };
    vec![
        ArchitectureConfig { decoders: 1, attention: Attention::None, ..base.clone() },
        ArchitectureConfig { attention: Attention::SharedPerLevel, ..base.clone() },
        base.clone(),
        ArchitectureConfig { gating: Gating::Original, ..base.clone() },
        ArchitectureConfig { downsample: Downsample::StridedConv, ..base.clone() },
        ArchitectureConfig { decoders: 1, attention: Attention::SharedPerLevel, gating: Gating::Original, ..base },
    ]
}

#[test]
fn tiny_parameter_count_matches_symbolic_count() {
    let p: ModelParams<f64> = build_model(&tiny(), &mut Rng::new(0, Stream::Init)).unwrap();
    assert_eq!(symbolic_count(&tiny()), 902);
    assert_eq!(count_parameters(&p), 902);
    for c in variants() {
        let p: ModelParams<f32> = build_model(&c, &mut Rng::new(0, Stream::Init)).unwrap();
        assert_eq!(count_parameters(&p), symbolic_count(&c), "{c:?}");
        assert_eq!(describe(&c, 8).unwrap().parameters, symbolic_count(&c));
    }
}

#[test]
fn count_parameters_small_cases() {
    let mut p = ModelParams::<f32>::new();
    assert_eq!(count_parameters(&p), 0);
    p.insert("w", Tensor::zeros(&[2, 1, 1, 1, 1]).unwrap()).unwrap();
    p.insert("b", Tensor::zeros(&[2]).unwrap()).unwrap();
    assert_eq!(count_parameters(&p), 4);
}

#[test]
fn gate_families_follow_attention_mode() {
    let names = |c: &ArchitectureConfig| -> Vec<String> {
        let p: ModelParams<f32> = build_model(c, &mut Rng::new(0, Stream::Init)).unwrap();
        p.names().map(String::from).collect()
    };
    let full = names(&ArchitectureConfig::default());
    assert!(full.iter().any(|n| n.starts_with("gateA/")));
    assert!(full.iter().any(|n| n.starts_with("gateB/")));
    assert!(!full.iter().any(|n| n.starts_with("gate/")));
    let one = names(&ArchitectureConfig { attention: Attention::SharedPerLevel, ..Default::default() });
    assert!(one.iter().any(|n| n.starts_with("gate/")));
    assert!(!one.iter().any(|n| n.starts_with("gateA/") || n.starts_with("gateB/")));
    let base = names(&ArchitectureConfig::baseline());
    assert!(!base.iter().any(|n| n.starts_with("gate") || n.starts_with("fuse") || n.contains('B')));
}

#[test]
fn builds_are_deterministic() {
    let a: ModelParams<f32> = build_model(&tiny(), &mut Rng::new(5, Stream::Init)).unwrap();
    let b: ModelParams<f32> = build_model(&tiny(), &mut Rng::new(5, Stream::Init)).unwrap();
    let c: ModelParams<f32> = build_model(&tiny(), &mut Rng::new(6, Stream::Init)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn default_model_shapes_and_attention_maps() {
    let config = ArchitectureConfig::default();
    let p: ModelParams<f32> = build_model(&config, &mut Rng::new(1, Stream::Init)).unwrap();
    let x = Tensor::normal(&[1, 4, 32, 32, 32], 0.0, 1.0, &mut Rng::new(2, Stream::Init)).unwrap();
    let out = predict(&p, &config, &x, true).unwrap();
    assert_eq!(out.logits.shape(), &[1, 4, 32, 32, 32]);
    assert_eq!(out.attention.len(), 2 * 4);
    let finals: Vec<_> = out.attention.iter().filter(|a| a.level == 0).collect();
    assert_eq!(finals.len(), 2);
    for a in finals {
        assert_eq!(a.alpha.shape(), &[1, 1, 32, 32, 32]);
    }
    let again = predict(&p, &config, &x, false).unwrap();
    assert_eq!(again.logits, out.logits);
}

#[test]
fn every_variant_preserves_spatial_extents() {
    for c in variants() {
        let p: ModelParams<f64> = build_model(&c, &mut Rng::new(3, Stream::Init)).unwrap();
        for shape in [[1, 2, 8, 8, 8], [2, 2, 4, 8, 12]] {
            let x = Tensor::normal(&shape, 0.0, 1.0, &mut Rng::new(4, Stream::Init)).unwrap();
            let out = predict(&p, &c, &x, true).unwrap();
            assert_eq!(out.logits.shape(), &[shape[0], 3, shape[2], shape[3], shape[4]], "{c:?}");
            for a in &out.attention {
                assert_eq!(a.alpha.shape()[1], 1);
            }
        }
        let bad = Tensor::<f64>::zeros(&[1, 2, 6, 8, 8]).unwrap();
        assert!(predict(&p, &c, &bad, false).is_err());
        let wrong_channels = Tensor::<f64>::zeros(&[1, 3, 8, 8, 8]).unwrap();
        assert!(predict(&p, &c, &wrong_channels, false).is_err());
    }
}

#[test]
fn decoder_b_gates_are_disjoint_from_decoder_a() {
    let c = &variants()[2];
    let mut p: ModelParams<f64> = build_model(c, &mut Rng::new(7, Stream::Init)).unwrap();
    let x = Tensor::normal(&[1, 2, 8, 8, 8], 0.0, 1.0, &mut Rng::new(8, Stream::Init)).unwrap();
    let w = p.get_mut("headB/w").unwrap();
    *w = Tensor::zeros_like(w);
    let before = predict(&p, c, &x, false).unwrap().logits;
    let names: Vec<String> = p.names().filter(|n| n.starts_with("gateB/")).map(String::from).collect();
    assert!(!names.is_empty());
    let mut rng = Rng::new(9, Stream::Init);
    for n in names {
        let t = p.get_mut(&n).unwrap();
        *t = t.add(&Tensor::normal(t.shape(), 0.0, 1.0, &mut rng).unwrap()).unwrap();
    }
    let after = predict(&p, c, &x, false).unwrap().logits;
    assert_eq!(before.max_abs_diff(&after).unwrap(), 0.0);
    // Decoder A's gates do matter.
    let t = p.get_mut("gateA/0/psi_b").unwrap();
    *t = t.add(&Tensor::full(&[1], 3.0).unwrap()).unwrap();
    assert!(predict(&p, c, &x, false).unwrap().logits.max_abs_diff(&before).unwrap() > 0.0);
}

#[test]
fn described_dropout_rates_follow_channel_schedule() {
    let d = describe(&ArchitectureConfig::default(), 128).unwrap();
    let mut sites = 0;
    for l in &d.layers {
        if let Some(p) = l.dropout {
            sites += 1;
            let c = l.output[0];
            let want = if c <= 32 { 0.1 } else if c <= 128 { 0.2 } else { 0.3 };
            assert_eq!(p, want, "{}", l.name);
        }
    }
    assert_eq!(sites, 5 + 2 * 4);
    assert!(d.to_string().contains("total parameters"));
}
