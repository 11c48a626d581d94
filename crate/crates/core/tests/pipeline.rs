use splatpress_core::codec::{decode, encode, Ordering};
use splatpress_core::pipeline::{run_pipeline, PipelineConfig};
use splatpress_core::quantization::{
    fake_quantize, init_quantizers, qat_finetune, quantize_scene, AttributeBits, QatConfig,
};
use splatpress_core::render::{loss, rasterize, View};
use splatpress_core::synth::{make_scene, SynthSpec};
use splatpress_core::views::quantize_rgb8;
use splatpress_core::{metrics, Scene};

fn small_spec() -> SynthSpec {
    SynthSpec {
        seed: 3,
        n_gaussians: 96,
        fraction_redundant: 0.5,
        n_views: 3,
        width: 24,
        height: 24,
        ..SynthSpec::default()
    }
}

fn stored_views(views: &[View<f32>]) -> Vec<View<f32>> {
    views
        .iter()
        .map(|v| View {
            camera: v.camera.clone(),
            image: quantize_rgb8(&v.image),
        })
        .collect()
}

fn mean_loss(scene: &Scene, views: &[View<f32>]) -> f64 {
    views
        .iter()
        .map(|v| f64::from(loss(&rasterize(scene, &v.camera).unwrap(), &v.image).unwrap()))
        .sum::<f64>()
        / views.len() as f64
}

#[test]
fn qat_with_zero_steps_is_identity() {
    let (scene, views) = make_scene::<f32>(&small_spec()).unwrap();
    let qs = init_quantizers(&scene, &AttributeBits::default()).unwrap();
    let out = qat_finetune(&scene, &views, &qs, 0, &QatConfig::default(), 1).unwrap();
    assert_eq!(out.scene, scene);
    assert_eq!(out.quantizers, qs);
    assert!(out.losses.is_empty());
}

#[test]
fn qat_recovers_sh_quantization_damage() {
    let (scene, views) = make_scene::<f32>(&small_spec()).unwrap();
    let bits = AttributeBits::default();
    let qs = init_quantizers(&scene, &bits).unwrap();
    let before = mean_loss(&fake_quantize(&scene, &qs).unwrap(), &views);
    let out = qat_finetune(&scene, &views, &qs, 100, &QatConfig::default(), 7).unwrap();
    let after = mean_loss(&fake_quantize(&out.scene, &out.quantizers).unwrap(), &views);
    assert!(after <= before, "loss before QAT {before}, after {after}");
    assert!(out.quantizers.iter().zip(&qs).all(|(a, b)| a.bits == b.bits && a.step > 0.0));
}

#[test]
fn full_precision_quantization_is_near_lossless() {
    let (scene, views) = make_scene::<f32>(&small_spec()).unwrap();
    let qs = init_quantizers(&scene, &AttributeBits::uniform(32)).unwrap();
    let q = quantize_scene(&scene, &qs).unwrap();
    let decoded: Scene = decode(&encode(&q, Ordering::Morton).unwrap()).unwrap().scene.dequantize().unwrap();
    for v in &views {
        let p = metrics::psnr(&rasterize(&decoded, &v.camera).unwrap(), &v.image).unwrap();
        assert!(p >= 80.0, "{p} dB");
    }
}

#[test]
fn no_op_pipeline_encodes_the_input_at_initial_steps() {
    let (scene, views) = make_scene::<f32>(&small_spec()).unwrap();
    let cfg = PipelineConfig {
        rounds: 0,
        qat_steps: 0,
        ..PipelineConfig::desk(5, 0.3)
    };
    let out = run_pipeline(&scene, &stored_views(&views), &cfg).unwrap();
    let q = quantize_scene(&scene, &init_quantizers(&scene, &cfg.bits).unwrap()).unwrap();
    assert_eq!(out.container, encode(&q, Ordering::Morton).unwrap());
    assert_eq!(out.report.final_count, scene.len());
    assert!(out.report.rounds.is_empty());
}

#[test]
fn pipeline_output_decodes_and_counts_never_grow() {
    let (scene, views) = make_scene::<f32>(&small_spec()).unwrap();
    let cfg = PipelineConfig {
        prune_interval: 20,
        final_finetune_steps: 40,
        qat_steps: 40,
        ..PipelineConfig::desk(9, 0.3)
    };
    let out = run_pipeline(&scene, &stored_views(&views), &cfg).unwrap();
    let c = decode(&out.container).unwrap();
    assert!(c.morton);
    assert_eq!(c.scene.dequantize::<f32>().unwrap(), out.decoded);
    assert_eq!(encode(&c.scene, Ordering::Morton).unwrap(), out.container);

    let r = &out.report;
    assert!(r.min_psnr_vs_input.is_finite() && r.min_psnr_vs_input > 0.0);
    assert_eq!(r.rounds.len(), 4);
    let mut prev = scene.len();
    for round in &r.rounds {
        assert_eq!(round.count_before, prev);
        assert!(round.kept_count <= round.count_before);
        prev = round.kept_count;
    }
    assert_eq!(r.final_count, prev);
    assert_eq!(r.opacity.after.iter().sum::<u64>() as usize, r.final_count);
    let json = serde_json::to_string(r).unwrap();
    assert!(json.contains("\"entropy\""));
}

#[test]
fn pipeline_rejects_empty_view_list() {
    let (scene, _) = make_scene::<f32>(&small_spec()).unwrap();
    assert!(run_pipeline(&scene, &[], &PipelineConfig::desk(1, 0.3)).is_err());
}
