use std::sync::Arc;

use lpnet::body::TemplateConfig;
use lpnet::generators::GeneratorConfig;
use lpnet::harness::{evaluate, read_log, train, Checkpoint, TrainConfig, Trainer};
use lpnet::synth::{Dataset, Split, SynthConfig};

#[test]
fn generate_train_reload_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SynthConfig {
        resolution: 32,
        num_figures: 2,
        num_backgrounds: 1,
        train_poses: 4,
        test_poses: 2,
        template: TemplateConfig::tiny(),
        seed: 11,
        ..SynthConfig::default()
    };
    Dataset::generate(&synth).unwrap().write(&data).unwrap();

    let config = TrainConfig {
        dataset: data.clone(),
        output: dir.path().join("run"),
        resolution: 32,
        batch_size: 2,
        steps: Some(3),
        model: GeneratorConfig {
            fg_widths: [4, 4, 6, 6],
            adcnet_width: 4,
            adcnet_hidden: 8,
            bg_widths: [4, 4, 6],
            bg_res_blocks: 1,
            ..GeneratorConfig::default()
        },
        disc_width: 4,
        ..TrainConfig::default()
    };
    let summary = train(config, false, |_| {}).unwrap();
    assert_eq!(summary.steps, 3);
    let log = read_log(&summary.log).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.iter().all(|r| r.loss_g.is_finite() && r.loss_d.is_finite()));

    let ds = Arc::new(Dataset::load(&data).unwrap());
    let ckpt = Checkpoint::load(&summary.checkpoint).unwrap();
    assert_eq!(ckpt.step, 3);
    let t = Trainer::from_checkpoint(&ckpt, ds.clone()).unwrap();
    let report = evaluate(&t.net, &ds, Split::Test, 2).unwrap();
    assert_eq!(report.pairs, 4);
    assert!(report.ssim.is_finite() && report.l1.is_finite());
}
