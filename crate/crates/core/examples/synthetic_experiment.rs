//! Train on synthetic glyph scenes and report test recall.
//!
//! Usage: synthetic_experiment [arch] [K] [iterations] [lr] [batch]

use std::collections::BTreeMap;
use std::time::Instant;

use charprop::evaluation::{recall, GroundTruth};
use charprop::inference::{generate_proposals, PyramidConfig};
use charprop::network::{builtin_spec, Init, Model};
use charprop::raster::rgb_to_tensor;
use charprop::synth::{synth_scene, SynthConfig};
use charprop::templates::cluster_templates;
use charprop::training::{build_training_set, train, LearningRate, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arch = args.get(1).map_or("cpn-eng-tiny", String::as_str);
    let k: usize = args.get(2).map_or(Ok(4), |s| s.parse())?;
    let iterations: usize = args.get(3).map_or(Ok(20000), |s| s.parse())?;
    let lr: f64 = args.get(4).map_or(Ok(0.02), |s| s.parse())?;
    let batch: usize = args.get(5).map_or(Ok(64), |s| s.parse())?;

    let train_cfg = SynthConfig {
        seed: 1,
        ..Default::default()
    };
    let test_cfg = SynthConfig {
        seed: 2,
        ..Default::default()
    };
    let t0 = Instant::now();
    let train_scenes: Vec<_> = (0..500).map(|i| synth_scene(&train_cfg, i)).collect::<Result<_, _>>()?;
    let tensors: Vec<_> = train_scenes.iter().map(|s| rgb_to_tensor(&s.image)).collect();
    let boxes: Vec<_> = train_scenes.iter().map(|s| s.bboxes()).collect();
    let spec = builtin_spec(arch, k)?;
    let field = spec.input_size;
    let all: Vec<_> = boxes.iter().flatten().copied().collect();
    let templates = cluster_templates(&all, k, (field.0 as f64, field.1 as f64), Default::default())?;
    println!("templates {:?} sizes {:?}", templates.ratios(), templates.sizes());
    let samples = build_training_set(
        tensors.iter().zip(boxes.iter().map(Vec::as_slice)),
        &templates,
        field,
        &Default::default(),
        11,
    )?;
    let bg = templates.background();
    println!(
        "{} samples ({} positive), {:.1}s",
        samples.len(),
        samples.iter().filter(|s| s.class != bg).count(),
        t0.elapsed().as_secs_f64()
    );
    let model = Model::new(spec, templates, Init::He, 5)?;
    let config = TrainConfig {
        batch_size: batch,
        learning_rate: LearningRate {
            initial: lr,
            step: Some(iterations * 2 / 3),
            gamma: 0.1,
        },
        iterations,
        seed: 3,
        ..Default::default()
    };
    let t1 = Instant::now();
    let mut acc = [0.0; 3];
    let (model, _) = train(model, &samples, &config, |log| {
        acc[0] += log.loss.total;
        acc[1] += log.loss.cls;
        acc[2] += log.loss.reg;
        if log.iteration % 250 == 0 {
            println!(
                "iter {} loss {:.4} cls {:.4} reg {:.4} ({:.0}s)",
                log.iteration,
                acc[0] / 250.0,
                acc[1] / 250.0,
                acc[2] / 250.0,
                t1.elapsed().as_secs_f64()
            );
            acc = [0.0; 3];
        }
    })?;
    println!("train {:.1}s", t1.elapsed().as_secs_f64());

    let pyramid = PyramidConfig {
        max_scale: 1.7,
        min_scale: 0.3,
        score_threshold: 0.1,
        ..Default::default()
    };
    let t2 = Instant::now();
    let mut gt = GroundTruth::default();
    let mut props = BTreeMap::new();
    for i in 0..100 {
        let scene = synth_scene(&test_cfg, i)?;
        let id = format!("{i}");
        for b in scene.bboxes() {
            gt.insert(id.clone(), b, None);
        }
        let ps = generate_proposals(&model, &rgb_to_tensor(&scene.image), &pyramid)?;
        props.insert(id, ps);
    }
    println!("infer {:.1}s", t2.elapsed().as_secs_f64());
    for (iou, n) in [(0.5, 100), (0.6, 100), (0.7, 100), (0.5, 1000), (0.5, 20)] {
        let r = recall(&props, &gt, iou, Some(n))?;
        println!("recall iou {iou} top {n}: {:.4} ({}/{})", r.recall, r.matched, r.total);
    }
    Ok(())
}
