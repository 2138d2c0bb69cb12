use lfv_autodiff::gradcheck::relative_error;
use lfv_autodiff::{Tape, Var};
use lfv_core::lightfield::LightFieldVideo;
use lfv_core::warp::FlowField;
use lfv_core::Image;
use lfv_model::convert::{frame_tensor, image_tensor};
use lfv_model::losses::{loss_flow, loss_lf, loss_occ, loss_percep, loss_temp};
use lfv_model::{
    train, train_with, variance_masks, Network, NetworkConfig, PassOptions, TrainOptions,
    CSV_HEADER,
};
use lfv_scenegen::{make_dataset, SceneTemplate, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn template(max_speed: f32) -> SceneTemplate {
    SceneTemplate {
        height: 32,
        width: 32,
        frame_count: 3,
        disparity_range: [0.0, 1.5],
        max_speed,
        ..SceneTemplate::default()
    }
}

fn videos(n: usize, max_speed: f32, split: Split) -> Vec<LightFieldVideo> {
    make_dataset(n, &template(max_speed), 5, split)
        .unwrap()
        .into_iter()
        .map(|s| s.video)
        .collect()
}

fn config(warmup: usize, total: usize) -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        crop: 16,
        flow_cap: 4.0,
        learning_rate: 1e-3,
        warmup_iters: warmup,
        total_iters: total,
        seed: 11,
        ..NetworkConfig::default()
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn same_seed_same_loss_trace() {
    let data = videos(2, 1.0, Split::Train);
    let cfg = config(2, 4);
    let a = train(&data, &cfg, &TrainOptions::default()).unwrap();
    let b = train(&data, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.len(), 4);
    assert_eq!(a.records[1].phase, 1);
    assert_eq!(a.records[2].phase, 2);
    assert!(a.records[2].occ.is_some() && a.records[2].percep.is_some());
    assert!(a.records[0].occ.is_none());
    let other = train(
        &data,
        &NetworkConfig { seed: 12, ..cfg },
        &TrainOptions::default(),
    )
    .unwrap();
    assert_ne!(a.records, other.records);
}

#[test]
fn warmup_leaves_the_occlusion_net_untouched() {
    let data = videos(2, 1.0, Split::Train);
    let cfg = config(5, 5);
    let trained = train(&data, &cfg, &TrainOptions::default())
        .unwrap()
        .network;
    let fresh = Network::<f32>::new(cfg, 1).unwrap();
    let occ = fresh.occlusion_params();
    for id in fresh.store.ids() {
        let same = trained.store.get(id).data() == fresh.store.get(id).data();
        if occ.contains(&id) {
            assert!(same, "{} moved during warmup", fresh.store.name(id));
        }
    }
    let enc = fresh.store.id("enc1.weight").unwrap();
    assert_ne!(trained.store.get(enc).data(), fresh.store.get(enc).data());
}

#[test]
fn loss_trends_down() {
    let data = videos(4, 1.0, Split::Train);
    let out = train(&data, &config(200, 200), &TrainOptions::default()).unwrap();
    let totals: Vec<f64> = out.records.iter().map(|r| r.total).collect();
    assert!(totals.iter().all(|t| t.is_finite()));
    assert!(median(&totals[150..]) < median(&totals[..50]));
}

#[test]
fn flows_settle_on_static_clips() {
    let data = videos(4, 0.0, Split::Train);
    let net = train(&data, &config(150, 150), &TrainOptions::default())
        .unwrap()
        .network;
    let zero = FlowField::zeros(32, 32);
    for v in videos(2, 0.0, Split::Test) {
        let c = v.center_views();
        let out = net.synthesize_frame(&c[1], &c[0]).unwrap();
        assert!(out.flow_fw.mean_endpoint_error(&zero).unwrap() < 0.5);
        assert!(out.flow_bw.mean_endpoint_error(&zero).unwrap() < 0.5);
    }
}

#[test]
fn checkpoints_and_logs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("ckpt/model");
    let log = dir.path().join("logs/loss.csv");
    let data = videos(2, 1.0, Split::Train);
    let opts = TrainOptions {
        checkpoint: Some(base.clone()),
        checkpoint_every: 2,
        loss_log: Some(log.clone()),
    };
    let mut seen = 0;
    let out = train_with(&data, &config(2, 3), &opts, |_| seen += 1).unwrap();
    assert_eq!(seen, 3);
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3], out.records[2].csv_row());

    let loaded = Network::<f32>::load(&base).unwrap();
    assert_eq!(loaded.config, out.network.config);
    for id in out.network.store.ids() {
        assert_eq!(
            loaded.store.get(id).data(),
            out.network.store.get(id).data()
        );
    }
    let v = &data[0];
    let c = v.center_views();
    let a = out.network.synthesize_frame(&c[1], &c[0]).unwrap();
    let b = loaded.synthesize_frame(&c[1], &c[0]).unwrap();
    assert_eq!(a.lf_final.views(), b.lf_final.views());
}

#[test]
fn training_rejects_bad_input() {
    let cfg = config(1, 2);
    assert!(train(&[], &cfg, &TrainOptions::default()).is_err());
    let data = videos(1, 1.0, Split::Train);
    let big = NetworkConfig {
        crop: 40,
        ..cfg.clone()
    };
    assert!(train(&data, &big, &TrainOptions::default()).is_err());
    let bad = NetworkConfig {
        warmup_iters: 3,
        ..cfg
    };
    assert!(train(&data, &bad, &TrainOptions::default()).is_err());
}

/// Detached inputs captured on the first evaluation.
type Frozen = lfv_autodiff::Tensor<f64>;

/// Every phase-2 loss term on one 16×16 crop. Variance masks and the flows
/// entering the temporal term are detached in training, so they are held at
/// their first values here.
fn total_loss(
    net: &Network<f64>,
    tape: &mut Tape<f64>,
    frames: (&Image, &Image),
    gt: &lfv_core::lightfield::LightFieldFrame,
    frozen: &mut Option<[Frozen; 4]>,
) -> Var {
    let (frame_t, frame_prev) = frames;
    let [mt, mp, fw, bw] = frozen.get_or_insert_with(|| {
        let mut scratch = Tape::new();
        let p = net
            .forward(&mut scratch, frame_t, frame_prev, PassOptions::default())
            .unwrap();
        let mt =
            variance_masks(scratch.value(p.l_init), net.config.variance_threshold, 1.0).unwrap();
        let f = &p.features;
        let (_, lp) = net
            .synthesize_initial(&mut scratch, frame_prev, f.zeta_prev, f.skips_prev)
            .unwrap();
        let mp = variance_masks(scratch.value(lp), net.config.variance_threshold, 1.0).unwrap();
        let (fw, bw) = (scratch.value(p.o_fw).clone(), scratch.value(p.o_bw).clone());
        [mt, mp, fw, bw]
    });
    let pass = net
        .forward(
            tape,
            frame_t,
            frame_prev,
            PassOptions {
                refine: true,
                masks: Some(mt),
            },
        )
        .unwrap();
    let (lf, _) = pass.refined.unwrap();
    let g = tape.constant(frame_tensor(gt)).unwrap();
    let (global, local) = loss_lf(tape, lf, g).unwrap();
    let occ = loss_occ(tape, lf, g).unwrap();
    let percep = loss_percep(net, tape, lf, g).unwrap();
    let flow = loss_flow(tape, pass.luma_t, pass.luma_prev, pass.o_fw, pass.o_bw).unwrap();
    let f = &pass.features;
    let (_, lp_init) = net
        .synthesize_initial(tape, frame_prev, f.zeta_prev, f.skips_prev)
        .unwrap();
    let (lp, _) = net
        .occlusion_refine(tape, lp_init, mp, &image_tensor(frame_prev))
        .unwrap();
    let temp = loss_temp(tape, lf, lp, fw, bw).unwrap();
    let mut terms = vec![global, local, occ, percep];
    terms.extend(flow.loss);
    terms.extend(temp.loss);
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t).unwrap();
    }
    total
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let scene = &make_dataset(1, &template(1.0), 8, Split::Train).unwrap()[0];
    let cut = |img: &Image| img.crop(6, 6, 16, 16).unwrap();
    let gt = scene.video.frames()[1].map_views(|v| Ok(cut(v))).unwrap();
    let frame_t = gt.center().clone();
    let frame_prev = cut(scene.video.frames()[0].center());

    let mut net = Network::<f64>::new(config(0, 1), 1).unwrap();
    // Wake the zero-initialized refinement output so its inputs get gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out_w = net.store.id("occ.out.weight").unwrap();
    net.store
        .get_mut(out_w)
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = rng.gen_range(-0.05..0.05));

    let mut frozen = None;
    let mut tape = Tape::new();
    let total = total_loss(&net, &mut tape, (&frame_t, &frame_prev), &gt, &mut frozen);
    tape.backward(total).unwrap();
    let grads = tape.param_grads();

    let eps = 1e-6;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (id, g) in &grads {
        for _ in 0..2 {
            let k = rng.gen_range(0..g.len());
            let orig = net.store.get(*id).data()[k];
            let mut eval = |v: f64, net: &mut Network<f64>| {
                net.store.get_mut(*id).data_mut()[k] = v;
                let mut t = Tape::new();
                let l = total_loss(net, &mut t, (&frame_t, &frame_prev), &gt, &mut frozen);
                t.value(l).item()
            };
            let hi = eval(orig + eps, &mut net);
            let lo = eval(orig - eps, &mut net);
            net.store.get_mut(*id).data_mut()[k] = orig;
            analytic.push(g[k]);
            numeric.push((hi - lo) / (2.0 * eps));
        }
    }
    assert!(grads.len() >= 20);
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "relative error {err:e}");
}
