use lfv_core::lightfield::{
    extract_epi, refocus, variance_image, variance_mask, AngularCoord, EpiSlice, ThresholdPolicy,
};
use lfv_core::metrics::{psnr, sharpness};
use lfv_core::warp::{self, ValidMask};
use lfv_core::Image;
use lfv_scenegen::*;
use proptest::prelude::*;

fn noise(seed: u64) -> Texture {
    Texture::Noise {
        seed,
        cell: 8.0,
        contrast: 0.9,
    }
}

fn plane(d: f32, velocity: [f32; 2], frames: usize) -> SceneSpec {
    SceneSpec {
        height: 48,
        width: 64,
        channels: 1,
        frame_count: frames,
        eta_scene: 1.0,
        seed: 0,
        layers: vec![Layer {
            disparity: d,
            texture: noise(17),
            silhouette: Silhouette::Full,
            velocity,
        }],
    }
}

fn interior(img: &Image, m: usize) -> Image {
    img.crop(m, m, img.height() - 2 * m, img.width() - 2 * m)
        .unwrap()
}

#[test]
fn static_zero_disparity_plane_is_constant_everywhere() {
    let video = render_video(&plane(0.0, [0.0, 0.0], 3)).unwrap();
    let first = video.frames()[0].center().clone();
    for f in video.frames() {
        assert!(f.views().iter().all(|v| *v == first));
    }
}

#[test]
fn rendering_is_deterministic() {
    let spec = random_spec(&SceneTemplate::default(), 77).unwrap();
    assert_eq!(render_video(&spec).unwrap(), render_video(&spec).unwrap());
}

/// Sub-pixel shift of `row` relative to `reference`, by exhaustive search.
fn best_shift(reference: &[f32], row: &[f32]) -> f32 {
    let w = reference.len();
    let sample = |s: f32, x: usize| {
        let p = (x as f32 - s).clamp(0.0, (w - 1) as f32);
        let i = (p.floor() as usize).min(w - 2);
        let a = p - i as f32;
        reference[i] * (1.0 - a) + reference[i + 1] * a
    };
    let mut best = (f32::INFINITY, 0.0);
    for k in -1500..=1500 {
        let s = k as f32 * 0.01;
        let err: f32 = (16..w - 16).map(|x| (row[x] - sample(s, x)).powi(2)).sum();
        if err < best.0 {
            best = (err, s);
        }
    }
    best.1
}

fn epi_slope(epi: &Image) -> f32 {
    let w = epi.width();
    let center: Vec<f32> = (0..w).map(|x| epi.get(0, 4, x)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..9 {
        let u = r as f32 - 4.0;
        let row: Vec<f32> = (0..w).map(|x| epi.get(0, r, x)).collect();
        num += u * best_shift(&center, &row);
        den += u * u;
    }
    num / den
}

#[test]
fn epi_stripes_follow_the_plane_disparity() {
    for d in [0.0, 0.7, 1.5, 2.6] {
        let video = render_video(&plane(d, [0.0, 0.0], 1)).unwrap();
        let epi = extract_epi(&video.frames()[0], EpiSlice::Row { y: 24, v: 0 }).unwrap();
        let slope = epi_slope(&epi);
        assert!((slope - d).abs() < 0.1, "d = {d}, slope = {slope}");
    }
}

#[test]
fn refocus_at_plane_disparity_reproduces_center() {
    let video = render_video(&plane(1.5, [0.0, 0.0], 1)).unwrap();
    let frame = &video.frames()[0];
    let r = refocus(frame, 1.5).unwrap();
    let m = 8;
    let p = psnr(&interior(&r, m), &interior(frame.center(), m)).unwrap();
    assert!(p >= 40.0, "psnr {p}");
    let s = |d: f32| sharpness(&interior(&refocus(frame, d).unwrap(), m), 1).unwrap();
    assert!(s(1.5) > s(0.5) && s(1.5) > s(2.5));
}

#[test]
fn shift_plus_gt_flow_reproduces_single_plane_views() {
    for (i, d) in [0.3f32, 1.0, 1.8, 2.9].into_iter().enumerate() {
        let mut spec = plane(d, [1.0, -1.0], 2);
        spec.layers[0].texture = noise(100 + i as u64);
        let video = render_video(&spec).unwrap();
        for (t, frame) in video.frames().iter().enumerate() {
            for coord in AngularCoord::all() {
                let shifted = warp::shift_input(frame.center(), coord, 1.0).unwrap();
                let flow = gt_appearance_flow(&spec, t, coord, 1.0).unwrap();
                let synth = warp::bilinear_warp(&shifted, &flow).unwrap();
                let (a, b) = (interior(&synth, 16), interior(frame.view(coord), 16));
                let mae: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y).abs() as f64)
                    .sum::<f64>()
                    / a.len() as f64;
                assert!(mae < 1e-3, "d={d} t={t} {coord:?}: mae {mae}");
            }
        }
    }
}

#[test]
fn appearance_flow_closed_forms() {
    let at = |d: f32, coord: AngularCoord| {
        let f = gt_appearance_flow(&plane(d, [0.0, 0.0], 1), 0, coord, 1.0).unwrap();
        (f.at(5, 7), f.max_norm())
    };
    let c = AngularCoord::new(3, -2).unwrap();
    assert_eq!(at(1.0, c).1, 0.0);
    // content sits d·u from the center position, shift moved it η·u
    let ((fx, fy), _) = at(2.0, AngularCoord::new(2, 0).unwrap());
    assert_eq!((fx, fy), (-2.0, 0.0));
}

#[test]
fn static_scene_has_zero_flow_and_temporal_error() {
    let mut spec = random_spec(&SceneTemplate::default(), 4).unwrap();
    spec.layers.iter_mut().for_each(|l| l.velocity = [0.0, 0.0]);
    spec.frame_count = 3;
    let video = render_video(&spec).unwrap();
    let gt = video.ground_truth().unwrap();
    assert!(gt[0].flow_to_prev.is_none());
    for t in 1..3 {
        let f = gt[t].flow_to_prev.as_ref().unwrap();
        assert_eq!(f.max_norm(), 0.0);
        let mask = ValidMask::interior(spec.height, spec.width, 4);
        let e = warp::temporal_error(&video.frames()[t], &video.frames()[t - 1], f, &mask).unwrap();
        assert_eq!(e, 0.0);
    }
}

#[test]
fn integer_motion_gt_flow_gives_zero_temporal_error() {
    let spec = plane(1.2, [2.0, -1.0], 3);
    let video = render_video(&spec).unwrap();
    let gt = video.ground_truth().unwrap();
    for t in 1..3 {
        let f = gt[t].flow_to_prev.as_ref().unwrap();
        let b = gt[t].flow_from_prev.as_ref().unwrap();
        assert_eq!(f.at(0, 0), (2.0, -1.0));
        assert_eq!(b.at(0, 0), (-2.0, 1.0));
        let mask = ValidMask::interior(spec.height, spec.width, 4)
            .and(&warp::valid_mask(f, b, 1.0).unwrap())
            .unwrap();
        let e = warp::temporal_error(&video.frames()[t], &video.frames()[t - 1], f, &mask).unwrap();
        assert!(e < 1e-6, "{e}");
    }
}

fn flat_two_layer(d_front: f32, silhouette: Silhouette) -> SceneSpec {
    SceneSpec {
        height: 40,
        width: 40,
        channels: 1,
        frame_count: 1,
        eta_scene: 1.0,
        seed: 0,
        layers: vec![
            Layer {
                disparity: 0.0,
                texture: Texture::Flat { value: 0.2 },
                silhouette: Silhouette::Full,
                velocity: [0.0, 0.0],
            },
            Layer {
                disparity: d_front,
                texture: Texture::Flat { value: 0.8 },
                silhouette,
                velocity: [0.0, 0.0],
            },
        ],
    }
}

#[test]
fn variance_mask_is_exactly_the_occlusion_band_for_flat_layers() {
    let spec = flat_two_layer(
        1.5,
        Silhouette::Rect {
            x0: 14.0,
            y0: 12.0,
            x1: 27.0,
            y1: 25.0,
        },
    );
    let video = render_video(&spec).unwrap();
    let frame = &video.frames()[0];
    let var = variance_image(frame).unwrap();
    let masks = variance_mask(&var, ThresholdPolicy::Absolute(1e-6), 0.0).unwrap();
    let occ = &video.ground_truth().unwrap()[0].occlusion;
    assert_eq!(&masks[AngularCoord::CENTER.index()], occ);
    let band = occ.data().iter().filter(|&&v| v == 1.0).count();
    // The rectangle sweeps 6 px beyond each edge at d = 1.5 over u in [-4, 4].
    assert!(band > 0 && band < 40 * 40);
}

#[test]
fn layer_occlusion_masks_cover_the_union() {
    let spec = flat_two_layer(
        2.0,
        Silhouette::Disk {
            cx: 20.0,
            cy: 20.0,
            r: 7.0,
        },
    );
    let video = render_video(&spec).unwrap();
    let gt = &video.ground_truth().unwrap()[0];
    assert_eq!(gt.layer_occlusion.len(), 2);
    for p in 0..40 * 40 {
        let any = gt.layer_occlusion.iter().any(|m| m.data()[p] == 1.0);
        assert_eq!(any, gt.occlusion.data()[p] == 1.0);
    }
    // the disparity map shows the disk at its own depth
    assert_eq!(gt.disparity.get(0, 20, 20), 2.0);
    assert_eq!(gt.disparity.get(0, 0, 0), 0.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = plane(1.0, [0.0, 0.0], 1);
    s.layers.clear();
    assert!(render_video(&s).is_err());
    let s = plane(4.0, [0.0, 0.0], 1); // 16 >= 48/4
    assert!(render_video(&s).is_err());
    let mut s = flat_two_layer(
        0.0,
        Silhouette::Disk {
            cx: 1.0,
            cy: 1.0,
            r: 1.0,
        },
    );
    assert!(s.validate().is_err()); // equal disparities
    s.layers[1].silhouette = Silhouette::Full;
    s.layers[1].disparity = 1.0;
    assert!(s.validate().is_err()); // two full planes
}

#[test]
fn dataset_respects_template_ranges_and_splits() {
    let template = SceneTemplate {
        height: 48,
        width: 48,
        frame_count: 2,
        ..SceneTemplate::default()
    };
    let train = make_dataset(4, &template, 11, Split::Train).unwrap();
    let test = make_dataset(4, &template, 11, Split::Test).unwrap();
    for scene in train.iter().chain(&test) {
        let n = scene.spec.layers.len();
        assert!((2..=4).contains(&n));
        for gt in scene.video.ground_truth().unwrap() {
            assert!(gt
                .disparity
                .data()
                .iter()
                .all(|&d| (0.0..=3.0).contains(&d)));
        }
        for l in &scene.spec.layers {
            assert!(l.velocity.iter().all(|v| v.abs() <= 2.0));
        }
    }
    for a in &train {
        assert!(test.iter().all(|b| a.spec != b.spec));
    }
}

#[test]
fn scene_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let template = SceneTemplate {
        height: 52,
        width: 52,
        frame_count: 2,
        ..SceneTemplate::default()
    };
    let scene = make_dataset(1, &template, 3, Split::Train)
        .unwrap()
        .remove(0);
    write_scene(dir.path(), &scene, lfv_core::io::PixelFormat::Pfm).unwrap();
    let back = lfv_core::io::read_video(dir.path()).unwrap();
    assert_eq!(back, scene.video);
    let text = std::fs::read_to_string(dir.path().join(SCENE_FILE)).unwrap();
    let spec: SceneSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, scene.spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn occlusion_matches_view_disagreement(seed in 0u64..10_000) {
        // Distinct flat layers: a pixel varies across views iff its visible layer does.
        let template = SceneTemplate { height: 52, width: 52, frame_count: 1, max_speed: 0.0, ..SceneTemplate::default() };
        let mut spec = random_spec(&template, seed).unwrap();
        let n = spec.layers.len();
        for (k, l) in spec.layers.iter_mut().enumerate() {
            l.texture = Texture::Flat { value: 0.1 + 0.8 * k as f32 / n as f32 };
        }
        let video = render_video(&spec).unwrap();
        let var = variance_image(&video.frames()[0]).unwrap();
        let occ = &video.ground_truth().unwrap()[0].occlusion;
        for (v, o) in var.data().iter().zip(occ.data()) {
            prop_assert_eq!(*v > 0.0, *o == 1.0);
        }
    }
}
