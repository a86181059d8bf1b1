use panorad_core::geometry::{EquirectCamera, FisheyeCamera, Pose, Vec3};
use panorad_core::imaging::{to_f32, to_u8, Mask};
use panorad_core::ingest::{stitch_dual_fisheye, PanoramaFrame, RigCalibration};
use panorad_core::metrics::psnr;
use panorad_core::nerf::{
    checkpoint, render_panorama_view, train, FieldConfig, HashGridConfig, RadianceField, TrainConfig,
};
use panorad_core::oracle::{acceptance_room, wall_scene};
use panorad_core::pointcloud::PointCloud;
use panorad_core::stereo::{clean_depth, fuse, patchmatch_depth, MatchConfig};
use proptest::prelude::*;
use rand::SeedableRng;

#[test]
fn stitched_fisheye_pair_matches_direct_panorama() {
    let scene = acceptance_room();
    let pose = Pose::from_translation(Vec3::new(0.2, 0.1, -0.3));
    let lens = FisheyeCamera::new(384, 384, 200f64.to_radians()).unwrap();
    let rig = RigCalibration::back_to_back(lens, lens, 10f64.to_radians()).unwrap();
    let back_pose = pose.compose(&Pose::new(rig.back_rotation, Vec3::zeros()));
    let front = scene.render_fisheye(&pose, &lens).unwrap();
    let back = scene.render_fisheye(&back_pose, &lens).unwrap();
    let cam = EquirectCamera::new(256, 128).unwrap();
    let (stitched, mask) = stitch_dual_fisheye(&front.image, &back.image, &rig, &cam).unwrap();
    assert_eq!(mask.count_valid(), cam.pixel_count());
    let direct = scene.render_panorama(&pose, &cam).unwrap();
    // resampling blurs checker edges; the pair must still agree closely
    let p = psnr(&stitched, &direct.image, &mask).unwrap();
    assert!(p > 20.0, "stitched vs direct psnr {p}");
}

#[test]
fn wall_stereo_fuses_onto_the_plane() {
    let scene = wall_scene(2.5, true);
    // at 2.5 m the wave texture needs ~256 px to stay well above Nyquist
    let cam = EquirectCamera::new(256, 128).unwrap();
    let frames: Vec<PanoramaFrame> = [-0.15, 0.0, 0.15]
        .iter()
        .map(|x| {
            let pose = Pose::from_translation(Vec3::new(*x, 0.0, 0.0));
            let r = scene.render_panorama_supersampled(&pose, &cam, 4).unwrap();
            PanoramaFrame::new(to_u8(&r.image), pose, Mask::filled(256, 128, true), 0.0, 0).unwrap()
        })
        .collect();
    let cfg = MatchConfig {
        d_min: 0.5,
        d_max: 8.0,
        min_consistent_views: 1,
        ..Default::default()
    };
    let maps: Vec<_> = (0..3)
        .map(|k| {
            let views: Vec<usize> = (0..3).filter(|v| *v != k).collect();
            patchmatch_depth(&frames, k, &views, &cfg).unwrap()
        })
        .collect();
    let cleaned = clean_depth(&maps, &frames, &cfg).unwrap();
    let fused = fuse(&cleaned, &frames, 0.05).unwrap();
    assert!(fused.cloud.len() > 100, "{} points", fused.cloud.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wall.ply");
    fused.cloud.write_ply(&path).unwrap();
    let back = PointCloud::read_ply(&path).unwrap();
    assert_eq!(back, fused.cloud);
    // within 45° of the wall normal; grazing parts of the wall are unreliable
    let front: Vec<_> = back
        .positions
        .iter()
        .filter(|p| p[0].abs() < 2.5 && p[1].abs() < 2.5)
        .collect();
    let on_plane = front.iter().filter(|p| (p[2] - 2.5).abs() < 0.1).count();
    assert!(
        on_plane as f64 > 0.95 * front.len() as f64,
        "{on_plane} of {}",
        front.len()
    );
}

#[test]
fn trained_field_survives_checkpoint() {
    let scene = acceptance_room();
    let cam = EquirectCamera::new(32, 16).unwrap();
    let frames: Vec<PanoramaFrame> = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.2)]
        .iter()
        .map(|c| {
            let pose = Pose::from_translation(*c);
            let r = scene.render_panorama(&pose, &cam).unwrap();
            PanoramaFrame::new(to_u8(&r.image), pose, Mask::filled(32, 16, true), 0.0, 0).unwrap()
        })
        .collect();
    let cfg = FieldConfig {
        grid: HashGridConfig {
            levels: 4,
            table_size: 1 << 10,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 32,
        },
        hidden_width: 16,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mut field = RadianceField::<f32>::new(cfg, scene.bounds, 0.05, scene.bounds.diagonal(), &mut rng).unwrap();
    let tc = TrainConfig {
        rays_per_batch: 256,
        samples_per_ray: 16,
        iterations: 60,
        ..Default::default()
    };
    let report = train(&mut field, &frames, &tc, |_| {}).unwrap();
    assert!(report.losses[59] < report.losses[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pnrf");
    checkpoint::save(&field, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let a = render_panorama_view(&field, &frames[0].pose, &cam, 16).unwrap();
    let b = render_panorama_view(&loaded, &frames[0].pose, &cam, 16).unwrap();
    assert_eq!(a.image, b.image);
    let full = Mask::filled(32, 16, true);
    assert!(psnr(&a.image, &to_f32(&frames[0].image), &full).unwrap().is_finite());
}

proptest! {
    #[test]
    fn equirect_round_trip_any_size(w in 2u32..2048, fu in 0.0f64..1.0, fv in 0.0f64..1.0) {
        let w = w * 2;
        let cam = EquirectCamera::new(w, w / 2).unwrap();
        let (u, v) = (fu * (w - 1) as f64, fv * (w / 2 - 1) as f64);
        let (u2, v2) = cam.direction_to_pixel(&cam.pixel_to_direction(u, v).unwrap());
        let du = (u2 - u).rem_euclid(w as f64);
        prop_assert!(du.min(w as f64 - du) < 1e-6 && (v2 - v).abs() < 1e-6);
    }

    #[test]
    fn pose_inverse_undoes_transform(
        q in prop::array::uniform4(-1.0f64..1.0),
        t in prop::array::uniform3(-10.0f64..10.0),
        x in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let pose = Pose::from_wxyz(q.map(|c| c / n), t).unwrap();
        let p = Vec3::from(x);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }
}
