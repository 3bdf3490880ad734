use proptest::prelude::*;
use rm3d_core::dataset::{
    export_sample, import_raw_sample, import_sample, list_samples, normalize, normalize_value, parse_sample_name,
    quantize_u8, sample_file_name, ChannelThresholds, ExportOptions, SampleId,
};
use rm3d_core::propagation::{solve_volume, write_ray_records, MaterialParams, VolumeSolver};
use rm3d_core::scene::{generate_scene, place_transmitters, SceneParams};
use rm3d_core::volume::Channel;

#[test]
fn solved_scene_survives_export() {
    let params = SceneParams {
        seed: 9,
        nx: 24,
        ny: 20,
        nz: 4,
        building_count: (3, 5),
        footprint: (3.0, 6.0),
        street_margin: 1.0,
        ..SceneParams::default()
    };
    let scene = generate_scene(&params).unwrap();
    let tx = place_transmitters(&scene, 1, 3, 1.5).unwrap()[0];
    let raw = solve_volume(&scene, &tx, &MaterialParams::default()).unwrap();
    let norm = normalize(&raw, &ChannelThresholds::default()).unwrap();
    let solver = VolumeSolver::new(&scene, tx).unwrap();
    let rays: Vec<String> = (0..4).map(|k| write_ray_records(&solver, k)).collect();

    let dir = tempfile::tempdir().unwrap();
    let (i, j) = tx.cell_xy(&scene);
    let id = SampleId { bid: 7, x: i, y: j };
    export_sample(dir.path(), id, &norm, &ExportOptions { force: false, rays: Some(&rays) }).unwrap();

    assert_eq!(list_samples(dir.path()).unwrap(), vec![id]);
    assert_eq!(import_sample(dir.path(), id).unwrap(), quantize_u8(&norm).unwrap());
    let back = import_raw_sample(dir.path(), id).unwrap();
    assert_eq!(back.data(), norm.cast::<f32>().data());
    let ray_file = dir.path().join("propagation_ray/h2").join(sample_file_name(id, "txt"));
    assert_eq!(std::fs::read_to_string(ray_file).unwrap(), rays[1]);
}

proptest! {
    #[test]
    fn names_round_trip(bid in 0u64..1_000_000, x in 0usize..10_000, y in 0usize..10_000) {
        let id = SampleId { bid, x, y };
        prop_assert_eq!(parse_sample_name(&sample_file_name(id, "png")), Some(id));
    }

    #[test]
    fn names_outside_grammar_rejected(s in "[0-9XY_a-z.]{0,14}") {
        let ok = {
            let b = s.as_bytes();
            let parts: Vec<&str> = s.strip_suffix(".png").map(|r| r.split('_').collect()).unwrap_or_default();
            parts.len() == 3
                && !parts[0].is_empty() && parts[0].bytes().all(|c| c.is_ascii_digit())
                && parts[1].len() > 1 && parts[1].ends_with('X') && parts[1][..parts[1].len() - 1].bytes().all(|c| c.is_ascii_digit())
                && parts[2].len() > 1 && parts[2].ends_with('Y') && parts[2][..parts[2].len() - 1].bytes().all(|c| c.is_ascii_digit())
                && !b.is_empty()
        };
        prop_assert_eq!(parse_sample_name(&s).is_some(), ok, "{}", s);
    }

    #[test]
    fn normalization_monotone(a in -400.0f64..2000.0, b in -400.0f64..2000.0) {
        let thr = ChannelThresholds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for c in Channel::ALL {
            let r = thr.get(c);
            prop_assert!(normalize_value(lo, r) <= normalize_value(hi, r));
            let once = normalize_value(lo, r);
            prop_assert!((0.0..=1.0).contains(&once));
        }
    }
}
