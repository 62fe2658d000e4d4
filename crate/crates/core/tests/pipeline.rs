use mbtrack::io::{load_sequence, write_sequence, SequenceMeta, TrackTable};
use mbtrack::linearize::FeatureSet;
use mbtrack::segmentation::segment;
use mbtrack::synthlab::{generate, Preset};
use mbtrack::tracker::{track_frame, track_sequence, Method, TrackerConfig};
use nalgebra::DVector;

#[test]
fn klt_follows_a_translating_card() {
    let seq = generate(Preset::PureTranslation, 3).unwrap();
    let tracks = track_sequence(
        &seq.frames,
        &seq.tracks[0],
        &TrackerConfig::with_method(Method::Klt),
    )
    .unwrap();
    let last = seq.n_frames() - 1;
    for (p, q) in tracks.positions[last].iter().zip(&seq.tracks[last]) {
        assert!((p[0] - q[0]).hypot(p[1] - q[1]) < 0.2, "{p:?} vs {q:?}");
    }
}

#[test]
fn multibody_coefficients_separate_two_bodies() {
    let seq = generate(Preset::TwoBody, 5).unwrap();
    let mut keep: Vec<usize> = seq.body_members(0).into_iter().take(10).collect();
    keep.extend(seq.body_members(1).into_iter().take(10));
    let centers = keep.iter().map(|&i| seq.tracks[0][i]).collect();
    let fs = FeatureSet::new(centers, 3);
    let n = fs.len();
    let cfg = TrackerConfig::with_method(Method::Multibody);
    let res = track_frame(
        &seq.frames[0],
        &seq.frames[1],
        &fs,
        &cfg,
        &DVector::zeros(2 * n),
        &vec![false; n],
    )
    .unwrap();
    for (k, &i) in keep.iter().enumerate() {
        let truth = [
            seq.tracks[1][i][0] - seq.tracks[0][i][0],
            seq.tracks[1][i][1] - seq.tracks[0][i][1],
        ];
        let d = res.u[k];
        assert!((d[0] - truth[0]).hypot(d[1] - truth[1]) < 0.1);
    }
    let truth: Vec<usize> = res.c_index.iter().map(|&k| seq.labels[keep[k]]).collect();
    let seg = segment(res.c.as_ref().unwrap(), 2, 0, Some(&truth)).unwrap();
    assert_eq!(seg.error_rate, Some(0.0));
}

#[test]
fn sequence_directory_round_trip() {
    let seq = generate(Preset::Static, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sequence(
        dir.path(),
        &seq,
        &seq.frames,
        &SequenceMeta::from_sequence(&seq),
    )
    .unwrap();
    let loaded = load_sequence(dir.path()).unwrap();
    assert_eq!(loaded.frames.len(), seq.n_frames());
    for (a, b) in loaded.frames.iter().zip(&seq.frames) {
        let worst = a
            .data()
            .iter()
            .zip(b.data())
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(worst <= 0.5 / 65535.0 + 1e-12);
    }
    assert_eq!(loaded.truth.unwrap(), TrackTable::from_sequence(&seq));
    assert_eq!(loaded.meta.unwrap().features, seq.n_features());
    let labels = loaded.labels.unwrap();
    assert!(labels.values().zip(&seq.labels).all(|(a, b)| a == b));
}
