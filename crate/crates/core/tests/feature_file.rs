//! Feature files produced outside this crate, written here byte by byte from
//! the documented layout, drive the `file` provider end to end.

use vsod_core::config::{Config, Provider};
use vsod_core::features::{decode_features, load_features};
use vsod_core::model::Frame;
use vsod_core::par::Exec;
use vsod_core::pipeline::{compute_flows, run_saliency, segment, SaliencyInputs};
use vsod_core::Error;

const DR: usize = 6;
const DG: usize = 3;

fn two_tone(t: u32) -> Frame {
    let mut px = Vec::new();
    for _ in 0..16 {
        for x in 0..16 {
            px.extend_from_slice(&if x < 8 { [20, 30, 40] } else { [220, 200, 30] });
        }
    }
    Frame::new(t, 16, 16, px).unwrap()
}

struct Exported {
    bytes: Vec<u8>,
    regions: Vec<(u16, u32, u32, Vec<f32>)>,
}

/// Hand-rolled writer: header, region records, then global records.
fn export(regions: &[(u16, u32, u32)], frames: u32, drop_last: bool) -> Exported {
    let mut recs: Vec<(u16, u32, u32, Vec<f32>)> = regions
        .iter()
        .map(|&(s, t, r)| (s, t, r, (0..DR).map(|i| (r as f32 + 1.0) * (i as f32 + 0.5) + t as f32 * 0.25).collect()))
        .collect();
    if drop_last {
        recs.pop();
    }
    let mut b = Vec::new();
    b.extend_from_slice(b"STFT");
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&(DR as u32).to_le_bytes());
    b.extend_from_slice(&(DG as u32).to_le_bytes());
    b.extend_from_slice(&(recs.len() as u64).to_le_bytes());
    b.extend_from_slice(&u64::from(frames).to_le_bytes());
    for (s, t, r, v) in &recs {
        b.extend_from_slice(&s.to_le_bytes());
        b.extend_from_slice(&t.to_le_bytes());
        b.extend_from_slice(&r.to_le_bytes());
        v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
    }
    for t in 0..frames {
        b.extend_from_slice(&t.to_le_bytes());
        (0..DG).for_each(|i| b.extend_from_slice(&(t as f32 + i as f32).to_le_bytes()));
    }
    Exported { bytes: b, regions: recs }
}

fn mini_clip() -> (Vec<Frame>, Config, Vec<(u16, u32, u32)>) {
    let frames: Vec<Frame> = (0..3).map(two_tone).collect();
    let mut config = Config::default();
    config.set("scales", "2").unwrap();
    config.set("block_length", "3").unwrap();
    config.provider = Provider::File;
    let flows = compute_flows(&frames, &config, Exec::Sequential).unwrap();
    let seg = segment(&frames, &flows, &config, Exec::Sequential).unwrap();
    let mut keys = Vec::new();
    for s in &seg {
        for (t, rs) in s.region_sets.iter().enumerate() {
            keys.extend(rs.regions().iter().map(|r| (s.scale_id, t as u32, r.id)));
        }
    }
    (frames, config, keys)
}

#[test]
fn exported_file_loads_with_expected_counts_and_values() {
    let (_, _, keys) = mini_clip();
    assert_eq!(keys.len(), 6);
    let exported = export(&keys, 3, false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.stft");
    std::fs::write(&path, &exported.bytes).unwrap();
    let store = load_features(&path).unwrap();
    assert_eq!((store.region_count(), store.global_count()), (6, 3));
    assert_eq!((store.region_dim(), store.global_dim()), (DR, DG));
    for (s, t, r, v) in &exported.regions {
        let got = store.region(*s, *t, *r).unwrap();
        assert!(got.iter().zip(v).all(|(a, b)| *a == f64::from(*b)));
    }
    assert_eq!(store.global(2).unwrap(), &[2.0, 3.0, 4.0]);
}

#[test]
fn exported_file_drives_the_file_provider() {
    let (frames, config, keys) = mini_clip();
    let store = decode_features(&export(&keys, 3, false).bytes, "exported").unwrap();
    let inputs = SaliencyInputs {
        features: Some(store),
        ..SaliencyInputs::default()
    };
    let result = run_saliency(&frames, &config, inputs, Exec::Sequential).unwrap();
    assert_eq!(result.maps.len(), 3);
    assert!(result.maps.iter().all(|m| m.values().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn incomplete_export_is_rejected() {
    let (frames, config, keys) = mini_clip();
    let store = decode_features(&export(&keys, 3, true).bytes, "exported").unwrap();
    let inputs = SaliencyInputs {
        features: Some(store),
        ..SaliencyInputs::default()
    };
    let err = run_saliency(&frames, &config, inputs, Exec::Sequential).unwrap_err();
    assert!(matches!(err, Error::MissingFeature { .. }), "{err}");

    let mut truncated = export(&keys, 3, false).bytes;
    truncated.pop();
    assert!(matches!(decode_features(&truncated, "exported"), Err(Error::Malformed(_))));
}
