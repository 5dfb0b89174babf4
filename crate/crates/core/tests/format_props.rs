use f4flow_core::patch::{
    decode_dataset, rotate_patch, split_by_model, write_dataset_to, Axis, PatchPair, SplitKind, HR_VOXELS, LR_VOXELS,
};
use f4flow_core::seed;
use f4flow_core::volume::{decode_volume, encode_volume, Compartment, Field, FieldRef, FluidMask, ScalarField, VectorField, VolumeGrid};
use proptest::prelude::*;
use rand::Rng;

fn patch(seed_v: u64, model: u16) -> PatchPair {
    let mut rng = seed::rng(seed_v);
    PatchPair {
        lr_mag: (0..LR_VOXELS).map(|_| rng.gen_range(0.0..1.0)).collect(),
        lr_vel: (0..3 * LR_VOXELS).map(|_| rng.gen_range(-80.0..80.0)).collect(),
        hr_vel: (0..3 * HR_VOXELS).map(|_| rng.gen_range(-80.0..80.0)).collect(),
        hr_mask: (0..HR_VOXELS).map(|_| rng.gen_bool(0.3)).collect(),
        venc: 100.0,
        compartment: Compartment::ALL[(seed_v % 4) as usize],
        source_model: model,
    }
}

fn speeds(v: &[f32], m: usize) -> Vec<[u32; 3]> {
    // Rotations permute and negate components, so sorted |component|
    // triples are invariant exactly.
    let mut out: Vec<[u32; 3]> = (0..m)
        .map(|i| {
            let mut t = [v[i].abs(), v[m + i].abs(), v[2 * m + i].abs()].map(f32::to_bits);
            t.sort_unstable();
            t
        })
        .collect();
    out.sort_unstable();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn volume_round_trip_is_bit_exact(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, s in any::<u64>()) {
        let g = VolumeGrid::new(nx, ny, nz, 0.7).unwrap();
        let mut rng = seed::rng(s);
        let mut vals = || (0..g.len()).map(|_| rng.gen_range(-1e3f32..1e3)).collect::<Vec<f32>>();
        let mag = ScalarField::new(g, vals()).unwrap();
        let vel = VectorField::new(g, vals(), vals(), vals()).unwrap();
        let mask = FluidMask::new(g, (0..g.len()).map(|i| i % 3 == 0).collect()).unwrap();
        let bytes = encode_volume(
            &[("m", FieldRef::Scalar(&mag)), ("v", FieldRef::Vector(&vel)), ("k", FieldRef::Mask(&mask))],
            &g,
        ).unwrap();
        let (g2, fields) = decode_volume(&bytes).unwrap();
        prop_assert_eq!(g2, g);
        prop_assert_eq!(fields.len(), 3);
        prop_assert_eq!(&fields[0].1, &Field::Scalar(mag));
        prop_assert_eq!(&fields[1].1, &Field::Vector(vel));
        prop_assert_eq!(&fields[2].1, &Field::Mask(mask));
    }

    #[test]
    fn four_quarter_turns_are_identity(s in any::<u64>(), a in 0usize..3) {
        let p = patch(s, 0);
        let axis = Axis::ALL[a];
        let r = rotate_patch(&rotate_patch(&p, axis, 3).unwrap(), axis, 1).unwrap();
        prop_assert_eq!(&r, &p);
        let twice = rotate_patch(&rotate_patch(&p, axis, 1).unwrap(), axis, 1).unwrap();
        prop_assert_eq!(twice, rotate_patch(&p, axis, 2).unwrap());
    }

    #[test]
    fn rotations_preserve_speeds_and_fluid(s in any::<u64>(), a in 0usize..3, t in 1u8..4) {
        let p = patch(s, 0);
        let r = rotate_patch(&p, Axis::ALL[a], t).unwrap();
        prop_assert_eq!(r.hr_fluid_count(), p.hr_fluid_count());
        prop_assert_eq!(speeds(&r.hr_vel, HR_VOXELS), speeds(&p.hr_vel, HR_VOXELS));
        prop_assert_eq!(speeds(&r.lr_vel, LR_VOXELS), speeds(&p.lr_vel, LR_VOXELS));
    }

    #[test]
    fn splits_are_model_disjoint(n_models in 3u16..12, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let mut patches = Vec::new();
        for m in 0..n_models {
            for _ in 0..rng.gen_range(1..4) {
                let mut p = patch(0, m);
                p.hr_vel.truncate(0);
                patches.push(p);
            }
        }
        let split = split_by_model(&patches, [6, 2, 2], s).unwrap();
        let mut seen = vec![None; patches.len()];
        for kind in SplitKind::ALL {
            prop_assert!(!split.indices(kind).is_empty());
            for &i in split.indices(kind) {
                prop_assert!(seen[i].is_none());
                seen[i] = Some(kind);
            }
        }
        prop_assert!(seen.iter().all(Option::is_some));
        for (i, p) in patches.iter().enumerate() {
            for (j, q) in patches.iter().enumerate() {
                if p.source_model == q.source_model {
                    prop_assert_eq!(seen[i], seen[j]);
                }
            }
        }
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let patches: Vec<PatchPair> = (0..3).map(|i| patch(i, i as u16)).collect();
    let mut bytes = Vec::new();
    write_dataset_to(&mut bytes, &patches).unwrap();
    assert_eq!(decode_dataset(&bytes).unwrap(), patches);
    assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
}
