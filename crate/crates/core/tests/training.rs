// SPDX-License-Identifier: Apache-2.0

use dncplace::board::{BoardArch, PlacementState};
use dncplace::decomposition::{run_decomposition, PolicyScope, ReuseSetting, SubtaskPlan};
use dncplace::netlist::generate_synthetic;
use dncplace::nn::{ModelWeights, NetworkSpec, Partition};
use dncplace::ppo::PpoConfig;

fn spec() -> NetworkSpec {
    NetworkSpec {
        conv_channels: 3,
        residual_blocks: 1,
        gat_dim: 4,
        gat_heads: 1,
        embed_dim: 8,
        hidden_dim: 8,
        width: 5,
        height: 5,
    }
}

#[test]
fn checkpoint_files_follow_policy_scope() {
    let arch = BoardArch::perimeter_io(5, 5, 2);
    let nl = generate_synthetic(6, 4, 10, 3, 2).unwrap();
    let all: Vec<usize> = (0..nl.num_blocks()).collect();
    let base = PlacementState::new(&arch, nl.num_blocks());
    let plan = SubtaskPlan::new(&nl, &all, 2, 8, 2).unwrap();
    let cfg = PpoConfig {
        episodes_per_update: 4,
        ..PpoConfig::default()
    };
    for setting in ReuseSetting::ALL {
        let dir = tempfile::tempdir().unwrap();
        let r = run_decomposition(&arch, &nl, &base, &plan, setting, &spec(), &cfg, 1, Some(dir.path())).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        match setting.policy_scope {
            PolicyScope::Multi => assert_eq!(names, ["chunk0.json", "chunk1.json"]),
            PolicyScope::Single => assert_eq!(names, ["shared.json"]),
        }
        assert_eq!(names.len(), r.weights.len());
        for (name, w) in names.iter().zip(&r.weights) {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text, w.to_checkpoint());
            let back = ModelWeights::from_checkpoint(&text).unwrap();
            assert_eq!(
                back.partition_digest(Partition::Representation),
                w.partition_digest(Partition::Representation)
            );
        }
    }
}

#[test]
fn decomposition_is_deterministic() {
    let arch = BoardArch::perimeter_io(5, 5, 2);
    let nl = generate_synthetic(6, 4, 10, 3, 9).unwrap();
    let all: Vec<usize> = (0..nl.num_blocks()).collect();
    let base = PlacementState::new(&arch, nl.num_blocks());
    let plan = SubtaskPlan::new(&nl, &all, 3, 8, 1).unwrap();
    let cfg = PpoConfig {
        episodes_per_update: 4,
        ..PpoConfig::default()
    };
    let setting = ReuseSetting::from_number(4).unwrap();
    let a = run_decomposition(&arch, &nl, &base, &plan, setting, &spec(), &cfg, 5, None).unwrap();
    let b = run_decomposition(&arch, &nl, &base, &plan, setting, &spec(), &cfg, 5, None).unwrap();
    assert_eq!(a.curve_csv(Some("h")), b.curve_csv(Some("h")));
    assert_eq!(a.final_placement, b.final_placement);
    assert_eq!(a.weights[0].to_checkpoint(), b.weights[0].to_checkpoint());
}
