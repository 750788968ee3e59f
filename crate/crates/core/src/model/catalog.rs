//! Ready-made model specifications used by the experiments and tests.

use std::collections::BTreeMap;

use super::{
    Boundary, GridSpec, InitialState, ModelSpec, Reaction, ReactionSet, ReceiverSpec,
    TransmitterSpec, VoxelRef, SIGNAL,
};

pub const VOXEL_WIDTH: f64 = 1.0 / 3.0;
pub const DIFFUSION_COEFFICIENT: f64 = 1.0;
pub const BINDING_RATE_CONSTANT: f64 = 0.005;
pub const UNBINDING_RATE: f64 = 1.0;

fn receiver(voxel: [u32; 3], receptors: u32) -> ReceiverSpec {
    ReceiverSpec {
        voxel: VoxelRef::Coords(voxel),
        receptors,
        binding_rate_constant: BINDING_RATE_CONSTANT,
        unbinding_rate: UNBINDING_RATE,
    }
}

fn sources(rates: &[f64]) -> Vec<ReactionSet> {
    rates.iter().map(|&r| ReactionSet::constant_source(r)).collect()
}

/// A 3×1×1 reflecting line: transmitter at one end, receiver at the other,
/// one constant-rate source per symbol.
pub fn line_3x1x1(rates: &[f64], receptors: u32) -> ModelSpec {
    ModelSpec {
        version: super::MODEL_FORMAT_VERSION,
        grid: GridSpec::new(3, 1, 1, VOXEL_WIDTH, DIFFUSION_COEFFICIENT),
        transmitter: TransmitterSpec {
            voxel: VoxelRef::Coords([1, 1, 1]),
            species: vec![],
            symbols: sources(rates),
        },
        receiver: Some(receiver([3, 1, 1], receptors)),
        initial: vec![],
    }
}

/// A 6×6×3 box whose exterior faces absorb at d/50, transmitter at (2,3,2)
/// and receiver at (5,3,2).
pub fn box_6x6x3(rates: &[f64], receptors: u32) -> ModelSpec {
    let grid = GridSpec::new(6, 6, 3, VOXEL_WIDTH, DIFFUSION_COEFFICIENT);
    let escape = grid.hop_rate() / 50.0;
    ModelSpec {
        version: super::MODEL_FORMAT_VERSION,
        grid: grid.with_boundary(Boundary::absorbing(escape)),
        transmitter: TransmitterSpec {
            voxel: VoxelRef::Coords([2, 3, 2]),
            species: vec![],
            symbols: sources(rates),
        },
        receiver: Some(receiver([5, 3, 2], receptors)),
        initial: vec![],
    }
}

/// Replaces the symbols of `base` with two sources of equal mean rate:
/// symbol 0 emits at `kappa`; symbol 1 is a gene switching between ON and
/// OFF at `switching` per second that emits at `2 kappa` while ON. The gene
/// starts ON or OFF with probability one half each.
pub fn on_off_pair(base: &ModelSpec, kappa: f64, switching: f64) -> ModelSpec {
    let mut spec = base.clone();
    spec.transmitter.species = vec!["RNA_ON".into(), "RNA_OFF".into()];
    spec.transmitter.symbols = vec![
        ReactionSet::constant_source(kappa),
        ReactionSet::new(
            "switching gene",
            vec![
                Reaction::new(&["RNA_ON"], &["RNA_OFF"], switching),
                Reaction::new(&["RNA_OFF"], &["RNA_ON"], switching),
                Reaction::new(&["RNA_ON"], &["RNA_ON", SIGNAL], 2.0 * kappa),
            ],
        ),
    ];
    let start = |name: &str| InitialState {
        weight: 0.5,
        species: BTreeMap::from([(name.to_string(), 1)]),
        signal: vec![],
    };
    spec.initial = vec![start("RNA_ON"), start("RNA_OFF")];
    spec
}

/// A three-voxel line with a small reaction network at the transmitter:
/// one copy each of RNA1 and RNA2 produce F and G at `k[0]` and `k[1]`,
/// F converts to signalling molecules at `k[2]` per molecule and signalling
/// molecules are destroyed by G at `k[3]` per pair. Symbol 1 swaps the two
/// production rates.
pub fn three_voxel_example(k: [f64; 4], receptors: u32) -> ModelSpec {
    let network = |kf: f64, kg: f64| {
        vec![
            Reaction::new(&["RNA1"], &["RNA1", "F"], kf),
            Reaction::new(&["RNA2"], &["RNA2", "G"], kg),
            Reaction::new(&["F"], &[SIGNAL], k[2]),
            Reaction::new(&[SIGNAL, "G"], &[], k[3]),
        ]
    };
    ModelSpec {
        version: super::MODEL_FORMAT_VERSION,
        grid: GridSpec::new(3, 1, 1, VOXEL_WIDTH, DIFFUSION_COEFFICIENT),
        transmitter: TransmitterSpec {
            voxel: VoxelRef::Index(1),
            species: vec!["RNA1".into(), "RNA2".into(), "F".into(), "G".into()],
            symbols: vec![
                ReactionSet::new("network", network(k[0], k[1])),
                ReactionSet::new("swapped network", network(k[1], k[0])),
            ],
        },
        receiver: Some(receiver([3, 1, 1], receptors)),
        initial: vec![InitialState {
            weight: 1.0,
            species: BTreeMap::from([("RNA1".to_string(), 1), ("RNA2".to_string(), 1)]),
            signal: vec![],
        }],
    }
}

/// One voxel, no receiver; symbol 0 is a birth process at `rate`.
pub fn single_voxel_birth(rate: f64) -> ModelSpec {
    ModelSpec {
        version: super::MODEL_FORMAT_VERSION,
        grid: GridSpec::new(1, 1, 1, VOXEL_WIDTH, DIFFUSION_COEFFICIENT),
        transmitter: TransmitterSpec {
            voxel: VoxelRef::Index(1),
            species: vec![],
            symbols: sources(&[rate, 0.0]),
        },
        receiver: None,
        initial: vec![],
    }
}
