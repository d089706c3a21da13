//! Shipped scenario catalogue, embedded at compile time so `list-scenarios`
//! and name-based lookup work from any directory.

pub struct ShippedScenario {
    pub name: &'static str,
    pub kind: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const SCENARIOS: &[ShippedScenario] = &[
    ShippedScenario {
        name: "evolve-free",
        kind: "evolve",
        description: "drifting Gaussian, 10^4 steps, norm/energy conservation",
        text: include_str!("../../../scenarios/evolve-free.toml"),
    },
    ShippedScenario {
        name: "evolve-harmonic",
        kind: "evolve",
        description: "coherent state in a harmonic well, 10^4 steps",
        text: include_str!("../../../scenarios/evolve-harmonic.toml"),
    },
    ShippedScenario {
        name: "free-gaussian",
        kind: "trajectories",
        description: "spreading packet with a 10^4-trajectory ensemble",
        text: include_str!("../../../scenarios/free-gaussian.toml"),
    },
    ShippedScenario {
        name: "harmonic-coherent",
        kind: "trajectories",
        description: "oscillating coherent state, trajectories ride the packet",
        text: include_str!("../../../scenarios/harmonic-coherent.toml"),
    },
    ShippedScenario {
        name: "two-packet",
        kind: "trajectories",
        description: "interfering packets, trajectories channel between nodes",
        text: include_str!("../../../scenarios/two-packet.toml"),
    },
    ShippedScenario {
        name: "born-0.3",
        kind: "measure",
        description: "pointer measurement of a 0.3/0.7 superposition",
        text: include_str!("../../../scenarios/born-0.3.toml"),
    },
    ShippedScenario {
        name: "stern-gerlach-z",
        kind: "stern-gerlach",
        description: "field-gradient splitting with constant spin labels",
        text: include_str!("../../../scenarios/stern-gerlach-z.toml"),
    },
    ShippedScenario {
        name: "spin-precession-x",
        kind: "pauli",
        description: "transverse-field precession against the two-level oracle",
        text: include_str!("../../../scenarios/spin-precession-x.toml"),
    },
    ShippedScenario {
        name: "hj-compare",
        kind: "hj-compare",
        description: "quadratic-phase fluid vs the closed-form Hamilton flow",
        text: include_str!("../../../scenarios/hj-compare.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static ShippedScenario> {
    SCENARIOS.iter().find(|s| s.name == name)
}
