//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use wemp_core::experiment::{generate_kappa, KappaConfig, Placement};
use wemp_core::fem::assemble_operators;
use wemp_core::multiscale::{assemble_space, build_partition_of_unity};
use wemp_core::{CoefficientField, MultiscaleSpace, OperatorPair, ProblemSpec, TwoLevelMesh};

pub struct Fixture {
    pub mesh: TwoLevelMesh,
    pub kappa: CoefficientField,
    pub ops: OperatorPair,
    pub space: MultiscaleSpace,
    pub spec: ProblemSpec,
}

/// High-contrast problem on an `nc × nc` coarse grid with `r` fine cells per coarse side.
pub fn fixture(nc: usize, r: usize, level: u32, alpha: f64, t_final: f64, tau_f: f64, tau_c: f64) -> Fixture {
    let mesh = TwoLevelMesh::build(nc, r).expect("mesh");
    let kind = KappaConfig::ContrastInclusions {
        contrast: 1e4,
        inclusions: nc,
        width: r / 2,
        height: r / 2,
        placement: Placement::CoarseCells,
    };
    let kappa = generate_kappa(&kind, &mesh, 1).expect("kappa");
    let ops = assemble_operators(&mesh, &kappa).expect("operators");
    let pou = build_partition_of_unity(&mesh, &kappa).expect("partition of unity");
    let space = assemble_space(&mesh, &kappa, &ops, &pou, level).expect("space");
    let spec = ProblemSpec::new(
        alpha,
        t_final,
        tau_f,
        tau_c,
        Arc::new(|x, y| x * (1.0 - x) * y * (1.0 - y)),
        Arc::new(|x, y, t| x * y * t),
    )
    .expect("spec");
    Fixture { mesh, kappa, ops, space, spec }
}
