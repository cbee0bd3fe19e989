use crpca_core::convergence::LogGrid;
use crpca_core::engine::SparseDenoiserSpec;
use crpca_core::instances::{build_instance, InstanceRecipe};
use crpca_core::linear::LmmseSolver;
use crpca_core::lowrank::{self, DivergenceMode, SpectralShrinker};
use crpca_core::message::MeanVarMessage;
use crpca_core::operators::{OperatorDescriptor, OperatorKind};
use crpca_core::se::{phi_lowrank_table_analytic, se_iterate, SEState, TransferFunction};
use crpca_core::seeding::{mix2, mix3};
use crpca_core::sparse::{self, SparsePrior};
use nalgebra::DMatrix;

#[test]
fn probe_oracle_variance_loop() {
    let (n1, n2, m, rank, rho) = (500usize, 500usize, 100_000usize, 25usize, 0.05);
    let n = (n1 * n2) as f64;
    let recipe = InstanceRecipe {
        operator: OperatorDescriptor {
            kind: OperatorKind::PartialDct,
            n1,
            n2,
            m,
            seed: mix3(0xA002, 0, 100),
        },
        rank,
        rho,
        sigma_n_sq: 0.0,
        seed: mix3(0xA002, 0, 101),
    };
    let (op, inst) = build_instance::<f64>(&recipe).unwrap();
    let x_true = &inst.l + &inst.s;
    let prior = SparsePrior::unit_power(rho).unwrap();
    let shrinker = SpectralShrinker::BestRankR { r: rank };
    let _ = SparseDenoiserSpec::Mmse { prior: prior.clone() };
    let solver = LmmseSolver::new(&op).unwrap();

    let psi = TransferFunction::psi_orthonormal(0.4, 0.0).unwrap();
    let varphi = TransferFunction::SparseMmse { prior: prior.clone() };
    let grid = LogGrid::new(1e-6, 4.0, 48).unwrap();
    let phi = TransferFunction::Table(
        phi_lowrank_table_analytic(&shrinker, rank, n1, n2, grid.abscissae(), 0xA0F2).unwrap(),
    );
    let states = se_iterate(SEState { tau_s: 1.0, tau_l: 1.0 }, &psi, &varphi, &phi, 14);

    let mut m_l_mean = DMatrix::<f64>::zeros(n1, n2);
    let mut m_s_mean = DMatrix::<f64>::zeros(n1, n2);
    let mut v_l_real = 1.0_f64; // realized MSE of the current L->delta message
    let mut v_s_real = 1.0_f64;

    println!();
    println!(
        "{:>3} {:>11} {:>11} {:>11} {:>11} | {:>11} {:>11} {:>11}",
        "t", "real_S", "se_S", "real_L", "se_L", "claim_S", "claim_L", "real_X"
    );
    for t in 1..=10usize {
        let x_in_mean = &m_l_mean + &m_s_mean;
        let v_x_in_real = (&x_in_mean - &x_true).norm_squared() / n;
        let x_in = MeanVarMessage::new(x_in_mean, v_x_in_real);
        let lin = solver.extrinsic(&inst.y, &x_in, 0.0).unwrap();
        let mse_x = (&lin.extrinsic_mean - &x_true).norm_squared() / n;

        let s_in_mean = &lin.extrinsic_mean - &m_l_mean;
        let s_in_real = (&s_in_mean - &inst.s).norm_squared() / n;
        let sp = sparse::mmse_denoise(&MeanVarMessage::new(s_in_mean, s_in_real), &prior).unwrap();

        let l_in_mean = &lin.extrinsic_mean - &m_s_mean;
        let l_in_real = (&l_in_mean - &inst.l).norm_squared() / n;
        let lr = lowrank::denoise(
            &MeanVarMessage::new(l_in_mean, l_in_real),
            &shrinker,
            &DivergenceMode::Analytic,
            mix2(7, t as u64),
        )
        .unwrap();

        m_s_mean = sp.extrinsic_mean;
        m_l_mean = lr.extrinsic_mean;
        v_s_real = (&m_s_mean - &inst.s).norm_squared() / n;
        v_l_real = (&m_l_mean - &inst.l).norm_squared() / n;

        let (se_s, se_l) = states
            .get(t)
            .map(|s| (s.tau_s, s.tau_l))
            .unwrap_or((f64::NAN, f64::NAN));
        println!(
            "{:>3} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} | {:>11.4e} {:>11.4e} {:>11.4e}",
            t, v_s_real, se_s, v_l_real, se_l, sp.extrinsic_var, lr.extrinsic_var, mse_x
        );
    }
    let _ = (v_l_real, v_s_real);
}
