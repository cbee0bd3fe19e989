//! The six experiment subcommands. Each takes a validated config plus an
//! output directory and leaves behind a small set of CSV artifacts; nothing
//! here prints to stdout except one summary line per major step, so runs can
//! be watched from a terminal and scripted at the same time.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crpca_core::convergence::{classify, compute_thresholds, LogGrid};
use crpca_core::engine::{run_itmp, GroundTruth, ItmpOutput};
use crpca_core::instances::build_instance;
use crpca_core::lowrank::{self, DivergenceMode, SpectralShrinker};
use crpca_core::message::MeanVarMessage;
use crpca_core::operators::{LinearOperator, OperatorKind};
use crpca_core::se::{
    phi_lowrank_table, phi_lowrank_table_analytic, se_iterate, write_se_csv, SEState,
    TransferFunction,
};
use crpca_core::seeding::{mix2, mix3};
use crpca_core::sparse::SparsePrior;
use crpca_core::stats::{ks_statistic_normal, normal_quantile, standardize};
use crpca_core::{CrpcaError, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig, SparseChoice};

/// Anything a subcommand can fail with; `main` maps this to the exit code.
#[derive(Debug)]
pub enum CmdError {
    Config(ConfigError),
    Core(CrpcaError),
    Io(std::io::Error),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(e) => write!(f, "{e}"),
            CmdError::Core(e) => write!(f, "{e}"),
            CmdError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e)
    }
}

impl From<CrpcaError> for CmdError {
    fn from(e: CrpcaError) -> Self {
        CmdError::Core(e)
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

type CmdResult = std::result::Result<(), CmdError>;

fn create(out: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

/// One full engine trial: fresh operator, fresh instance, fresh engine seed,
/// all mixed from `(base_seed, cell, trial)`.
fn run_trial(
    config: &ExperimentConfig,
    rho: f64,
    rank: usize,
    base_seed: u64,
    cell: u64,
    trial: u64,
) -> Result<(ItmpOutput<f64>, GroundTruth<f64>, crpca_core::instances::InstanceRecipe)> {
    let trial_seed = mix3(base_seed, cell, trial);
    let recipe = config.recipe(rho, rank, mix2(trial_seed, 1), mix2(trial_seed, 2));
    let (op, inst) = build_instance::<f64>(&recipe)?;
    let mut engine = config
        .itmp_config(rho, rank, mix2(trial_seed, 3))
        .map_err(|e| CrpcaError::InvalidParameter { name: "config", reason: e.0 })?;
    if config.experiment == crate::config::ExperimentKind::Qq {
        engine.capture_iteration = Some(config.capture_iteration);
    }
    let truth = GroundTruth { l: inst.l.clone(), s: inst.s.clone() };
    let out = run_itmp(&op, &inst.y, &engine, Some(&truth))?;
    Ok((out, truth, recipe))
}

// --- run -----------------------------------------------------------------

pub fn cmd_run(config: &ExperimentConfig, out: &Path, dump_instance: bool) -> CmdResult {
    let (rho, rank) = (config.rho, config.rank());
    eprintln!(
        "run: {}x{} m={} rank={} rho={} trials={}",
        config.n1,
        config.n2,
        config.measurements(),
        rank,
        rho,
        config.trials
    );
    let results: Vec<_> = (0..config.trials as u64)
        .into_par_iter()
        .map(|k| run_trial(config, rho, rank, config.seed, 0, k))
        .collect::<Result<_>>()?;

    let mut summary = create(out, "summary.csv")?;
    writeln!(summary, "trial,iterations,stop,nmse_S,nmse_L,converged")?;
    for (k, (result, _, recipe)) in results.iter().enumerate() {
        let mut trace = create(out, &format!("trace_trial{k}.csv"))?;
        result.trace.write_csv(&mut trace)?;
        if dump_instance {
            recipe.write_to_path(out.join(format!("instance_trial{k}.bin")))?;
        }
        let last = result.trace.records.last();
        let nmse = |f: fn(&crpca_core::engine::IterationRecord<f64>) -> Option<f64>| {
            last.and_then(f).map_or(f64::NAN, |x| x)
        };
        writeln!(
            summary,
            "{k},{},{},{},{},{}",
            result.iterations(),
            result.stop.to_string().replace(',', ";"),
            nmse(|r| r.nmse_s),
            nmse(|r| r.nmse_l),
            result.converged()
        )?;
    }
    let hits = results.iter().filter(|(r, ..)| r.converged()).count();
    eprintln!("run: {hits}/{} trials converged", config.trials);
    Ok(())
}

// --- se-track --------------------------------------------------------------

/// The three transfer functions of the configured problem. `rho` and `rank`
/// are passed explicitly so phase-grid can reuse this per cell.
fn transfer_functions(
    config: &ExperimentConfig,
    rho: f64,
    rank: usize,
    seed: u64,
) -> std::result::Result<(TransferFunction<f64>, TransferFunction<f64>, TransferFunction<f64>), CmdError>
{
    let psi = match config.operator {
        OperatorKind::PartialDct | OperatorKind::PartialHaar => {
            TransferFunction::psi_orthonormal(config.alpha, config.sigma_n_sq)?
        }
        OperatorKind::Gaussian => {
            let op = LinearOperator::<f64>::make_gaussian(
                config.n1,
                config.n2,
                config.measurements(),
                mix2(seed, 0xA0),
            )?;
            let theta: Vec<f64> = op.singular_values().iter().map(|s| s * s).collect();
            TransferFunction::PsiGeneral {
                theta,
                alpha: config.alpha,
                sigma_n_sq: config.sigma_n_sq,
            }
        }
    };
    let varphi = match config.sparse_denoiser {
        SparseChoice::Mmse => TransferFunction::SparseMmse {
            prior: SparsePrior::unit_power(rho)
                .map_err(|e| ConfigError(format!("sparse prior: {e}")))?,
        },
        SparseChoice::Soft { .. } => {
            return Err(ConfigError(
                "state-evolution commands support only the mmse sparse denoiser".into(),
            )
            .into())
        }
    };
    let grid = LogGrid::new(1e-6, config.table_v_max, config.table_points)?.abscissae();
    let table = phi_lowrank_table_analytic(
        &config.shrinker_spec(rank),
        rank,
        config.n1,
        config.n2,
        grid,
        mix2(seed, 0xB0),
    )?;
    Ok((psi, varphi, TransferFunction::Table(table)))
}

pub fn cmd_se_track(config: &ExperimentConfig, out: &Path) -> CmdResult {
    let (rho, rank) = (config.rho, config.rank());
    eprintln!(
        "se-track: {}x{} alpha={} rank={} rho={} trials={}",
        config.n1, config.n2, config.alpha, rank, rho, config.trials
    );

    // Empirical side: realized extrinsic errors of the two messages,
    // averaged per iteration over the trials that reached it.
    let traces: Vec<_> = (0..config.trials as u64)
        .into_par_iter()
        .map(|k| run_trial(config, rho, rank, config.seed, 0, k).map(|(o, ..)| o.trace))
        .collect::<Result<_>>()?;
    let horizon = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let mut sim = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let rows: Vec<_> = traces.iter().filter_map(|tr| tr.records.get(t)).collect();
        let count = rows.len() as f64;
        let mean =
            |f: fn(&crpca_core::engine::IterationRecord<f64>) -> Option<f64>| -> f64 {
                rows.iter().map(|r| f(r).expect("truth-backed run")).sum::<f64>() / count
            };
        sim.push((t + 1, mean(|r| r.ext_mse_s), mean(|r| r.ext_mse_l)));
    }
    let mut sim_csv = create(out, "simulation.csv")?;
    writeln!(sim_csv, "iter,v_S_sim,v_L_sim")?;
    for &(t, s, l) in &sim {
        writeln!(sim_csv, "{t},{s},{l}")?;
    }

    // Predicted side: the scalar recursion from the prior powers.
    let (psi, varphi, phi) = transfer_functions(config, rho, rank, mix2(config.seed, 0x5E))?;
    let states = se_iterate(
        SEState { tau_s: 1.0, tau_l: 1.0 },
        &psi,
        &varphi,
        &phi,
        config.se_steps,
    );
    let mut se_csv = create(out, "evolution.csv")?;
    write_se_csv(&states, &mut se_csv)?;

    // Per-iteration relative gap, where both sides are defined. states[t]
    // holds the variances of the messages sent at iteration t (states[0] is
    // the init).
    let mut gap_csv = create(out, "gap.csv")?;
    writeln!(gap_csv, "iter,gap_S,gap_L")?;
    for &(t, s, l) in &sim {
        let Some(state) = states.get(t) else { break };
        let rel = |sim: f64, se: f64| if se > 0.0 { (sim - se).abs() / se } else { f64::NAN };
        writeln!(gap_csv, "{t},{},{}", rel(s, state.tau_s), rel(l, state.tau_l))?;
    }
    eprintln!("se-track: {} empirical iterations, {} predicted steps", sim.len(), config.se_steps);
    Ok(())
}

// --- phase-grid ------------------------------------------------------------

fn tabulate(
    transfer: &TransferFunction<f64>,
    grid: &LogGrid<f64>,
) -> Result<TransferFunction<f64>> {
    let abscissae = grid.abscissae();
    let values: Vec<f64> = abscissae.iter().map(|&v| transfer.eval(v).max(0.0)).collect();
    Ok(TransferFunction::Table(crpca_core::se::TransferTable::new(abscissae, values)?))
}

pub fn cmd_phase_grid(config: &ExperimentConfig, out: &Path) -> CmdResult {
    let rhos = config.rho_grid.clone().unwrap_or_else(|| vec![config.rho]);
    let gammas = config.gamma_grid.clone().unwrap_or_else(|| vec![config.gamma]);
    let cells: Vec<(f64, f64)> = rhos
        .iter()
        .flat_map(|&rho| gammas.iter().map(move |&gamma| (rho, gamma)))
        .collect();
    eprintln!(
        "phase-grid: {} cells ({} rho x {} gamma), {} trials each at alpha={}",
        cells.len(),
        rhos.len(),
        gammas.len(),
        config.trials,
        config.alpha
    );

    struct Cell {
        rho: f64,
        gamma: f64,
        success_rate: f64,
        thresholds: crpca_core::convergence::ConvergenceThresholds<f64>,
        label: crpca_core::convergence::RegionLabel,
    }

    let rows: Vec<Cell> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, &(rho, gamma))| -> std::result::Result<Cell, CmdError> {
            let rank = config.rank_for(gamma);
            let mut hits = 0usize;
            for k in 0..config.trials as u64 {
                let (result, ..) = run_trial(config, rho, rank, config.seed, ci as u64, k)?;
                hits += result.converged() as usize;
            }
            let (_, varphi, phi) =
                transfer_functions(config, rho, rank, mix3(config.seed, ci as u64, 0x711))?;
            let grid = LogGrid::new(1e-6, config.table_v_max, config.table_points)?;
            // The threshold search makes ~10^5 transfer evaluations; sample
            // the quadrature-backed sparse transfer onto the grid once so
            // each of those is a lookup. Thresholds are certified only up to
            // this grid's resolution either way.
            let varphi = tabulate(&varphi, &grid)?;
            let thresholds = compute_thresholds(&varphi, &phi, &grid)?;
            let label = classify(config.alpha, &thresholds);
            Ok(Cell {
                rho,
                gamma,
                success_rate: hits as f64 / config.trials as f64,
                thresholds,
                label,
            })
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut phase = create(out, "phase.csv")?;
    writeln!(phase, "rho,gamma,success_rate,predicted_label")?;
    for c in &rows {
        writeln!(phase, "{},{},{},{}", c.rho, c.gamma, c.success_rate, c.label)?;
    }
    let mut th = create(out, "thresholds.csv")?;
    writeln!(th, "rho,gamma,alpha1,alpha2,alpha3,alpha_nec,label")?;
    for c in &rows {
        writeln!(
            th,
            "{},{},{},{},{},{},{}",
            c.rho,
            c.gamma,
            c.thresholds.alpha1,
            c.thresholds.alpha2,
            c.thresholds.alpha3,
            c.thresholds.alpha_nec,
            c.label
        )?;
    }
    let solved = rows.iter().filter(|c| c.success_rate == 1.0).count();
    eprintln!("phase-grid: {solved}/{} cells fully successful", rows.len());
    Ok(())
}

// --- qq ----------------------------------------------------------------------

pub fn cmd_qq(config: &ExperimentConfig, out: &Path) -> CmdResult {
    eprintln!(
        "qq: {}x{} capturing iteration {}",
        config.n1, config.n2, config.capture_iteration
    );
    let (result, ..) = run_trial(config, config.rho, config.rank(), config.seed, 0, 0)?;
    let cap = result.trace.captured.ok_or_else(|| {
        ConfigError(format!(
            "run stopped before iteration {} ({}); nothing captured",
            config.capture_iteration, result.stop
        ))
    })?;

    let panels: [(&str, &DMatrix<f64>); 6] = [
        ("x_in", &cap.x_in),
        ("x_out", &cap.x_out),
        ("s_in", &cap.s_in),
        ("s_out", &cap.s_out),
        ("l_in", &cap.l_in),
        ("l_out", &cap.l_out),
    ];
    let mut ks_csv = create(out, "ks.csv")?;
    writeln!(ks_csv, "panel,ks")?;
    for (name, err) in panels {
        let mut samples: Vec<f64> = err.as_slice().to_vec();
        standardize(&mut samples);
        samples.sort_by(|a, b| a.partial_cmp(b).expect("non-finite captured error"));
        let n = samples.len();
        let mut qq = create(out, &format!("qq_{name}.csv"))?;
        writeln!(qq, "theoretical,empirical")?;
        for (i, &x) in samples.iter().enumerate() {
            let p = (i as f64 + 0.5) / n as f64;
            writeln!(qq, "{},{}", normal_quantile(p), x)?;
        }
        let ks = ks_statistic_normal(&samples);
        writeln!(ks_csv, "{name},{ks}")?;
        eprintln!("qq: {name} KS = {ks:.4}");
    }
    Ok(())
}

// --- divergence-check --------------------------------------------------------

pub fn cmd_divergence_check(config: &ExperimentConfig, out: &Path) -> CmdResult {
    // The sweep crosses the two closed-form shrinker families with a couple
    // of noise levels; the configured shrinker is appended if it is the
    // smoothed kind (no closed form of its own to cross-check otherwise).
    let mut shrinkers: Vec<(String, SpectralShrinker<f64>)> = vec![];
    for omega in [0.5, 1.0, 2.0] {
        shrinkers.push((format!("svst(omega={omega})"), SpectralShrinker::Svst { omega }));
    }
    for r in [1usize, 5, 10] {
        shrinkers.push((format!("best-rank(r={r})"), SpectralShrinker::BestRankR { r }));
    }
    if let SpectralShrinker::SmoothedHard { rank, epsilon } = config.shrinker_spec(config.rank())
    {
        shrinkers
            .push((format!("smoothed(eps={epsilon})"), SpectralShrinker::SmoothedHard {
                rank,
                epsilon,
            }));
    }

    eprintln!(
        "divergence-check: {} shrinkers x 2 noise levels at {}x{}, {} probes",
        shrinkers.len(),
        config.n1,
        config.n2,
        config.probes
    );
    let mut csv = create(out, "divergence.csv")?;
    writeln!(csv, "shrinker,n1,n2,v,analytic,monte_carlo,rel_gap")?;
    for (si, (name, shrinker)) in shrinkers.iter().enumerate() {
        // Rank of the planted signal: matched to the shrinker where it has a
        // rank, otherwise the config's.
        let planted = match shrinker {
            SpectralShrinker::BestRankR { r } => *r,
            SpectralShrinker::SmoothedHard { rank, .. } => *rank,
            SpectralShrinker::Svst { .. } => config.rank(),
        };
        for (vi, v) in [0.25f64, 1.0].into_iter().enumerate() {
            let seed = mix3(config.seed, si as u64, vi as u64);
            let l = crpca_core::instances::generate_low_rank::<f64>(
                config.n1,
                config.n2,
                planted,
                mix2(seed, 0xA),
            )?;
            let mut rng = crpca_core::seeding::rng_from(mix2(seed, 0xB));
            let sqrt_v = v.sqrt();
            let noisy = DMatrix::from_fn(config.n1, config.n2, |i, j| {
                l[(i, j)] + sqrt_v * rand_normal(&mut rng)
            });
            let input = MeanVarMessage::new(noisy, v);

            let analytic = lowrank::denoise(&input, shrinker, &DivergenceMode::Analytic, seed)?
                .divergence_per_n;
            let mc = lowrank::divergence_monte_carlo(
                |m| lowrank::shrink_posterior(m, v, shrinker),
                &input,
                config.probe_epsilon,
                config.probes,
                mix2(seed, 0xC),
            )?;
            let rel = (analytic - mc).abs() / analytic.abs().max(1e-12);
            writeln!(csv, "{name},{},{},{v},{analytic},{mc},{rel}", config.n1, config.n2)?;
        }
    }
    Ok(())
}

fn rand_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use crpca_core::Real;
    f64::standard_normal(rng)
}

// --- transfer-table ------------------------------------------------------------

pub fn cmd_transfer_table(config: &ExperimentConfig, out: &Path) -> CmdResult {
    let rank = config.rank();
    let step = config.table_v_max / config.table_points as f64;
    eprintln!(
        "transfer-table: {} points in (0, {}], {} trials each, rank {}",
        config.table_points, config.table_v_max, config.table_trials, rank
    );
    let table = phi_lowrank_table(
        &config.shrinker_spec(rank),
        rank,
        step,
        config.table_v_max,
        step,
        config.table_trials,
        config.n1,
        config.n2,
        mix2(config.seed, 0x7AB),
    )?;
    let mut csv = create(out, "transfer.csv")?;
    table.write_csv(&mut csv)?;
    Ok(())
}
