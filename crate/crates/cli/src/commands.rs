//! One function per subcommand. Each writes its artifacts and returns the
//! summary report.

use crate::artifacts::Artifacts;
use crate::config::{ModelSpec, Preset, ReferenceSpec, Resolved};
use crate::error::CliError;
use psde_core::density::{self, atom_scaling, default_grid, kde, ks_test, reference_singly_perturbed, resolve_bandwidth, Bandwidth};
use psde_core::export::{real, write_real_table};
use psde_core::lamperti::{self, build_transform};
use psde_core::malliavin::{self, derivative_field, h_norm_profiles, oscillation_check, positivity_report};
use psde_core::params::{hnorm_lower_bound, smooth_density_horizon, smoothness_constant, sup_hnorm_lower_bound};
use psde_core::simulate::{simulate, Scheme, SimConfig};
use psde_core::Path;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::io::Write;

pub fn validate(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let (alpha, beta) = (r.params.alpha(), r.params.beta());
    let bounds = r.model.bounds();
    let constants = smooth_density_horizon(alpha, beta, bounds.b_prime_sup);
    out.report(
        "report.json",
        json!({
            "accepted": true,
            "alpha": alpha,
            "beta": beta,
            "rho": r.params.rho(),
            "gap": r.params.gap(),
            "initial_value": r.config.sim.x0 / r.params.gap(),
            "model": r.model.describe(),
            "bounds": bounds,
            "smoothness": constants,
        }),
    )
}

fn write_paths(buf: &mut Vec<u8>, paths: &[Path]) -> std::io::Result<()> {
    buf.write_all(b"path,step,t,x,running_max,running_min\r\n")?;
    for (p, path) in paths.iter().enumerate() {
        for k in 0..path.x.len() {
            write!(
                buf,
                "{p},{k},{},{},{},{}\r\n",
                real(path.times[k]),
                real(path.x[k]),
                real(path.m[k]),
                real(path.i[k])
            )?;
        }
    }
    Ok(())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub fn simulate_paths(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let cfg = &r.config.sim;
    let paths = (0..r.config.analysis.n_paths as u64)
        .into_par_iter()
        .map(|p| simulate(&r.model, &r.params, &cfg.for_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    out.table("paths.csv", |buf| write_paths(buf, &paths))?;
    let terminal: Vec<f64> = paths.iter().map(Path::terminal).collect();
    let (mean, sd) = mean_sd(&terminal);
    let residual = paths.iter().map(|p| p.dynamics_residual(&r.model, &r.params)).fold(0.0, f64::max);
    out.report(
        "report.json",
        json!({
            "n_paths": paths.len(),
            "n_steps": cfg.n_steps,
            "dt": cfg.dt(),
            "scheme": cfg.scheme,
            "monitoring": cfg.monitoring,
            "terminal_mean": mean,
            "terminal_sd": sd,
            "max_dynamics_residual": residual,
        }),
    )
}

pub fn picard_compare(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let a = &r.config.analysis;
    let mut rows = Vec::new();
    for &n in &a.picard_steps {
        let results = (0..a.picard_seeds)
            .into_par_iter()
            .map(|s| {
                let cfg = SimConfig {
                    n_steps: n,
                    seed: r.config.sim.seed + s,
                    ..r.config.sim.clone()
                };
                let per_step = simulate(&r.model, &r.params, &SimConfig { scheme: Scheme::PerStep, ..cfg.clone() })?;
                let picard = simulate(&r.model, &r.params, &SimConfig { scheme: Scheme::Picard, ..cfg })?;
                let gap = per_step.x.iter().zip(&picard.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                let iters = picard.picard.as_ref().map_or(0, |p| p.iterations);
                Ok((gap, iters))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let count = results.len() as f64;
        let mean_gap = results.iter().map(|x| x.0).sum::<f64>() / count;
        let max_gap = results.iter().map(|x| x.0).fold(0.0, f64::max);
        let mean_iters = results.iter().map(|x| x.1 as f64).sum::<f64>() / count;
        rows.push([n as f64, r.config.sim.horizon / n as f64, mean_gap, max_gap, mean_iters]);
    }
    out.table("picard_compare.csv", |buf| {
        write_real_table(buf, &["n_steps", "dt", "mean_sup_gap", "max_sup_gap", "mean_outer_iterations"], &rows)
    })?;
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1][2] / w[0][2]).collect();
    out.report(
        "report.json",
        json!({
            "seeds": a.picard_seeds,
            "rows": rows.iter().map(|row| json!({
                "n_steps": row[0] as usize,
                "dt": row[1],
                "mean_sup_gap": row[2],
                "max_sup_gap": row[3],
                "mean_outer_iterations": row[4],
            })).collect::<Vec<_>>(),
            "successive_gap_ratios": ratios,
        }),
    )
}

pub fn malliavin(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let a = &r.config.analysis;
    let cfg = &r.config.sim;
    let dt = cfg.dt();
    let path = simulate(&r.model, &r.params, cfg)?;
    let field = derivative_field(&path, &r.model, &r.params)?;
    let profile = field.h_norm_profile();
    out.table("h_norm_profile.csv", |buf| {
        write_real_table(buf, &["t", "h_norm"], path.times.iter().zip(&profile).map(|(&t, &h)| [t, h]))
    })?;
    if a.write_field {
        out.table("derivative_field.csv", |buf| field.write_csv(buf))?;
    }

    let driver = cfg.driver();
    let mut fd_rows = Vec::new();
    let mut eps_too_small = 0usize;
    for w in 0..a.fd_windows {
        let lo = cfg.horizon * w as f64 / a.fd_windows as f64;
        let hi = cfg.horizon * (w + 1) as f64 / a.fd_windows as f64;
        let analytic = field.directional(lo, hi);
        let fd = malliavin::cameron_martin_with_driver(&r.model, &r.params, cfg, &driver, lo, hi, a.fd_eps)?;
        eps_too_small += fd.eps_too_small as usize;
        fd_rows.push([lo, hi, analytic, fd.value, (fd.value - analytic).abs() / analytic.abs()]);
    }
    out.table("finite_difference.csv", |buf| {
        write_real_table(buf, &["r_lo", "r_hi", "analytic", "finite_difference", "relative_gap"], &fd_rows)
    })?;
    let worst_fd = fd_rows.iter().map(|row| row[4]).fold(0.0, f64::max);

    let t = a.h_norm_time.unwrap_or(cfg.horizon).min(cfg.horizon);
    let k = ((t / dt).round() as usize).clamp(1, cfg.n_steps);
    let profiles = h_norm_profiles(&r.model, &r.params, cfg, a.n_paths)?;
    let at_k: Vec<f64> = profiles.iter().map(|p| p[k]).collect();
    let sigma_inf = r.model.bounds().sigma_inf;
    let positivity = positivity_report(&at_k, k, 0.0, sigma_inf);

    let (alpha, beta) = (r.params.alpha(), r.params.beta());
    let b_prime = r.model.bounds().b_prime_sup;
    let oscillation = oscillation_check(&profile, dt, k, alpha, beta, b_prime);
    let constant_sigma = r.model.bounds().sigma_prime_sup == 0.0;
    let lower_bound = if constant_sigma {
        let bound = hnorm_lower_bound(k as f64 * dt, k as f64 * dt, sigma_inf, alpha, beta, b_prime)
            .map_err(|e| CliError::Config(e.to_string()))?;
        json!({
            "value": bound.value,
            "vacuous": bound.vacuous,
            "violations": at_k.iter().filter(|&&h| h < bound.value).count(),
        })
    } else {
        Value::Null
    };
    out.report(
        "report.json",
        json!({
            "n_steps": cfg.n_steps,
            "dt": dt,
            "terminal_h_norm": profile[cfg.n_steps],
            "argmax_moves": field.max_jumps().len(),
            "argmin_moves": field.min_jumps().len(),
            "finite_difference": {
                "eps": a.fd_eps,
                "windows": a.fd_windows,
                "worst_relative_gap": worst_fd,
                "eps_too_small": eps_too_small,
            },
            "positivity": positivity,
            "oscillation": oscillation,
            "lower_bound": lower_bound,
        }),
    )
}

pub fn density(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let a = &r.config.analysis;
    let cfg = &r.config.sim;
    let ens = density::generate_ensemble(&r.model, &r.params, cfg, a.n_paths)?;
    out.table("ensemble.csv", |buf| ens.write_csv(buf))?;

    let values = &ens.terminal_values;
    let bandwidth = a.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let h = resolve_bandwidth(values, bandwidth)?;
    let estimate = kde(values, bandwidth, &default_grid(values, h, a.kde_points))?;
    out.table("kde.csv", |buf| estimate.write_csv(buf))?;

    let scaling = atom_scaling(values, &a.atom_bin_widths);
    out.table("atom_scan.csv", |buf| {
        write_real_table(
            buf,
            &["bin_width", "max_mass", "location", "occupied_bins"],
            scaling.scans.iter().map(|s| [s.bin_width, s.max_mass, s.location, s.occupied_bins as f64]),
        )
    })?;

    let ks = match a.reference {
        ReferenceSpec::None => Value::Null,
        ReferenceSpec::SinglyPerturbedBm => {
            let brownian = r.config.model == ModelSpec::Preset { preset: Preset::Brownian };
            if !(brownian && r.params.beta() == 0.0 && cfg.x0 == 0.0) {
                return Err(CliError::Config(
                    "the singly perturbed reference needs the brownian preset, beta = 0 and x0 = 0".into(),
                ));
            }
            let law = reference_singly_perturbed(r.params.alpha(), cfg.horizon)?;
            let ks = ks_test(&ens, &law);
            let sup = estimate.sup_distance(|v| law.density(v));
            json!({ "reference": a.reference, "ks": ks, "kde_sup_distance": sup })
        }
    };
    out.report(
        "report.json",
        json!({
            "n_paths": ens.n_paths,
            "t": ens.t,
            "ensemble_fingerprint": ens.config_fingerprint,
            "mean": ens.mean(),
            "std_error": ens.std_error(),
            "bandwidth": h,
            "kde_integral": estimate.integral(),
            "atom_scaling": {
                "slope": scaling.slope,
                "r_squared": scaling.r_squared,
            },
            "goodness_of_fit": ks,
        }),
    )
}

pub fn lamperti_check(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let cfg = &r.config.sim;
    let reports = lamperti::reduction_refinement(&r.model, &r.params, cfg, r.config.analysis.lamperti_levels)?;
    out.table("reduction.csv", |buf| {
        write_real_table(
            buf,
            &["n_steps", "dt", "sup_discrepancy", "commutation_error"],
            reports.iter().map(|x| [x.n_steps as f64, x.dt, x.sup_discrepancy, x.commutation_error]),
        )
    })?;
    let transform = build_transform(&r.model, cfg.x0, reports[0].range)?;
    out.table("transform.csv", |buf| transform.write_csv(buf))?;
    out.report("report.json", json!({ "levels": reports }))
}

pub fn constants(r: &Resolved, out: &mut Artifacts) -> Result<Value, CliError> {
    let (alpha, beta) = (r.params.alpha(), r.params.beta());
    let bounds = r.model.bounds();
    let b_prime = bounds.b_prime_sup;
    let sigma = bounds.sigma_inf;
    let consts = smooth_density_horizon(alpha, beta, b_prime);
    let t_max = if consts.t0.is_finite() && consts.t0 > 0.0 {
        consts.t0
    } else {
        r.config.sim.horizon
    };
    let n = r.config.analysis.constants_points;
    let rows: Vec<[f64; 4]> = (1..=n)
        .map(|i| {
            let t = t_max * i as f64 / n as f64;
            let lb = hnorm_lower_bound(t, t, sigma, alpha, beta, b_prime).expect("0 < s = t").value;
            [t, smoothness_constant(t, alpha, beta, b_prime), lb, sup_hnorm_lower_bound(t, sigma, alpha, beta, b_prime)]
        })
        .collect();
    out.table("constants.csv", |buf| {
        write_real_table(buf, &["t", "oscillation_constant", "h_norm_lower_bound", "sup_h_norm_lower_bound"], &rows)
    })?;
    out.report(
        "report.json",
        json!({
            "alpha": alpha,
            "beta": beta,
            "b_prime_sup": b_prime,
            "sigma": sigma,
            "t0": consts.t0,
            "t0_unbounded": consts.t0.is_infinite(),
            "threshold_ok": consts.threshold_ok,
            "c_of_t0": consts.c_of_t0,
            "division_by_zero": consts.division_by_zero,
        }),
    )
}
