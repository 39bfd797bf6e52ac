use dpsw_core::diagnostics::{endpoint_measurement, posterior_necessary_conditions, term_ratio_curve, wt_curve};
use dpsw_core::guidance::ZetaMode;
use dpsw_core::operators::forward_model;
use dpsw_core::rng::derive_seed;
use dpsw_core::sampler::sample_batch;
use dpsw_core::umbrella::{
    ground_truth_profile, run_umbrella, uniform_edges, wham, window_stats, FreeEnergyProfile, WindowSet,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use dpsw_core::{
    build_sampler, Guidance, GuidanceSpec, Integrator, LinearOperator, Measurement, NoiseSchedule, Sampler,
};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::output::{header, num, opt, OutputDir};
use crate::CliError;

fn sampler_for(cfg: &Resolved, integrator: Integrator) -> Result<(NoiseSchedule, Box<dyn Sampler>), CliError> {
    let schedule = cfg.schedule.build().map_err(|e| CliError::from_core("schedule", e))?;
    let sampler = build_sampler(&schedule, integrator).map_err(|e| CliError::from_core("integrator", e))?;
    Ok((schedule, sampler))
}

fn guidance_for(spec: &GuidanceSpec) -> Result<Box<dyn Guidance>, CliError> {
    spec.build().map_err(|e| CliError::from_core("guidance", e))
}

fn operator(cfg: &Resolved) -> Result<LinearOperator, CliError> {
    cfg.measurement
        .operator
        .build()
        .map_err(|e| CliError::from_core("measurement.operator", e))
}

/// The configured measurement, or one synthesized from a prior draw.
fn measurement(cfg: &Resolved) -> Result<(Measurement, Option<Vec<f64>>), CliError> {
    let op = operator(cfg)?;
    let m = &cfg.measurement;
    match &m.y {
        Some(y) => Measurement::new(y.clone(), op, m.sigma_y)
            .map(|mm| (mm, None))
            .map_err(|e| CliError::from_core("measurement", e)),
        None => {
            let x0 = cfg.gmm.sample_prior(m.synthesize_seed, 1).remove(0);
            let mm = forward_model(&x0, &op, m.sigma_y, derive_seed(m.synthesize_seed, 1))
                .map_err(|e| CliError::from_core("measurement", e))?;
            Ok((mm, Some(x0)))
        }
    }
}

fn coord_header(prefix: &[&str], d: usize, suffix: &[&str]) -> Vec<String> {
    let mut h = header(prefix);
    h.extend((0..d).map(|j| format!("x_{j}")));
    h.extend(header(suffix));
    h
}

pub fn sample(cfg: &Resolved, out: &mut OutputDir) -> Result<Value, CliError> {
    let (_, sampler) = sampler_for(cfg, cfg.integrator)?;
    let guide = guidance_for(&cfg.guidance)?;
    let (m, x0) = measurement(cfg)?;
    let d = cfg.gmm.dim();
    guide
        .validate(Some(&m), d)
        .map_err(|e| CliError::from_core("guidance", e))?;
    let record = cfg.counts.record_trajectories;
    let trajs = sample_batch(
        sampler.as_ref(),
        &cfg.gmm,
        guide.as_ref(),
        Some(&m),
        cfg.master_seed,
        cfg.counts.trajectories,
        cfg.jobs,
        record,
    )
    .map_err(CliError::numerical)?;

    out.csv(
        "finals.csv",
        &coord_header(&["traj_id"], d, &[]),
        trajs.iter().enumerate().map(|(i, t)| {
            std::iter::once(i.to_string())
                .chain(t.final_x.iter().map(|v| num(*v)))
                .collect::<Vec<_>>()
        }),
    )?;
    if record {
        let rows = trajs.iter().enumerate().flat_map(|(i, t)| {
            t.steps.iter().map(move |s| {
                let mut r = vec![i.to_string(), s.t.to_string()];
                r.extend(s.x.iter().map(|v| num(*v)));
                r.push(opt(s.w_t));
                r.push(num(s.guidance_norm));
                r.push(num(s.prior_norm));
                r
            })
        });
        out.csv(
            "trajectories.csv",
            &coord_header(&["traj_id", "t"], d, &["w_t", "guidance_norm", "prior_norm"]),
            rows,
        )?;
    }

    let n = trajs.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| trajs.iter().map(|t| t.final_x[j]).sum::<f64>() / n)
        .collect();
    println!(
        "sampler {} guidance {} trajectories {}",
        sampler.name(),
        guide.name(),
        trajs.len()
    );
    println!("final mean {mean:?}");
    Ok(json!({
        "sampler": sampler.name(),
        "guidance": guide.name(),
        "measurement_y": m.y,
        "x0_true": x0,
        "final_mean": mean,
    }))
}

fn profile_rows(est: &FreeEnergyProfile, truth: &FreeEnergyProfile) -> Vec<Vec<String>> {
    est.bin_centers()
        .iter()
        .enumerate()
        .map(|(b, c)| vec![num(*c), opt(est.f[b]), opt(truth.f[b]), est.coverage[b].to_string()])
        .collect()
}

fn series(out: &mut OutputDir, label: &str, p: &FreeEnergyProfile) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = p
        .bin_centers()
        .iter()
        .zip(&p.f)
        .filter_map(|(c, f)| f.map(|f| vec![num(*c), num(f)]))
        .collect();
    out.csv(&format!("series_{label}.csv"), &header(&["x", "f"]), rows)
}

pub fn umbrella(cfg: &Resolved, out: &mut OutputDir) -> Result<Value, CliError> {
    let c = &cfg.counts;
    let windows = WindowSet::evenly_spaced(
        c.windows,
        c.center_range[0],
        c.center_range[1],
        cfg.measurement.sigma_y,
        c.samples_per_window,
    )
    .map_err(|e| CliError::from_core("counts.windows", e))?;
    let edges =
        uniform_edges(c.bins, c.bin_range[0], c.bin_range[1]).map_err(|e| CliError::from_core("counts.bins", e))?;
    let truth = ground_truth_profile(&cfg.gmm, 0, &edges).map_err(|e| CliError::from_core("prior", e))?;
    let (_, sampler) = sampler_for(cfg, cfg.integrator)?;

    let run = |spec: &GuidanceSpec| -> Result<(String, Vec<Vec<f64>>, FreeEnergyProfile), CliError> {
        let guide = guidance_for(spec)?;
        let samples = run_umbrella(
            &cfg.gmm,
            &windows,
            guide.as_ref(),
            sampler.as_ref(),
            cfg.master_seed,
            cfg.jobs,
        )
        .map_err(CliError::numerical)?;
        let est = wham(&samples, &windows, &edges, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(CliError::numerical)?;
        Ok((guide.name().to_string(), samples, est))
    };

    let (name, samples, est) = run(&cfg.guidance)?;
    let rmse = est.rmse_against(&truth, c.min_count);
    out.csv(
        "profile.csv",
        &header(&["bin_center", "f_estimate", "f_truth", "count"]),
        profile_rows(&est, &truth),
    )?;
    out.csv(
        "windows.csv",
        &header(&["center", "mean", "std", "n"]),
        window_stats(&samples, &windows)
            .into_iter()
            .map(|(c, m, s, n)| vec![num(c), num(m), num(s), n.to_string()]),
    )?;
    series(out, "truth", &truth)?;
    series(out, &name, &est)?;
    println!(
        "method {name}: rmse {} over bins with >= {} samples",
        opt(rmse),
        c.min_count
    );

    let mut table = vec![(name.clone(), rmse)];
    if c.compare_methods {
        let others = [
            GuidanceSpec::method("exact"),
            GuidanceSpec::dpsw(cfg.guidance.enhanced.unwrap_or(false)),
            GuidanceSpec::dps(1.0, ZetaMode::Constant),
        ];
        for spec in others
            .iter()
            .filter(|s| s.build().map(|g| g.name() != name).unwrap_or(false))
        {
            let (n2, _, e2) = run(spec)?;
            let r2 = e2.rmse_against(&truth, c.min_count);
            series(out, &n2, &e2)?;
            println!("method {n2}: rmse {}", opt(r2));
            table.push((n2, r2));
        }
        out.csv(
            "methods.csv",
            &header(&["method", "rmse"]),
            table.iter().map(|(m, r)| vec![m.clone(), opt(*r)]),
        )?;
    }
    Ok(json!({
        "method": name,
        "rmse": rmse,
        "methods": table.iter().map(|(m, r)| json!({"method": m, "rmse": r})).collect::<Vec<_>>(),
        "window_centers": windows.centers,
    }))
}

pub fn diagnose(cfg: &Resolved, out: &mut OutputDir) -> Result<Value, CliError> {
    let (_, sampler) = sampler_for(cfg, cfg.integrator)?;
    let guide = guidance_for(&cfg.guidance)?;
    let c = &cfg.counts;
    let d = posterior_necessary_conditions(
        sampler.as_ref(),
        guide.as_ref(),
        &cfg.gmm,
        cfg.measurement.sigma_y,
        c.conditions,
        c.samples_per_condition,
        cfg.master_seed,
        cfg.jobs,
    )
    .map_err(|e| CliError::from_core("diagnose", e))?;
    let fields: [(&str, String); 9] = [
        ("mse_mmse_ratio", num(d.mse_mmse_ratio)),
        ("mse", num(d.mse)),
        ("mmse", num(d.mmse)),
        ("residual_std", num(d.residual_std)),
        ("ks_statistic", num(d.ks_statistic)),
        ("ks_pvalue", num(d.ks_pvalue)),
        ("pearson_r", num(d.pearson_r)),
        ("n_conditions", d.n_conditions.to_string()),
        ("n_samples_per_condition", d.n_samples_per_condition.to_string()),
    ];
    out.csv(
        "diagnostics.csv",
        &fields.iter().map(|f| f.0.to_string()).collect::<Vec<_>>(),
        [fields.iter().map(|f| f.1.clone()).collect::<Vec<_>>()],
    )?;
    println!("{:<24} {:>14}", "field", "value");
    for (k, v) in &fields {
        println!("{k:<24} {v:>14}");
    }
    Ok(serde_json::to_value(&d).expect("serializable"))
}

pub fn curves(cfg: &Resolved, out: &mut OutputDir) -> Result<Value, CliError> {
    let op = operator(cfg)?;
    if op != LinearOperator::Identity {
        return Err(CliError::config(
            "measurement.operator",
            "curves use the identity operator",
        ));
    }
    let (schedule, sampler) = sampler_for(cfg, cfg.integrator)?;
    // DPS-w corrections are integrated as a score swap on the VE ladder.
    let wt_sampler =
        build_sampler(&schedule, Integrator::EulerMaruyama).map_err(|e| CliError::from_core("schedule", e))?;
    let enhanced = cfg.guidance.enhanced.unwrap_or(false);

    let mut wt_rows = Vec::new();
    let mut ratio_rows = Vec::new();
    let mut summary = Vec::new();
    for &sy in &cfg.counts.sigma_ys {
        let m =
            endpoint_measurement(sampler.as_ref(), &cfg.gmm, &op, sy, cfg.master_seed).map_err(CliError::numerical)?;
        let w = wt_curve(wt_sampler.as_ref(), &cfg.gmm, &m, enhanced, cfg.master_seed).map_err(CliError::numerical)?;
        let r = term_ratio_curve(sampler.as_ref(), &cfg.gmm, &m.y, &[sy], cfg.master_seed)
            .map_err(CliError::numerical)?
            .remove(0);
        let h = w.len() / 2;
        let mean = |s: &[(usize, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len().max(1) as f64;
        summary.push(json!({
            "sigma_y": sy,
            "y": m.y,
            "w_first_half_mean": mean(&w[..h]),
            "w_second_half_mean": mean(&w[h..]),
            "min_log10_ratio": r.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        }));
        println!(
            "sigma_y {sy}: mean w_t first half {:.4e}, second half {:.4e}",
            mean(&w[..h]),
            mean(&w[h..])
        );
        wt_rows.extend(w.into_iter().map(|(t, v)| vec![num(sy), t.to_string(), num(v)]));
        ratio_rows.extend(r.points.into_iter().map(|(t, v)| vec![num(sy), t.to_string(), num(v)]));
    }
    out.csv("wt.csv", &header(&["sigma_y", "t", "w_t"]), wt_rows)?;
    out.csv("term_ratio.csv", &header(&["sigma_y", "t", "log10_ratio"]), ratio_rows)?;
    Ok(json!({ "curves": summary }))
}
