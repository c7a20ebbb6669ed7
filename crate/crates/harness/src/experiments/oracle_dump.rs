//! Exact target table for a hyper-grid, with its modes.

use anyhow::{ensure, Context, Result};
use ipslab::grid::{enumerate_target, path_count_table, GridEnv, ENUMERATION_CAP};
use ipslab::metrics::ModeSet;
use ipslab::render::heatmap_svg;
use serde_json::json;

use super::{coords_label, Ctx};
use crate::artifacts::{csv_body, num, Check, Report};

pub struct OracleOutcome {
    pub target: Vec<f64>,
    pub rewards: Vec<f64>,
    pub modes: ModeSet,
    pub report: Report,
}

/// Reads back the `target_prob` column of a table written by [`run`].
pub fn parse_target_column(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let col = rdr.headers()?.iter().position(|h| h == "target_prob").context("no target_prob column")?;
    rdr.records().map(|rec| Ok(rec?[col].parse::<f64>()?)).collect()
}

pub fn run(ctx: &Ctx) -> Result<OracleOutcome> {
    let cfg = ctx.cfg;
    let env = *cfg.grid();
    let lattice = env.lattice();
    let cells = lattice.ensure_enumerable(ENUMERATION_CAP)?;
    let modes = ModeSet::from_env(&env)?;

    if ctx.dry_run {
        let report = ctx.dry_report(json!({ "cells": cells, "modes": modes.coords }));
        return Ok(OracleOutcome { target: Vec::new(), rewards: Vec::new(), modes, report });
    }

    let target = enumerate_target(&env)?.into_vec();
    let rewards = (0..cells).map(|c| env.terminal_reward(&lattice.coords(c))).collect::<Result<Vec<_>, _>>()?;
    let paths = path_count_table(&lattice)?;

    let mut header: Vec<String> = (1..=lattice.dims).map(|d| format!("x_{d}")).collect();
    header.extend(["reward", "target_prob", "paths"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..cells).map(|c| {
        lattice
            .coords(c)
            .into_iter()
            .map(|v| v.to_string())
            .chain([num(rewards[c]), num(target[c]), paths[c].map_or(String::new(), |n| n.to_string())])
            .collect::<Vec<_>>()
    });
    let table = csv_body(&header, rows);

    let mut out = ctx.output()?;
    let all = ctx.stamp(None);
    out.csv("target_table.csv", &all, &table)?;
    out.json(
        "modes.json",
        &all,
        &json!({
            "modes": modes.coords,
            "labels": modes.coords.iter().map(|c| coords_label(c)).collect::<Vec<_>>(),
            "reward": env.max_reward(),
            "target_prob_per_mode": target[modes.cells[0]],
        }),
    )?;
    if lattice.dims == 2 {
        out.svg("target_density.svg", &heatmap_svg(&lattice, &target, &all.render_meta("target r / Σ r"))?)?;
    }

    let reread = parse_target_column(&table)?;
    ensure!(reread.len() == cells, "table has {} rows for {cells} cells", reread.len());
    let identical = reread.iter().zip(&target).all(|(a, b)| a.to_bits() == b.to_bits());
    let total: f64 = target.iter().sum();
    let checks = vec![
        Check::new("table_round_trip", identical, format!("{cells} probabilities re-read bit for bit: {identical}")),
        Check::new("target_sums_to_one", (total - 1.0).abs() <= 1e-12, format!("sum = {total:.17}")),
    ];
    let summary = json!({
        "cells": cells,
        "modes": modes.coords,
        "total_reward": rewards.iter().sum::<f64>(),
        "checks": checks,
        "config": cfg,
    });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(OracleOutcome { target, rewards, modes, report })
}
