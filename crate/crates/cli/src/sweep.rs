//! Parameter sweeps: every grid cell runs `trials` independent seeds.

use std::process::ExitCode;

use rayon::prelude::*;

use racetee::sim::scenario::Scenario;
use racetee::sim::run_scenario;

use crate::{load_text, SweepArgs};

struct Axis {
    path: String,
    values: Vec<toml::Value>,
}

fn parse_axis(spec: &str) -> Result<Axis, String> {
    let (path, vals) = spec.split_once('=').ok_or_else(|| format!("--param '{spec}' must look like path=v1,v2"))?;
    let values: Vec<toml::Value> = vals
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| {
            if let Ok(i) = v.parse::<i64>() {
                toml::Value::Integer(i)
            } else if let Ok(f) = v.parse::<f64>() {
                toml::Value::Float(f)
            } else if let Ok(b) = v.parse::<bool>() {
                toml::Value::Boolean(b)
            } else {
                toml::Value::String(v.to_string())
            }
        })
        .collect();
    if values.is_empty() {
        return Err(format!("--param '{spec}' has no values"));
    }
    Ok(Axis { path: path.to_string(), values })
}

/// Sets a dotted path. `host.*.dropout` sets the probability of every
/// host's dropout behaviour.
fn set_path(doc: &mut toml::Value, path: &str, v: &toml::Value) -> Result<(), String> {
    if path == "host.*.dropout" {
        let hosts = doc.get_mut("host").and_then(|h| h.as_array_mut()).ok_or("template has no [[host]] entries")?;
        for h in hosts {
            for b in h.get_mut("behaviors").and_then(|b| b.as_array_mut()).into_iter().flatten() {
                if b.get("kind").and_then(|k| k.as_str()) == Some("dropout") {
                    b.as_table_mut().expect("table").insert("probability".into(), v.clone());
                }
            }
        }
        return Ok(());
    }
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let t = cur.as_table_mut().ok_or_else(|| format!("'{path}' does not name a table field"))?;
        cur = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let t = cur.as_table_mut().ok_or_else(|| format!("'{path}' does not name a table field"))?;
    t.insert(parts[parts.len() - 1].to_string(), v.clone());
    Ok(())
}

struct Cell {
    labels: Vec<String>,
    scenario: Scenario,
}

#[derive(Default)]
struct Agg {
    runs: u64,
    gaps: f64,
    redundant: f64,
    latency_sum: f64,
    latency_n: f64,
    failures: u64,
}

pub fn sweep(a: SweepArgs) -> ExitCode {
    match build_and_run(&a) {
        Ok(csv) => {
            match &a.out {
                Some(dir) => {
                    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("sweep.csv"), &csv)) {
                        eprintln!("error: writing {}: {e}", dir.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{csv}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn build_and_run(a: &SweepArgs) -> Result<String, String> {
    if a.params.len() > 2 {
        return Err("at most two swept parameters".into());
    }
    let axes: Vec<Axis> = a.params.iter().map(|p| parse_axis(p)).collect::<Result<_, _>>()?;
    let cells_n: u64 = axes.iter().map(|x| x.values.len() as u64).product();
    let runs = cells_n * a.trials;
    if runs > a.budget {
        return Err(format!(
            "grid needs {runs} runs ({cells_n} cells x {} trials), over the budget of {}; \
             reduce the grid or trials, or raise --budget",
            a.trials, a.budget
        ));
    }
    let (origin, text) = load_text(&a.template)?;
    let base: toml::Value = toml::from_str(&text).map_err(|e| format!("{origin}: {e}"))?;

    let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for (ai, axis) in axes.iter().enumerate() {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (0..axis.values.len()).map(move |vi| {
                    let mut c = c.clone();
                    c.push((ai, vi));
                    c
                })
            })
            .collect();
    }
    let mut cells = Vec::new();
    for combo in combos {
        let mut doc = base.clone();
        let mut labels = Vec::new();
        for (ai, vi) in combo {
            let v = &axes[ai].values[vi];
            set_path(&mut doc, &axes[ai].path, v)?;
            labels.push(v.to_string());
        }
        let text = toml::to_string(&doc).map_err(|e| e.to_string())?;
        let scenario = Scenario::parse(&text).map_err(|e| format!("cell {}: {e}", labels.join(",")))?;
        cells.push(Cell { labels, scenario });
    }

    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..a.trials).map(move |t| (c, t))).collect();
    let results: Vec<(usize, racetee::sim::RunReport)> = jobs
        .par_iter()
        .map(|&(c, t)| (c, run_scenario(cells[c].scenario.clone(), Some(a.seed.wrapping_add(t)))))
        .collect();
    let mut aggs: Vec<Agg> = (0..cells.len()).map(|_| Agg::default()).collect();
    for (c, r) in &results {
        let g = &mut aggs[*c];
        g.runs += 1;
        g.gaps += r.availability_gaps.len() as f64;
        g.redundant += r.redundant_publishes as f64;
        for q in &r.requests {
            if let Some(l) = q.latency {
                g.latency_sum += l as f64;
                g.latency_n += 1.0;
            }
        }
        if !r.is_clean() {
            g.failures += 1;
            if a.verbose {
                eprintln!("cell {}: {:?}", cells[*c].labels.join(","), r.invariant_violations);
            }
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = axes.iter().map(|x| x.path.clone()).collect();
    header.extend(
        ["c_over_n", "runs", "mean_availability_gaps", "mean_redundant_publishes", "mean_latency_blocks", "invariant_failures"]
            .map(String::from),
    );
    w.write_record(&header).map_err(|e| e.to_string())?;
    for (cell, g) in cells.iter().zip(&aggs) {
        let runs = g.runs.max(1) as f64;
        let mut row = cell.labels.clone();
        row.push(format!("{:.4}", cell.scenario.committee as f64 / cell.scenario.nodes as f64));
        row.push(g.runs.to_string());
        row.push(format!("{:.4}", g.gaps / runs));
        row.push(format!("{:.4}", g.redundant / runs));
        row.push(if g.latency_n > 0.0 { format!("{:.4}", g.latency_sum / g.latency_n) } else { String::new() });
        row.push(g.failures.to_string());
        w.write_record(&row).map_err(|e| e.to_string())?;
    }
    String::from_utf8(w.into_inner().map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}
