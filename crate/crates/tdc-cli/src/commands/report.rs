use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tdc_core::tiling::{ranking_from_csv, RankingRow};

use crate::errors::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::util::{ensure_dir, guard_outputs, read_to_string, write_text};

pub const REPORT_CSV_HEADER: &str = "shape,scheme,runtime_s,speedup";

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// ranking.csv written by tile-select.
    #[arg(long)]
    pub ranking: PathBuf,
    /// Also write the table as CSV (with a manifest beside it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Recorded in the manifest; this command is fully deterministic.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn runtime(row: &RankingRow) -> f64 {
    row.measured_s.unwrap_or(row.combined_s)
}

/// Pull "H,W,C,N,R,S" out of a sibling tile-select manifest when present.
fn sibling_shape(ranking: &PathBuf) -> Option<(String, [usize; 3])> {
    let dir = ranking.parent()?;
    let text = std::fs::read_to_string(dir.join(crate::manifest::MANIFEST_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    let s = v.get("config")?.get("shape")?;
    let field = |k: &str| s.get(k)?.as_u64().map(|x| x as usize);
    let (h, w, c, n) = (field("h")?, field("w")?, field("c")?, field("n")?);
    let (r, sz) = (field("r")?, field("s")?);
    Some((format!("{h}x{w}x{c}x{n} {r}x{sz}"), [h, w, c]))
}

pub fn run(a: &ReportArgs) -> CliResult<()> {
    let rows = ranking_from_csv(&read_to_string(&a.ranking)?)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "{} contains no candidate rows",
            a.ranking.display()
        )));
    }
    let (shape_label, whole) = match sibling_shape(&a.ranking) {
        Some((label, [h, w, c])) => (label, Some((h, w, c))),
        None => ("-".to_string(), None),
    };

    // Baseline: the single-tile scheme when it is a candidate, otherwise the
    // slowest candidate.
    let single_tile = whole.and_then(|(h, w, c)| {
        rows.iter().find(|r| r.th == h && r.tw == w && r.tc == c)
    });
    let (baseline, baseline_kind) = match single_tile {
        Some(r) => (r, "single-tile"),
        None => (
            rows.iter()
                .max_by(|x, y| {
                    runtime(x)
                        .total_cmp(&runtime(y))
                        .then((x.th, x.tw, x.tc).cmp(&(y.th, y.tw, y.tc)))
                })
                .expect("nonempty rows"),
            "slowest candidate",
        ),
    };
    let base_time = runtime(baseline);

    let mut sorted: Vec<&RankingRow> = rows.iter().collect();
    sorted.sort_by(|x, y| {
        runtime(x)
            .total_cmp(&runtime(y))
            .then((x.th, x.tw, x.tc).cmp(&(y.th, y.tw, y.tc)))
    });

    let mut table = format!(
        "baseline: {}x{}x{} ({baseline_kind}), runtime {base_time:.6e} s\n",
        baseline.th, baseline.tw, baseline.tc
    );
    table.push_str(&format!(
        "{:<20} {:<12} {:>14} {:>9}\n",
        "shape", "scheme", "runtime_s", "speedup"
    ));
    let mut csv = String::from(REPORT_CSV_HEADER);
    csv.push('\n');
    for row in &sorted {
        let scheme = format!("{}x{}x{}", row.th, row.tw, row.tc);
        let rt = runtime(row);
        let speedup = base_time / rt;
        table.push_str(&format!(
            "{shape_label:<20} {scheme:<12} {rt:>14.6e} {speedup:>8.2}x\n"
        ));
        csv.push_str(&format!("{shape_label},{scheme},{rt},{speedup}\n"));
    }
    crate::util::print_stdout(&table);

    if let Some(out) = &a.out {
        let out_dir = out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(std::path::Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        ensure_dir(&out_dir)?;
        let manifest_path = out_dir.join(crate::manifest::MANIFEST_FILE);
        guard_outputs(&[out.clone(), manifest_path], a.force)?;
        write_text(out, &csv)?;
        let config = json!({
            "ranking": a.ranking.display().to_string(),
            "out": out.display().to_string(),
        });
        let mut mb = ManifestBuilder::new("report", a.seed, 1, config);
        mb.record_input(&a.ranking)?;
        mb.record_output(out)?;
        let result = json!({
            "rows": sorted.len(),
            "baseline_scheme": format!("{}x{}x{}", baseline.th, baseline.tw, baseline.tc),
            "baseline_kind": baseline_kind,
        });
        mb.write(&out_dir, result)?;
    }
    Ok(())
}
