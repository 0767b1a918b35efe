//! Plot-ready CSV emission. Two stable schemas:
//!
//! `pipeline.csv` (cumulative tape volume and buffer occupancy over time):
//! `t_s,tape_bytes_cum,online_used,offline_used,backlog`
//!
//! `scalability.csv` (scan performance versus concurrent clients):
//! `label,clients,events,bytes,elapsed_max_s,per_client_mean_s,per_client_p95_s,aggregate_bps,failures,peak_open_handlers,cpu_proxy_tokens`
//!
//! Plotting stays external; `plot_script` emits a gnuplot recipe for both.

use std::path::Path;

use crate::metrics::Sample;

use super::stress::StressRow;

pub fn pipeline_csv(samples: &[Sample]) -> String {
    let mut out = String::from("t_s,tape_bytes_cum,online_used,offline_used,backlog\n");
    for s in samples {
        out.push_str(&format!(
            "{:.3},{},{},{},{}\n",
            s.t_s, s.tape_raw_cum, s.online_used, s.offline_used, s.backlog
        ));
    }
    out
}

pub fn scalability_csv(rows: &[StressRow]) -> String {
    let mut out = String::from(
        "label,clients,events,bytes,elapsed_max_s,per_client_mean_s,per_client_p95_s,aggregate_bps,failures,peak_open_handlers,cpu_proxy_tokens\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.1},{},{},{:.1}\n",
            r.label,
            r.clients,
            r.events_read,
            r.bytes_read,
            r.elapsed_max_s,
            r.per_client_mean_s,
            r.per_client_p95_s,
            r.aggregate_bps,
            r.failures,
            r.peak_open_handlers,
            r.cpu_proxy_tokens,
        ));
    }
    out
}

pub fn write_reports(
    out_dir: &Path,
    samples: &[Sample],
    rows: &[StressRow],
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("pipeline.csv"), pipeline_csv(samples))?;
    std::fs::write(out_dir.join("scalability.csv"), scalability_csv(rows))?;
    std::fs::write(out_dir.join("plots.gp"), plot_script())?;
    Ok(())
}

/// A gnuplot recipe for the two CSVs; data only lives in the CSVs.
pub fn plot_script() -> String {
    r#"set datafile separator ','
set terminal pngcairo size 900,600

set output 'pipeline.png'
set xlabel 'time (s)'
set ylabel 'bytes'
set key left top
plot 'pipeline.csv' using 1:2 skip 1 with lines title 'cumulative to tape', \
     'pipeline.csv' using 1:3 skip 1 with lines title 'online buffer', \
     'pipeline.csv' using 1:4 skip 1 with lines title 'offline buffer', \
     'pipeline.csv' using 1:5 skip 1 with lines title 'tape backlog'

set output 'scalability.png'
set xlabel 'concurrent clients'
set ylabel 'aggregate bytes/s'
set logscale x 2
plot '< grep flatB scalability.csv' using 2:8 with linespoints title 'flat backend', \
     '< grep containerA scalability.csv' using 2:8 with linespoints title 'container backend'
"#
    .to_string()
}
