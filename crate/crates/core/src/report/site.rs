use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ProbeInput, ReportDocument};
use crate::error::{Error, Result};

/// Stand-in page used when no explorer bundle is supplied. Draws one
/// embedding at a time, colored by a label column.
pub const FALLBACK_VIEWER: &str = r#"<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Feature inspection report</title>
<style>
body { font-family: sans-serif; margin: 1em; }
#plot { border: 1px solid #ccc; }
#legend span { margin-right: 1em; }
</style>
</head>
<body>
<h1>Feature inspection report</h1>
<p>
<label>Embedding <select id="embedding"></select></label>
<label>Color by <select id="color"></select></label>
</p>
<canvas id="plot" width="800" height="800"></canvas>
<div id="legend"></div>
<pre id="info"></pre>
<script src="assets/viewer.js"></script>
</body>
</html>
"#;

const FALLBACK_SCRIPT: &str = r#"'use strict';
const palette = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd',
  '#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf'];
fetch('report.json').then(r => r.json()).then(report => {
  const embSel = document.getElementById('embedding');
  const colSel = document.getElementById('color');
  const sets = {};
  for (const d of report.datasets) for (const s of d.sample_sets) sets[s.id] = s;
  report.embeddings.forEach((e, i) => embSel.add(new Option(e.id, i)));
  function columns() {
    const e = report.embeddings[embSel.value];
    return e ? Object.keys(sets[e.sample_set].labels) : [];
  }
  function fillColumns() {
    const keep = colSel.value;
    colSel.innerHTML = '';
    for (const c of columns()) colSel.add(new Option(c, c));
    if (columns().includes(keep)) colSel.value = keep;
  }
  function draw() {
    const e = report.embeddings[embSel.value];
    const canvas = document.getElementById('plot');
    const ctx = canvas.getContext('2d');
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (!e) return;
    const set = sets[e.sample_set];
    const labels = set.labels[colSel.value];
    const xy = e.coords;
    let x0 = Infinity, x1 = -Infinity, y0 = Infinity, y1 = -Infinity;
    for (let i = 0; i < xy.length; i += 2) {
      x0 = Math.min(x0, xy[i]); x1 = Math.max(x1, xy[i]);
      y0 = Math.min(y0, xy[i + 1]); y1 = Math.max(y1, xy[i + 1]);
    }
    const sx = (canvas.width - 20) / ((x1 - x0) || 1);
    const sy = (canvas.height - 20) / ((y1 - y0) || 1);
    for (let i = 0; i < xy.length / 2; i++) {
      const code = labels ? labels.codes[i] : 0;
      ctx.fillStyle = palette[code % palette.length];
      ctx.fillRect(10 + (xy[2 * i] - x0) * sx, 10 + (xy[2 * i + 1] - y0) * sy, 2, 2);
    }
    const legend = document.getElementById('legend');
    legend.innerHTML = '';
    if (labels) labels.categories.forEach((c, k) => {
      const span = document.createElement('span');
      span.style.color = palette[k % palette.length];
      span.textContent = c;
      legend.appendChild(span);
    });
    const m = report.metrics.find(m => m.embedding === e.id);
    const probes = report.probes.filter(p => p.embedding === e.id || (p.dataset === e.dataset && !p.embedding));
    document.getElementById('info').textContent = JSON.stringify({ params: e.params, metrics: m,
      probes: probes.map(p => ({ input: p.input, column: p.result.label_column,
        accuracy: p.result.mean_accuracy, chance: p.result.chance_baseline })) }, null, 2);
  }
  embSel.onchange = () => { fillColumns(); draw(); };
  colSel.onchange = draw;
  fillColumns();
  draw();
});
"#;

fn input_name(p: ProbeInput) -> &'static str {
    match p {
        ProbeInput::Features => "features",
        ProbeInput::Raw => "raw",
        ProbeInput::Embedding => "embedding",
    }
}

/// Plain-text digest: probe accuracy against chance and a metric table.
pub fn render_summary(doc: &ReportDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "report {} generated {}", doc.version, doc.generated_at);
    let _ = writeln!(s, "\ndatasets");
    for d in &doc.datasets {
        let sets: Vec<&str> = d.sample_sets.iter().map(|x| x.id.as_str()).collect();
        let _ = writeln!(
            s,
            "  {}  n={} dim={} unlabelled={} sha256={}  sample sets: {}",
            d.tag,
            d.n_samples,
            d.dim,
            d.unlabelled,
            &d.checksum[..d.checksum.len().min(12)],
            if sets.is_empty() { "-".to_string() } else { sets.join(", ") }
        );
    }

    let _ = writeln!(s, "\nprobes (test accuracy vs chance)");
    let _ = writeln!(
        s,
        "  {:<14} {:<10} {:<12} {:>8} {:>8} {:>8} {:>8}  embedding",
        "dataset", "input", "target", "mean", "std", "chance", "lift"
    );
    for p in &doc.probes {
        let r = &p.result;
        let _ = writeln!(
            s,
            "  {:<14} {:<10} {:<12} {:>8.4} {:>8.4} {:>8.4} {:>+8.4}  {}",
            p.dataset,
            input_name(p.input),
            r.label_column,
            r.mean_accuracy,
            r.std_accuracy,
            r.chance_baseline,
            r.mean_accuracy - r.chance_baseline,
            p.embedding.as_deref().unwrap_or("-")
        );
    }

    let _ = writeln!(s, "\nmetrics");
    let _ = writeln!(s, "  {:<40} {:>7} {:>8} {:>8}  silhouette 2-d | high-d", "embedding", "n", "knn", "cpd");
    for m in &doc.metrics {
        let sc = &m.scores;
        let knn = sc.knn_preservation.map_or("-".to_string(), |k| format!("{:.4}", k.value));
        let cpd = sc.cpd.map_or("-".to_string(), |c| format!("{:.4}", c.rho));
        let sil: Vec<String> = sc
            .silhouette
            .iter()
            .map(|(col, v)| match sc.silhouette_high.get(col) {
                Some(h) => format!("{col}={v:.3}|{h:.3}"),
                None => format!("{col}={v:.3}"),
            })
            .collect();
        let _ = writeln!(s, "  {:<40} {:>7} {:>8} {:>8}  {}", m.embedding, m.n_evaluated, knn, cpd, sil.join(" "));
    }

    if !doc.failures.is_empty() {
        let _ = writeln!(s, "\nfailures");
        for f in &doc.failures {
            let _ = writeln!(s, "  {} {} {}: {}", f.dataset, f.stage, f.cell.as_deref().unwrap_or("-"), f.message);
        }
    }
    s
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            copy_dir(&src, &dst)?;
        } else {
            fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `summary.txt`, `index.html` and `assets/` into
/// `dir`. `bundle` is a prebuilt explorer holding `index.html` and an
/// optional `assets/` directory; without it a minimal viewer is written.
pub fn write_report(doc: &ReportDocument, dir: &Path, bundle: Option<&Path>) -> Result<()> {
    doc.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.json"), &doc.to_json()?)?;
    write_file(&dir.join("summary.txt"), &render_summary(doc))?;
    let assets = dir.join("assets");
    match bundle {
        Some(b) => {
            let index = b.join("index.html");
            fs::copy(&index, dir.join("index.html")).map_err(|e| Error::io(&index, e))?;
            if b.join("assets").is_dir() {
                copy_dir(&b.join("assets"), &assets)?;
            } else {
                fs::create_dir_all(&assets).map_err(|e| Error::io(&assets, e))?;
            }
        }
        None => {
            write_file(&dir.join("index.html"), FALLBACK_VIEWER)?;
            fs::create_dir_all(&assets).map_err(|e| Error::io(&assets, e))?;
            write_file(&assets.join("viewer.js"), FALLBACK_SCRIPT)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample_doc;
    use super::*;

    #[test]
    fn writes_a_static_site() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rpt");
        let doc = sample_doc();
        write_report(&doc, &out, None).unwrap();
        for f in ["report.json", "summary.txt", "index.html", "assets/viewer.js"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let json = fs::read_to_string(out.join("report.json")).unwrap();
        assert_eq!(ReportDocument::from_json(&json).unwrap().to_json().unwrap(), json);
        let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains("epoch-020"));
        assert!(summary.contains("0.5000"));
    }

    #[test]
    fn copies_a_prebuilt_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("bundle");
        fs::create_dir_all(bundle.join("assets/js")).unwrap();
        fs::write(bundle.join("index.html"), "<html>explorer</html>").unwrap();
        fs::write(bundle.join("assets/js/app.js"), "console.log(1)").unwrap();
        let out = dir.path().join("out");
        write_report(&sample_doc(), &out, Some(&bundle)).unwrap();
        assert_eq!(fs::read_to_string(out.join("index.html")).unwrap(), "<html>explorer</html>");
        assert!(out.join("assets/js/app.js").is_file());
    }

    #[test]
    fn unwritable_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let target = blocker.join("sub");
        let err = write_report(&sample_doc(), &target, None).unwrap_err();
        assert!(err.to_string().contains(&target.display().to_string()), "{err}");
    }

    #[test]
    fn summary_lists_failures() {
        let mut doc = sample_doc();
        doc.failures.push(super::super::Failure {
            dataset: "epoch-020".into(),
            stage: "umap".into(),
            cell: Some("c1".into()),
            message: "boom".into(),
        });
        let s = render_summary(&doc);
        assert!(s.contains("failures") && s.contains("boom"));
    }
}
