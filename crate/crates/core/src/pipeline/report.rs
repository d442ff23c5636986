//! Cross-cohort label distribution and the static SVG report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{create_parent, Probabilities};
use crate::assoc::{or_magnitude, AssociationResult, Granularity};
use crate::error::{Error, Result};
use crate::ingest::csv_err;
use crate::proto::{BranchId, ProtoModel};
use crate::stats::{mean_std, median, pca_2d, percentile_linear};

/// Labels whose prevalence differs by more than this many percentage
/// points between cohorts are flagged.
pub const FLAG_DIFFERENCE_PCT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl ScoreSummary {
    fn of(mut v: Vec<f64>) -> ScoreSummary {
        if v.is_empty() {
            return ScoreSummary {
                n: 0,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
            };
        }
        v.sort_by(f64::total_cmp);
        ScoreSummary {
            n: v.len(),
            q1: percentile_linear(&v, 0.25),
            median: percentile_linear(&v, 0.5),
            q3: percentile_linear(&v, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistributionRow {
    pub label: String,
    /// Percent of records with probability ≥ threshold.
    pub train_pct: f64,
    pub infer_pct: f64,
    /// infer − train, in percentage points.
    pub difference_pct: f64,
    pub flagged: bool,
    /// Scores among records predicted positive.
    pub train_scores: ScoreSummary,
    pub infer_scores: ScoreSummary,
}

fn column(p: &Probabilities, label: &str) -> Option<Vec<f64>> {
    let j = p.class_names.iter().position(|c| c == label)?;
    Some(p.rows.iter().map(|r| r.2[j]).collect())
}

/// Per label: share of each cohort predicted positive, the difference and
/// the positive-score distributions. A label missing from one cohort has
/// prevalence 0 there.
pub fn label_distribution_report(
    train: &Probabilities,
    infer: &Probabilities,
    threshold: f64,
) -> Result<Vec<LabelDistributionRow>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("fusion threshold {threshold} outside [0, 1]")));
    }
    let mut labels = train.class_names.clone();
    for l in &infer.class_names {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    let side = |p: &Probabilities, label: &str| -> (f64, ScoreSummary) {
        let Some(col) = column(p, label) else {
            return (0.0, ScoreSummary::of(Vec::new()));
        };
        let pos: Vec<f64> = col.into_iter().filter(|&s| s >= threshold).collect();
        let pct = if p.rows.is_empty() { 0.0 } else { 100.0 * pos.len() as f64 / p.rows.len() as f64 };
        (pct, ScoreSummary::of(pos))
    };
    Ok(labels
        .into_iter()
        .map(|label| {
            let (train_pct, train_scores) = side(train, &label);
            let (infer_pct, infer_scores) = side(infer, &label);
            let difference_pct = infer_pct - train_pct;
            LabelDistributionRow {
                flagged: difference_pct.abs() > FLAG_DIFFERENCE_PCT,
                label,
                train_pct,
                infer_pct,
                difference_pct,
                train_scores,
                infer_scores,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeasureRow {
    pub branch: String,
    pub class_id: usize,
    pub phecode: String,
    pub status: String,
    pub distance: f64,
    pub odds_ratio: Option<f64>,
}

pub fn read_group_measures(path: &Path) -> Result<Vec<GroupMeasureRow>> {
    read_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLongRow {
    pub phecode: String,
    pub feature_set: String,
    pub auc: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: String,
}

pub fn read_benchmark_long(path: &Path) -> Result<Vec<BenchmarkLongRow>> {
    read_rows(path)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub struct ReportInputs<'a> {
    pub model: &'a ProtoModel,
    pub train_probabilities: Probabilities,
    pub infer_probabilities: Probabilities,
    pub results: &'a [AssociationResult],
    pub group_measures: Vec<GroupMeasureRow>,
    pub benchmark: Vec<BenchmarkLongRow>,
    pub categories: BTreeMap<String, String>,
    pub fusion_threshold: f64,
}

fn plot_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::InvalidInput(format!("plot: {e}"))
}

fn write_svg(path: &Path, svg: String) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Writes every report file into `dir` and returns their paths.
pub fn write_report(dir: &Path, inputs: &ReportInputs<'_>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let mut summary = String::new();

    let rows = label_distribution_report(&inputs.train_probabilities, &inputs.infer_probabilities, inputs.fusion_threshold)?;
    let p = dir.join("label_distribution.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
    w.write_record([
        "label",
        "train_pct",
        "infer_pct",
        "difference_pct",
        "flagged",
        "train_n_positive",
        "train_median_score",
        "infer_n_positive",
        "infer_median_score",
    ])?;
    for r in &rows {
        w.write_record([
            r.label.clone(),
            r.train_pct.to_string(),
            r.infer_pct.to_string(),
            r.difference_pct.to_string(),
            r.flagged.to_string(),
            r.train_scores.n.to_string(),
            r.train_scores.median.to_string(),
            r.infer_scores.n.to_string(),
            r.infer_scores.median.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    out.push(p);
    let p = dir.join("label_distribution.svg");
    write_svg(&p, label_distribution_svg(&rows)?)?;
    out.push(p);
    let _ = writeln!(summary, "label distribution (threshold {}):", inputs.fusion_threshold);
    for r in &rows {
        let _ = writeln!(
            summary,
            "  {:<8} train {:>6.2}%  infer {:>6.2}%  diff {:>+6.2}{}",
            r.label,
            r.train_pct,
            r.infer_pct,
            r.difference_pct,
            if r.flagged { "  *" } else { "" }
        );
    }

    let sig: Vec<&AssociationResult> = inputs.results.iter().filter(|r| r.significant).collect();
    let p = dir.join("or_magnitude.svg");
    let groups: Vec<(String, Vec<f64>)> = Granularity::ALL
        .iter()
        .map(|g| {
            let v = sig.iter().filter(|r| r.granularity == *g).map(|r| or_magnitude(r.odds_ratio).log10()).collect();
            (g.to_string(), v)
        })
        .collect();
    write_svg(&p, box_svg("Significant associations: log10 OR magnitude", "log10 max(OR, 1/OR)", &groups)?)?;
    out.push(p);
    let _ = writeln!(summary, "\nsignificant associations ({} of {} tests):", sig.len(), inputs.results.len());
    for g in Granularity::ALL {
        let v: Vec<f64> = sig.iter().filter(|r| r.granularity == g).map(|r| r.odds_ratio).collect();
        let m: Vec<f64> = v.iter().map(|&o| or_magnitude(o)).collect();
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.3}"));
        let _ = writeln!(
            summary,
            "  {:<16} n {:>5}  median OR {:>9}  median magnitude {:>9}",
            g.to_string(),
            v.len(),
            fmt(median(&v)),
            fmt(median(&m))
        );
    }

    let mut cats: Vec<&String> = inputs.categories.values().collect();
    cats.sort();
    cats.dedup();
    let mut cat_groups = Vec::new();
    for cat in cats {
        for g in Granularity::ALL {
            let v: Vec<f64> = sig
                .iter()
                .filter(|r| r.granularity == g && inputs.categories.get(&r.phecode) == Some(cat))
                .map(|r| or_magnitude(r.odds_ratio).log10())
                .collect();
            if !v.is_empty() {
                cat_groups.push((format!("{cat} | {g}"), v));
            }
        }
    }
    let p = dir.join("or_magnitude_by_category.svg");
    write_svg(&p, box_svg("OR magnitude by phecode category", "log10 max(OR, 1/OR)", &cat_groups)?)?;
    out.push(p);

    let by_status = |s: &str| -> Vec<f64> {
        inputs.group_measures.iter().filter(|m| m.status == s).map(|m| m.distance).collect()
    };
    let mu = vec![("Mixed".to_string(), by_status("Mixed")), ("Uniform".to_string(), by_status("Uniform"))];
    let p = dir.join("mixed_uniform.svg");
    write_svg(&p, box_svg("Intra-class cosine distance", "distance", &mu)?)?;
    out.push(p);
    let _ = writeln!(summary, "\nintra-class distance by significance status:");
    for (s, v) in &mu {
        let (m, sd) = mean_std(v);
        let _ = writeln!(summary, "  {s:<8} n {:>5}  mean {m:.4}  std {sd:.4}", v.len());
    }

    for b in &inputs.model.branches {
        let rows: Vec<Vec<f64>> = b.prototypes.iter().map(|p| p.vector.clone()).collect();
        let pca = match pca_2d(&rows) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{}: pca skipped: {e}", b.config.branch);
                continue;
            }
        };
        let name = b.config.branch.as_str();
        let p = dir.join(format!("pca_{name}.csv"));
        let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
        w.write_record(["prototype", "class", "pc1", "pc2"])?;
        for (proto, c) in b.prototypes.iter().zip(&pca.coords) {
            w.write_record([
                proto.id().to_string(),
                inputs.model.class_names[proto.class_id].clone(),
                c[0].to_string(),
                c[1].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        out.push(p);
        let p = dir.join(format!("pca_{name}.svg"));
        write_svg(&p, pca_svg(b.config.branch, &inputs.model.class_names, b, &pca.coords, pca.explained_ratio())?)?;
        out.push(p);
    }

    let mut auc: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in &inputs.benchmark {
        if let Some(a) = r.auc {
            auc.insert((r.phecode.as_str(), r.feature_set.as_str()), a);
        }
    }
    let pairs: Vec<(f64, f64)> = auc
        .iter()
        .filter(|((_, s), _)| *s == "fusion")
        .filter_map(|((phe, _), &f)| auc.get(&(*phe, "prototype-combined")).map(|&c| (f, c)))
        .collect();
    let p = dir.join("auc_fusion_vs_combined.svg");
    write_svg(&p, auc_svg(&pairs)?)?;
    out.push(p);
    let wins = pairs.iter().filter(|(f, c)| c >= f).count();
    let _ = writeln!(
        summary,
        "\nprediction: prototype-combined AUC >= fusion AUC for {wins} of {} phecodes",
        pairs.len()
    );

    let p = dir.join("summary.txt");
    std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(out)
}

fn label_distribution_svg(rows: &[LabelDistributionRow]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let lim = rows
            .iter()
            .map(|r| r.difference_pct.abs())
            .fold(FLAG_DIFFERENCE_PCT * 2.0, f64::max)
            * 1.15;
        let n = rows.len().max(1);
        let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
        let mut chart = ChartBuilder::on(&root)
            .caption("Predicted label prevalence: inference minus training", ("sans-serif", 16))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), -lim..lim)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    labels.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc("difference (percentage points)")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(rows.iter().enumerate().map(|(i, r)| {
                let x = i as f64;
                let colour = if r.flagged { RED.mix(0.8) } else { BLUE.mix(0.5) };
                Rectangle::new([(x - 0.35, 0.0), (x + 0.35, r.difference_pct)], colour.filled())
            }))
            .map_err(plot_err)?;
        chart
            .draw_series(rows.iter().enumerate().filter(|(_, r)| r.flagged).map(|(i, r)| {
                let y = r.difference_pct + lim * 0.05 * r.difference_pct.signum();
                Text::new("*", (i as f64, y), ("sans-serif", 18).into_font())
            }))
            .map_err(plot_err)?;
        for y in [FLAG_DIFFERENCE_PCT, -FLAG_DIFFERENCE_PCT] {
            chart
                .draw_series(std::iter::once(PathElement::new(
                    vec![(-0.5, y), (n as f64 - 0.5, y)],
                    BLACK.mix(0.3),
                )))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn box_svg(title: &str, y_desc: &str, groups: &[(String, Vec<f64>)]) -> Result<String> {
    let groups: Vec<&(String, Vec<f64>)> = groups.iter().filter(|(_, v)| !v.is_empty()).collect();
    let mut svg = String::new();
    {
        let width = (160 + 90 * groups.len()).max(420) as u32;
        let root = SVGBackend::with_string(&mut svg, (width, 440)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
        let pad = (hi - lo) * 0.08;
        let (lo, hi) = ((lo - pad) as f32, (hi + pad) as f32);
        let names: Vec<String> = groups.iter().map(|(n, _)| n.clone()).collect();
        let n = names.len().max(1);
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 16))
            .margin(12)
            .x_label_area_size(60)
            .y_label_area_size(56)
            .build_cartesian_2d(-0.5f32..(n as f32 - 0.5), lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-4 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(y_desc)
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(groups.iter().enumerate().map(|(i, (_, v))| {
                Boxplot::new_vertical(i as f32, &Quartiles::new(v)).width(24).whisker_width(0.5)
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn pca_svg(
    branch: BranchId,
    class_names: &[String],
    b: &crate::proto::BranchModel,
    coords: &[[f64; 2]],
    ratio: [f64; 2],
) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (560, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let span = |k: usize| {
            let (lo, hi) = coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), c| (a.min(c[k]), z.max(c[k])));
            let pad = ((hi - lo) * 0.1).max(1e-6);
            (lo - pad)..(hi + pad)
        };
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{branch} prototypes"), ("sans-serif", 16))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(span(0), span(1))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(format!("PC1 ({:.1}%)", 100.0 * ratio[0]))
            .y_desc(format!("PC2 ({:.1}%)", 100.0 * ratio[1]))
            .draw()
            .map_err(plot_err)?;
        for (c, name) in class_names.iter().enumerate() {
            let colour = Palette99::pick(c).to_rgba();
            let pts: Vec<(f64, f64)> = b
                .prototypes
                .iter()
                .zip(coords)
                .filter(|(p, _)| p.class_id == c)
                .map(|(_, xy)| (xy[0], xy[1]))
                .collect();
            if pts.is_empty() {
                continue;
            }
            chart
                .draw_series(pts.into_iter().map(|xy| Circle::new(xy, 4, colour.filled())))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| Circle::new((x, y), 4, colour.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn auc_svg(pairs: &[(f64, f64)]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (480, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let lo = pairs.iter().flat_map(|&(a, b)| [a, b]).fold(0.5f64, f64::min) - 0.02;
        let mut chart = ChartBuilder::on(&root)
            .caption("Test AUC per phecode", ("sans-serif", 16))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(lo..1.0, lo..1.0)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("fusion")
            .y_desc("prototype-combined")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(std::iter::once(PathElement::new(vec![(lo, lo), (1.0, 1.0)], BLACK.mix(0.4))))
            .map_err(plot_err)?;
        chart
            .draw_series(pairs.iter().map(|&xy| Circle::new(xy, 4, BLUE.mix(0.7).filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
