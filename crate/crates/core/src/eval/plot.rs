use std::path::Path;

use plotters::prelude::*;

use crate::env::AdversaryLoss;
use crate::error::{DadiError, Result};
use crate::eval::metrics::pareto_front;
use crate::eval::report::AggregateRow;

const COLORS: [RGBColor; 2] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40)];

/// Three panels: AUC against `1 - gamma`, disparity against `1 - gamma`, and
/// the AUC/disparity plane with each kind's Pareto front. Medians are drawn as
/// lines with first/third-quartile whiskers; `baseline` (full-feature AUC,
/// disparity) appears as a black square in the last panel.
pub fn render_tradeoff_svg(
    path: &Path,
    title: &str,
    rows: &[AggregateRow],
    baseline: Option<(f64, f64)>,
) -> Result<()> {
    draw(path, title, rows, baseline).map_err(|e| DadiError::Format(format!("plot {}: {e}", path.display())))
}

fn draw(
    path: &Path,
    title: &str,
    rows: &[AggregateRow],
    baseline: Option<(f64, f64)>,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let root = root.titled(title, ("sans-serif", 18))?;
    let panels = root.split_evenly((1, 3));
    let kinds = [AdversaryLoss::Ce, AdversaryLoss::Gnl1];

    for (panel, metric) in panels.iter().take(2).zip(["AUC", "disparity"]) {
        let pick = |r: &AggregateRow| if metric == "AUC" { r.auc } else { r.disparity };
        let (lo, hi) = bounds(rows.iter().flat_map(|r| [pick(r).q1, pick(r).q3]));
        let mut chart = ChartBuilder::on(panel)
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(45)
            .build_cartesian_2d(0.0..1.0, lo..hi)?;
        chart.configure_mesh().x_desc("1 - gamma").y_desc(metric).draw()?;
        for (kind, color) in kinds.iter().zip(COLORS) {
            let mut pts: Vec<&AggregateRow> = rows.iter().filter(|r| r.reward_kind == *kind).collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| b.gamma.total_cmp(&a.gamma));
            chart
                .draw_series(LineSeries::new(pts.iter().map(|r| (1.0 - r.gamma, pick(r).median)), color))?
                .label(kind.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
            for r in &pts {
                let x = 1.0 - r.gamma;
                chart.draw_series(std::iter::once(PathElement::new(
                    vec![(x, pick(r).q1), (x, pick(r).q3)],
                    color,
                )))?;
            }
        }
        chart.configure_series_labels().border_style(BLACK).draw()?;
    }

    let (dlo, dhi) = bounds(
        rows.iter()
            .map(|r| r.disparity.median)
            .chain(baseline.map(|b| b.1)),
    );
    let (alo, ahi) = bounds(rows.iter().map(|r| r.auc.median).chain(baseline.map(|b| b.0)));
    let mut chart = ChartBuilder::on(&panels[2])
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(dlo..dhi, alo..ahi)?;
    chart.configure_mesh().x_desc("disparity").y_desc("AUC").draw()?;
    for (kind, color) in kinds.iter().zip(COLORS) {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.reward_kind == *kind)
            .map(|r| (r.auc.median, r.disparity.median))
            .collect();
        if pts.is_empty() {
            continue;
        }
        chart.draw_series(pts.iter().map(|&(a, d)| Circle::new((d, a), 3, color.filled())))?;
        let front = pareto_front(&pts);
        chart.draw_series(LineSeries::new(front.iter().map(|&(a, d)| (d, a)), color))?;
    }
    if let Some((a, d)) = baseline {
        let (w, h) = ((dhi - dlo) * 0.012, (ahi - alo) * 0.025);
        chart.draw_series(std::iter::once(Rectangle::new(
            [(d - w, a - h), (d + w, a + h)],
            BLACK.filled(),
        )))?;
    }
    root.present()?;
    Ok(())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::quartiles;

    #[test]
    fn writes_an_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let rows: Vec<AggregateRow> = [0.0, 0.5, 0.9]
            .iter()
            .map(|&g| AggregateRow {
                gamma: g,
                reward_kind: AdversaryLoss::Ce,
                n_folds: 2,
                auc: quartiles(&[0.9 - g * 0.1, 0.92 - g * 0.1]),
                disparity: quartiles(&[0.2 - g * 0.2, 0.21 - g * 0.2]),
                mean_features_median: 4.0,
            })
            .collect();
        render_tradeoff_svg(&path, "synthetic", &rows, Some((0.93, 0.22))).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
    }
}
