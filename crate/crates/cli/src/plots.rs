//! SVG figures: per-patient estimate strips and the occlusion curve.

use std::path::Path;

use advmil::eval::{OcclusionPoint, PatientEstimate};
use anyhow::anyhow;
use plotters::prelude::*;

const EVENT: RGBColor = RGBColor(200, 40, 40);
const CENSORED: RGBColor = RGBColor(40, 90, 200);
const DRAW: RGBColor = RGBColor(150, 150, 150);

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

/// One column per patient, sorted by observed time: every draw as a grey
/// dot, the median as a black bar, the label as a cross (red for events,
/// blue for censored).
pub fn strip_plot(patients: &[PatientEstimate], max_patients: usize, path: &Path) -> anyhow::Result<()> {
    let mut shown: Vec<&PatientEstimate> = patients.iter().collect();
    shown.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.patient_id.cmp(&b.patient_id)));
    if shown.len() > max_patients && max_patients > 0 {
        let step = shown.len() as f64 / max_patients as f64;
        shown = (0..max_patients).map(|k| shown[(k as f64 * step) as usize]).collect();
    }
    let y_max = shown
        .iter()
        .flat_map(|p| p.draws.iter().copied().chain([p.t, p.median]))
        .fold(1e-6_f64, f64::max)
        * 1.05;
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("Sampled time estimates per patient", ("sans-serif", 18))
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5..shown.len() as f64 - 0.5, 0.0..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("patient (sorted by observed time)")
        .y_desc("normalized time")
        .draw()
        .map_err(plot_err)?;
    let draws = shown
        .iter()
        .enumerate()
        .flat_map(|(x, p)| p.draws.iter().map(move |&y| Circle::new((x as f64, y), 2, DRAW.mix(0.6).filled())));
    chart.draw_series(draws).map_err(plot_err)?;
    chart
        .draw_series(shown.iter().enumerate().map(|(x, p)| {
            let x = x as f64;
            PathElement::new(vec![(x - 0.35, p.median), (x + 0.35, p.median)], BLACK.stroke_width(2))
        }))
        .map_err(plot_err)?
        .label("median")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK.stroke_width(2)));
    for (delta, color, name) in [(0u8, EVENT, "event time"), (1u8, CENSORED, "censoring time")] {
        chart
            .draw_series(
                shown
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.delta == delta)
                    .map(|(x, p)| Cross::new((x as f64, p.t), 5, color.stroke_width(2))),
            )
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| Cross::new((x + 8, y), 5, color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

type Panel = (&'static str, fn(&OcclusionPoint) -> f64, RGBColor);

/// C-index and MAE against the fraction of regions masked, side by side.
pub fn occlusion_curve(points: &[OcclusionPoint], path: &Path) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, (960, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let series: [Panel; 2] = [("C-index", |p| p.c_index, EVENT), ("MAE", |p| p.mae, CENSORED)];
    for (area, (name, value, color)) in panels.iter().zip(series) {
        let ys: Vec<f64> = points.iter().map(value).collect();
        let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        let pad = ((hi - lo) * 0.1).max(1e-3);
        let mut chart = ChartBuilder::on(area)
            .margin(12)
            .caption(format!("{name} under region occlusion"), ("sans-serif", 16))
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(0.0..1.0, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("mask ratio")
            .y_desc(name)
            .draw()
            .map_err(plot_err)?;
        let line: Vec<(f64, f64)> = points.iter().map(|p| (p.mask_ratio, value(p))).collect();
        chart.draw_series(LineSeries::new(line.clone(), color.stroke_width(2))).map_err(plot_err)?;
        chart
            .draw_series(line.into_iter().map(|xy| Circle::new(xy, 4, color.filled())))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
