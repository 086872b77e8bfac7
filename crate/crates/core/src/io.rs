//! CSV, JSON and SVG writers. Every float is printed with 17 significant digits.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::analysis::{BasinReport, SweepRow};
use crate::error::Result;
use crate::lifting::LiftProfile;
use crate::model::ValidatedProblem;
use crate::simulate::Trajectory;
use crate::spectral::Spectrum;
use crate::synthesis::{ContinuousGainSet, GainSet};

/// `x` in scientific notation with 17 significant digits; `nan`, `inf`, `-inf` otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pretty JSON formatter that prints finite floats as `{:.16e}`.
struct Sig17<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format!("{value:.16e}").as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

/// Writes `value` as pretty JSON followed by a newline. Non-finite floats become `null`.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut w, Sig17(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    write_json(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("JSON output is UTF-8"))
}

/// Columns `index, lambda, boundary_flux`, 1-based index.
pub fn write_spectrum_csv<W: Write>(mut w: W, spectrum: &Spectrum) -> Result<()> {
    writeln!(w, "index,lambda,boundary_flux")?;
    for (i, (l, b)) in spectrum.lambdas().iter().zip(spectrum.boundary_fluxes()).enumerate() {
        writeln!(w, "{},{},{}", i + 1, fmt_f64(*l), fmt_f64(*b))?;
    }
    Ok(())
}

/// Mode matrix: one row per interior node, first column `x`.
pub fn write_modes_csv<W: Write>(mut w: W, problem: &ValidatedProblem, spectrum: &Spectrum, count: usize) -> Result<()> {
    let count = count.min(spectrum.dim());
    let header: Vec<String> = (1..=count).map(|i| format!("phi_{i}")).collect();
    writeln!(w, "x,{}", header.join(","))?;
    for (j, x) in problem.nodes().iter().enumerate() {
        let row: Vec<String> = (0..count).map(|i| fmt_f64(spectrum.modes()[(j, i)])).collect();
        writeln!(w, "{},{}", fmt_f64(*x), row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainsExport {
    #[serde(rename = "T")]
    pub period: f64,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub boundary_flux: Vec<f64>,
    pub gain_row: Vec<f64>,
    pub condition_number: f64,
    pub continuous_gain_row: Vec<f64>,
    pub precision_bits: u32,
}

impl GainsExport {
    pub fn new(gains: &GainSet, continuous: &ContinuousGainSet) -> GainsExport {
        GainsExport {
            period: gains.period(),
            gammas: gains.gammas().to_vec(),
            lambdas: gains.lambdas().to_vec(),
            boundary_flux: gains.fluxes().to_vec(),
            gain_row: gains.gain_row().to_vec(),
            condition_number: gains.condition_number(),
            continuous_gain_row: continuous.gain_row().to_vec(),
            precision_bits: gains.precision_bits() as u32,
        }
    }
}

/// Columns `x, psi_1, ..., psi_N` on the closed grid including both endpoints.
pub fn write_lifts_csv<W: Write>(mut w: W, problem: &ValidatedProblem, lifts: &[LiftProfile]) -> Result<()> {
    let header: Vec<String> = lifts.iter().map(|l| format!("psi_{}", l.k + 1)).collect();
    writeln!(w, "x,{}", header.join(","))?;
    let zeros: Vec<String> = lifts.iter().map(|_| fmt_f64(0.0)).collect();
    writeln!(w, "{},{}", fmt_f64(0.0), zeros.join(","))?;
    for (j, x) in problem.nodes().iter().enumerate() {
        let row: Vec<String> = lifts.iter().map(|l| fmt_f64(l.profile[j])).collect();
        writeln!(w, "{},{}", fmt_f64(*x), row.join(","))?;
    }
    let ends: Vec<String> = lifts.iter().map(|l| fmt_f64(l.boundary_value)).collect();
    writeln!(w, "{},{}", fmt_f64(problem.length()), ends.join(","))?;
    Ok(())
}

/// Columns `t, l2_norm, sob_norm, u_held`.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "t,l2_norm,sob_norm,u_held")?;
    for j in 0..traj.len() {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(traj.times[j]),
            fmt_f64(traj.l2_norms[j]),
            fmt_f64(traj.sobolev_norms[j]),
            fmt_f64(traj.held_at(j))
        )?;
    }
    Ok(())
}

/// Full snapshot dump: column `t` then the interior deviation values.
pub fn write_states_csv<W: Write>(mut w: W, problem: &ValidatedProblem, traj: &Trajectory) -> Result<()> {
    let xs: Vec<String> = problem.nodes().iter().map(|x| fmt_f64(*x)).collect();
    writeln!(w, "t,{}", xs.join(","))?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let row: Vec<String> = s.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{},{}", fmt_f64(*t), row.join(","))?;
    }
    Ok(())
}

/// Plain matrix, one row per line, no header.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &nalgebra::DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    let n = rows.iter().map(|r| r.gammas.len()).max().unwrap_or(0);
    let mut header = vec!["T".to_string()];
    header.extend((1..=n).map(|k| format!("gamma_{k}")));
    header.extend((1..=n).map(|k| format!("g_{k}")));
    header.extend(
        ["gain_distance", "contraction_bound", "condition_number", "coercivity", "rate", "blew_up", "error"]
            .map(String::from),
    );
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![fmt_f64(r.period)];
        cells.extend((0..n).map(|k| opt(r.gammas.get(k).copied())));
        cells.extend((0..n).map(|k| opt(r.gain_row.get(k).copied())));
        cells.extend([
            opt(r.gain_distance),
            opt(r.contraction_bound),
            opt(r.condition_number),
            opt(r.coercivity),
            opt(r.rate),
            r.blew_up.to_string(),
            csv_text(r.error.as_deref().unwrap_or("")),
        ]);
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_basin_csv<W: Write>(mut w: W, report: &BasinReport) -> Result<()> {
    writeln!(w, "amplitude,decayed,rate,blow_up_time")?;
    for r in &report.rows {
        writeln!(w, "{},{},{},{}", fmt_f64(r.amplitude), r.decayed, opt(r.rate), opt(r.blow_up_time))?;
    }
    Ok(())
}

/// One named `(t, norm)` series for [`log_norm_svg`].
pub struct Series<'a> {
    pub label: String,
    pub times: &'a [f64],
    pub norms: &'a [f64],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of `log10(norm)` against `t`, one polyline per series.
/// Non-positive or non-finite norms are skipped.
pub fn log_norm_svg(series: &[Series<'_>]) -> String {
    let (width, height, pad) = (640.0, 400.0, 50.0);
    let points: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.times
                .iter()
                .zip(s.norms)
                .filter(|(_, n)| **n > 0.0 && n.is_finite())
                .map(|(t, n)| (*t, n.log10()))
                .collect()
        })
        .collect();
    let all = points.iter().flatten();
    let (mut t0, mut t1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (t, y) in all {
        t0 = t0.min(*t);
        t1 = t1.max(*t);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !t0.is_finite() {
        (t0, t1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if t1 <= t0 {
        t1 = t0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |t: f64| pad + (t - t0) / (t1 - t0) * (width - 2.0 * pad);
    let sy = |y: f64| height - pad - (y - y0) / (y1 - y0) * (height - 2.0 * pad);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    out += &format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        width - 2.0 * pad,
        height - 2.0 * pad
    );
    out += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">t</text>\n",
        width / 2.0,
        height - 10.0
    );
    out += &format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">log10 norm</text>\n",
        height / 2.0,
        height / 2.0
    );
    for (v, anchor, x, y) in [
        (t0, "start", pad, height - pad + 14.0),
        (t1, "end", width - pad, height - pad + 14.0),
    ] {
        out += &format!("<text x=\"{x}\" y=\"{y}\" font-size=\"10\" text-anchor=\"{anchor}\">{v:.3}</text>\n");
    }
    for (v, y) in [(y0, height - pad), (y1, pad)] {
        out += &format!(
            "<text x=\"{}\" y=\"{y}\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>\n",
            pad - 4.0
        );
    }
    for (i, (s, pts)) in series.iter().zip(&points).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(t, y)| format!("{:.2},{:.2}", sx(*t), sy(*y))).collect();
        out += &format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        );
        out += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{}</text>\n",
            width - pad - 4.0,
            pad + 14.0 * (i as f64 + 1.0),
            escape_xml(&s.label)
        );
    }
    out += "</svg>\n";
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        let x = 1.234_567_890_123_456_7e-300;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_floats_round_trip_and_stay_valid() {
        #[derive(Serialize)]
        struct S {
            a: f64,
            b: Vec<f64>,
            c: f64,
        }
        let text = to_json_string(&S {
            a: 0.1,
            b: vec![1e-300, -3.5],
            c: f64::INFINITY,
        })
        .unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["a"].as_f64(), Some(0.1));
        assert_eq!(v["b"][0].as_f64(), Some(1e-300));
        assert!(v["c"].is_null());
    }

    #[test]
    fn svg_skips_nonpositive_norms() {
        let t = [0.0, 1.0, 2.0];
        let n = [1.0, 0.0, 0.1];
        let svg = log_norm_svg(&[Series {
            label: "a<b".into(),
            times: &t,
            norms: &n,
        }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
