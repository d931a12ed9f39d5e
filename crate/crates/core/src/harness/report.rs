//! Plain-text rendering of a bound report: one `key = value` line per
//! quantity, deterministic order, floats at 17 significant digits.
//! Quantities whose hypotheses failed render as `unavailable`, with the
//! reason on a `note =` line.

use std::fmt::Write as _;

use crate::analysis::BoundReport;
use crate::harness::trace::fmt_float;

fn line(out: &mut String, key: &str, value: &str) {
    let _ = writeln!(out, "{key} = {value}");
}

fn float_line(out: &mut String, key: &str, v: f64) {
    line(out, key, &fmt_float(v));
}

fn opt_line(out: &mut String, key: &str, v: Option<f64>) {
    match v {
        Some(v) => float_line(out, key, v),
        None => line(out, key, "unavailable"),
    }
}

/// Render the full report. The output is self-contained: bound values,
/// envelope samples, every constant they consumed with its provenance, the
/// measured quantities the bounds should dominate, and notes explaining any
/// unavailable piece.
pub fn render_report(report: &BoundReport) -> String {
    let mut out = String::new();
    let inputs = &report.inputs;

    float_line(&mut out, "delta2", inputs.delta2);
    opt_line(&mut out, "lemma1_bound", report.lemma1);
    match &report.theorem1 {
        Some(c) => {
            float_line(&mut out, "C1", c.c1);
            let joined: Vec<String> = c.c_r.iter().map(|&v| fmt_float(v)).collect();
            let cr_text = if joined.is_empty() {
                "none".to_string()
            } else {
                joined.join(",")
            };
            line(&mut out, "C_r", &cr_text);
            float_line(&mut out, "sum_C_r", c.c_r.iter().sum());
            float_line(&mut out, "C2", c.c2);
            float_line(&mut out, "Q", c.q);
        }
        None => {
            for key in ["C1", "C_r", "sum_C_r", "C2", "Q"] {
                line(&mut out, key, "unavailable");
            }
        }
    }
    line(&mut out, "R_formula", report.r_formula.name());
    opt_line(&mut out, "R", report.r);
    line(
        &mut out,
        "theorem2_step_ok",
        if report.theorem2_step_ok { "true" } else { "false" },
    );

    float_line(&mut out, "F1_minus_Fstar", report.f1_minus_fstar);
    line(&mut out, "iterations", &report.iterations.to_string());
    for (t, v) in &report.theorem1_envelope {
        float_line(&mut out, &format!("theorem1_envelope_t{t}"), *v);
    }
    for (t, v) in &report.theorem2_envelope {
        float_line(&mut out, &format!("theorem2_envelope_T{t}"), *v);
    }

    float_line(
        &mut out,
        "measured.max_consensus_dev",
        report.measured_max_consensus_dev,
    );
    float_line(&mut out, "measured.avg_grad_sq", report.measured_avg_grad_sq);
    float_line(&mut out, "measured.final_loss", report.measured_final_loss);

    let consts: [(&str, f64); 15] = [
        ("G", inputs.g),
        ("B", inputs.b),
        ("M", inputs.m),
        ("sigma", inputs.sigma),
        ("mu", inputs.mu),
        ("gamma_m", inputs.gamma_m),
        ("xi_m", inputs.xi_m),
        ("eps", inputs.eps),
        ("eps_D", inputs.eps_d),
        ("lambda", inputs.lambda),
        ("eta", inputs.eta),
        ("theta_m", inputs.theta_m),
        ("e2", inputs.e2),
        ("e2_tilde", inputs.e2_tilde),
        ("delta2", inputs.delta2),
    ];
    for (name, v) in consts {
        float_line(&mut out, &format!("const.{name}"), v);
    }
    line(&mut out, "const.tau", &inputs.tau.to_string());
    for (name, prov) in &report.provenance {
        line(&mut out, &format!("prov.{name}"), &prov.to_string());
    }
    for note in &report.notes {
        line(&mut out, "note", note);
    }
    out
}
