//! Key-value rendering of estimation results.
//!
//! Unitaries are written as arrays of 8 reals (row-major `re, im` pairs),
//! rotations as arrays of 9 reals (row-major). Absent diagnostics are omitted.

use nalgebra::Matrix3;
use toml::Value;

use crate::cartan::gauge_distance;
use crate::kv::{natural_value, naturals, reals, KeyValues};
use crate::qcore::{Mat2, TwoQubitUnitary};
use crate::recovery::{Branch, RecoveryResult};

pub fn unitary_value(m: &Mat2) -> Value {
    let mut vals = Vec::with_capacity(8);
    for i in 0..2 {
        for j in 0..2 {
            vals.push(m[(i, j)].re);
            vals.push(m[(i, j)].im);
        }
    }
    reals(&vals)
}

pub fn rotation_value(r: &Matrix3<f64>) -> Value {
    reals(r.transpose().as_slice())
}

/// Report for one estimate. `truth` adds the gauge distance to the known interaction.
pub fn recovery_report(result: &RecoveryResult, fingerprint: &str, truth: Option<&TwoQubitUnitary>) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("report.schema", "memchan-report v1");
    kv.set("dataset.fingerprint", fingerprint);
    let d = &result.diagnostics;
    match d.sample_size {
        Some(n) => kv.set("dataset.records", natural_value(n)),
        None => kv.set("dataset.records", "exact"),
    }
    match &result.branch {
        Branch::Generic(g) => {
            kv.set("branch", "generic");
            kv.set("generic.alpha", reals(g.params.alpha.iter()));
            kv.set("generic.alpha_z_sign", g.sign.as_str());
            kv.set("generic.partial", g.partial);
            kv.set("generic.w2", unitary_value(&g.params.w2));
            kv.set("generic.v2", unitary_value(&g.params.v2));
            kv.set("generic.v1", unitary_value(&g.params.v1));
            if let Some(t) = truth {
                kv.set("truth.gauge_distance", gauge_distance(&g.params.assemble(), t));
            }
        }
        Branch::Controlled(b) => {
            kv.set("branch", "controlled");
            kv.set("controlled.observed_unitary", unitary_value(&b.unitary));
            kv.set("controlled.observed_rotation", rotation_value(&b.rotation));
            kv.set(
                "controlled.note",
                "one branch of a controlled-unitary interaction; beta and the other branches are not identifiable from one run",
            );
        }
    }
    kv.set("diagnostics.unitarity_score", d.unitarity_score);
    kv.set("diagnostics.translation_norm", d.translation_norm);
    if let Some(e1) = &d.single_channel {
        kv.set("diagnostics.single.linear", rotation_value(&e1.linear));
        kv.set("diagnostics.single.translation", reals(e1.translation.iter()));
        kv.set("diagnostics.single.choi_min_eigenvalue", e1.choi_min_eigenvalue());
    }
    if let Some(r) = d.svd_residual {
        kv.set("diagnostics.svd_residual", r);
    }
    if let Some(p) = &d.products {
        kv.set("diagnostics.products", reals(p.iter()));
        kv.set("diagnostics.alpha_degenerate", d.alpha_degenerate);
    }
    if !d.conditioning_settings.is_empty() {
        kv.set("diagnostics.conditioning_settings", naturals(d.conditioning_settings.iter().map(|&s| s as u64)));
    }
    if let Some(m) = &d.memory {
        kv.set("diagnostics.memory.rotation", rotation_value(&m.rotation));
        kv.set("diagnostics.memory.partial", m.partial);
        kv.set("diagnostics.memory.translation_residual", m.translation_residual);
        kv.set("diagnostics.memory.rotation_residual", m.rotation_residual);
        kv.set("diagnostics.memory.s_condition", m.s_condition);
        kv.set("diagnostics.memory.sign_statistic", m.sign_statistic);
        kv.set("diagnostics.memory.max_abs_mz", m.max_abs_mz);
        kv.set("diagnostics.memory.sign_weak", m.sign_weak);
    }
    if let Some(r) = d.model_residual {
        kv.set("diagnostics.model_residual", r);
    }
    if let Some(u) = d.fixed_point_unique {
        kv.set("diagnostics.fixed_point_unique", u);
    }
    if let Some(c) = d.fit_initial_cost {
        kv.set("diagnostics.fit.initial_cost", c);
    }
    if let Some(c) = d.fit_final_cost {
        kv.set("diagnostics.fit.final_cost", c);
    }
    kv
}
