use std::path::Path;

use crate::error::Result;
use crate::metrics::perm_score;
use crate::numerics::RngStream;
use crate::theory::{deflation_equal_mix, deflation_shifted_support, prop1_check, sparse_latents, well_conditioned_mixing};

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheck {
    pub check: String,
    pub parameter: String,
    pub value: f64,
    pub expected: f64,
    pub passed: bool,
}

fn check(name: &str, parameter: String, value: f64, expected: f64, tol: f64) -> TheoryCheck {
    TheoryCheck {
        check: name.into(),
        parameter,
        value,
        expected,
        passed: (value - expected).abs() <= tol,
    }
}

/// Closed-form deflation values and a batch of recovery instances.
pub fn theory_checks(seed: u64, instances: usize) -> Result<Vec<TheoryCheck>> {
    let mut out = Vec::new();
    for n in [1, 2, 3, 4, 9] {
        let v = deflation_equal_mix(n, 36)?;
        out.push(check("equal_mix", format!("n={n}"), v, 1.0 / (n as f64).sqrt(), 1e-12));
    }
    for f in [4, 8, 16] {
        out.push(check("shifted_support", format!("F={f}"), deflation_shifted_support(f)?, 0.5, 1e-12));
    }
    let mut rng = RngStream::new(seed).derive("prop1");
    for i in 0..instances {
        let z = sparse_latents(200, 10, 2, &mut rng)?;
        let aa = well_conditioned_mixing(10, 8, 2, 0.1, &mut rng)?;
        let ab = well_conditioned_mixing(10, 8, 2, 0.1, &mut rng)?;
        let recovered = prop1_check(z.view(), &aa, &ab)?;
        let raw = perm_score(aa.mix(z.view())?.view(), ab.mix(z.view())?.view())?;
        out.push(check("prop1_recovered", format!("instance={i}"), recovered, 1.0, 1e-6));
        out.push(TheoryCheck {
            check: "prop1_raw".into(),
            parameter: format!("instance={i}"),
            value: raw,
            expected: recovered,
            passed: raw < recovered,
        });
    }
    Ok(out)
}

pub fn write_theory_checks(checks: &[TheoryCheck], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["check", "parameter", "value", "expected", "passed"])?;
    for c in checks {
        w.write_record([
            c.check.clone(),
            c.parameter.clone(),
            c.value.to_string(),
            c.expected.to_string(),
            c.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
