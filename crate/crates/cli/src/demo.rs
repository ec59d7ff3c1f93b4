//! Worked fusion examples with their known answers.

use std::fmt::Write as _;

use anyhow::Result;
use boxfuse_core::fusion::{aabbfi_diagnostics, fuse_aabbfi, fuse_average, fuse_median, AxisDiagnostics};
use boxfuse_core::geometry::Aabb;

const TOLERANCE: f64 = 0.01;

struct Example {
    title: &'static str,
    boxes: [[f64; 4]; 3],
    aabbfi: [f64; 4],
    average: [f64; 4],
    median: [f64; 4],
}

const EXAMPLES: [Example; 3] = [
    Example {
        title: "Example 1: three overlapping boxes",
        boxes: [[1., 1., 4., 6.], [2., 2., 5., 7.], [3., 3., 6., 8.]],
        aabbfi: [1.44, 1.42, 4.44, 6.42],
        average: [2., 2., 5., 7.],
        median: [2., 2., 5., 7.],
    },
    Example {
        title: "Example 2: one box overlapping on y only",
        boxes: [[1., 1., 4., 6.], [2., 2., 5., 7.], [7., 4., 10., 9.]],
        aabbfi: [1., 1.38, 4., 6.38],
        average: [3.33, 2.33, 6.33, 7.33],
        median: [2., 2., 5., 7.],
    },
    Example {
        title: "Example 3: one disjoint box",
        boxes: [[1., 1., 4., 6.], [2., 2., 5., 7.], [7., 8., 8., 9.]],
        aabbfi: [1., 1., 4., 6.],
        average: [3.33, 3.66, 5.67, 7.33],
        median: [2., 2., 5., 7.],
    },
];

/// Known x-axis lattice entry of example 1.
const EXAMPLE1_X12: (&str, f64) = ("011:{x1,x2}", 4.0 / 9.0);

/// Renders every example; the flag is false if any answer is off.
pub fn run() -> Result<(String, bool)> {
    let mut out = String::new();
    let mut ok = true;
    for ex in &EXAMPLES {
        let boxes: Vec<Aabb> = ex.boxes.iter().map(|&c| Aabb::try_from(c)).collect::<Result<_, _>>()?;
        writeln!(out, "== {}", ex.title)?;
        for (i, b) in boxes.iter().enumerate() {
            writeln!(out, "  B{} = {b}", i + 1)?;
        }
        let diag = aabbfi_diagnostics(&boxes);
        write_axis(&mut out, "x", &diag.x)?;
        write_axis(&mut out, "y", &diag.y)?;

        let rows = [
            ("aabbfi", fuse_aabbfi(&boxes)?.bbox, ex.aabbfi),
            ("average", fuse_average(&boxes)?.bbox, ex.average),
            ("median", fuse_median(&boxes)?.bbox, ex.median),
        ];
        for (name, got, want) in rows {
            let pass = got.coords().iter().zip(want).all(|(g, w)| (g - w).abs() <= TOLERANCE);
            ok &= pass;
            writeln!(
                out,
                "  {name:<8} {}  expected {}  {}",
                fmt4(got.coords()),
                fmt4(want),
                if pass { "ok" } else { "MISMATCH" }
            )?;
        }
        writeln!(out)?;
    }

    let boxes: Vec<Aabb> = EXAMPLES[0].boxes.iter().map(|&c| Aabb::try_from(c)).collect::<Result<_, _>>()?;
    let lattice = aabbfi_diagnostics(&boxes).x.lattice;
    let (key, want) = EXAMPLE1_X12;
    let got = lattice.as_ref().and_then(|l| l.values.get(key)).copied();
    let pass = got.is_some_and(|g| (g - want).abs() < 1e-9);
    ok &= pass;
    writeln!(
        out,
        "example 1 x-axis g({}) = {}  expected {want:.6}  {}",
        key.split(':').nth(1).unwrap_or(key),
        got.map_or("missing".to_string(), |g| format!("{g:.6}")),
        if pass { "ok" } else { "MISMATCH" }
    )?;
    Ok((out, ok))
}

fn write_axis(out: &mut String, name: &str, d: &AxisDiagnostics) -> std::fmt::Result {
    let evidence: Vec<String> = d.evidence.iter().map(|i| format!("[{}, {}]", i.lo(), i.hi())).collect();
    writeln!(out, "  {name}-axis evidence {}", evidence.join(" "))?;
    if let Some(l) = &d.lattice {
        let cells: Vec<String> = l
            .values
            .iter()
            .map(|(k, v)| format!("{}={v:.4}", k.split(':').nth(1).unwrap_or(k)))
            .collect();
        writeln!(out, "    lattice {}", cells.join(" "))?;
    }
    if let Some(c) = &d.chains {
        writeln!(out, "    lower chain {:?} -> {}", c.lower.permutation(), fmt_vals(c.lower.values()))?;
        writeln!(out, "    upper chain {:?} -> {}", c.upper.permutation(), fmt_vals(c.upper.values()))?;
    }
    if let Some(e) = &d.error {
        writeln!(out, "    {e}")?;
    }
    Ok(())
}

fn fmt_vals(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt4(c: [f64; 4]) -> String {
    format!("[{:.2}, {:.2}, {:.2}, {:.2}]", c[0], c[1], c[2], c[3])
}
