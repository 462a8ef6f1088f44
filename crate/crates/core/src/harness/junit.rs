//! JUnit-style XML for CI systems.

use std::fmt::Write;

use super::ScenarioReport;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\n' && c != '\t' => {}
            c => out.push(c),
        }
    }
    out
}

/// One `<testsuite>` per scenario and one `<testcase>` per step.
pub fn junit_xml(reports: &[ScenarioReport]) -> String {
    let mut x = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuites>\n");
    for r in reports {
        let failures = r.steps.iter().filter(|s| s.ok == Some(false)).count() + usize::from(r.setup_error.is_some());
        let skipped = r.steps.iter().filter(|s| s.ok.is_none()).count();
        let _ = writeln!(
            x,
            "  <testsuite name=\"{}\" tests=\"{}\" failures=\"{failures}\" skipped=\"{skipped}\" time=\"{:.3}\">",
            escape(&r.name),
            r.steps.len().max(1),
            r.duration.as_secs_f64()
        );
        if let Some(e) = &r.setup_error {
            let _ = writeln!(
                x,
                "    <testcase classname=\"{0}\" name=\"setup\"><failure message=\"{1}\"/></testcase>",
                escape(&r.name),
                escape(e)
            );
        }
        for s in &r.steps {
            let _ = write!(
                x,
                "    <testcase classname=\"{}\" name=\"{:02} {}\" time=\"{:.3}\"",
                escape(&r.name),
                s.index,
                escape(&s.label),
                s.elapsed.as_secs_f64()
            );
            match s.ok {
                Some(true) => x.push_str("/>\n"),
                Some(false) => {
                    let _ = writeln!(x, "><failure message=\"{}\"/></testcase>", escape(&s.detail));
                }
                None => x.push_str("><skipped/></testcase>\n"),
            }
        }
        x.push_str("  </testsuite>\n");
    }
    x.push_str("</testsuites>\n");
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::StepOutcome;
    use std::time::Duration;

    #[test]
    fn failures_and_skips() {
        let r = ScenarioReport {
            name: "s<1>".into(),
            steps: vec![
                StepOutcome {
                    index: 1,
                    label: "send".into(),
                    ok: Some(true),
                    detail: String::new(),
                    elapsed: Duration::ZERO,
                },
                StepOutcome {
                    index: 2,
                    label: "expect".into(),
                    ok: Some(false),
                    detail: "got \"x\" & more".into(),
                    elapsed: Duration::ZERO,
                },
                StepOutcome {
                    index: 3,
                    label: "restart".into(),
                    ok: None,
                    detail: String::new(),
                    elapsed: Duration::ZERO,
                },
            ],
            duration: Duration::from_millis(1500),
            sim_elapsed_ms: None,
            setup_error: None,
        };
        let x = junit_xml(&[r]);
        assert!(x.contains("name=\"s&lt;1&gt;\" tests=\"3\" failures=\"1\" skipped=\"1\" time=\"1.500\""));
        assert!(x.contains("<failure message=\"got &quot;x&quot; &amp; more\"/>"));
        assert!(x.contains("<skipped/>"));
    }
}
