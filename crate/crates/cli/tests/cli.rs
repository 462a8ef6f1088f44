use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

const BMUX: &str = env!("CARGO_BIN_EXE_bmux");
const HARNESS: &str = env!("CARGO_BIN_EXE_harness");

struct Daemon {
    child: Child,
    aap2: String,
}

impl Daemon {
    fn start(dir: &Path) -> Daemon {
        let cfg = dir.join("a.json");
        std::fs::write(
            &cfg,
            format!(
                r#"{{
                    "node_id": "dtn://a.dtn/",
                    "admin_secret": "s3cret",
                    "aap2": {{"tcp": "127.0.0.1:0"}},
                    "clas": [{{"type": "mtcp", "listen": "127.0.0.1:0"}}],
                    "storage": {{"path": "{}"}}
                }}"#,
                dir.join("store").display()
            ),
        )
        .unwrap();
        let mut child = Command::new(BMUX)
            .args(["daemon", "--config"])
            .arg(&cfg)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        assert!(line.contains("dtn://a.dtn/ ready"), "{line}");
        let aap2 = line
            .split_whitespace()
            .find_map(|w| w.strip_prefix("aap2="))
            .expect("aap2 address in ready line")
            .to_string();
        Daemon { child, aap2 }
    }

    fn bmux(&self, args: &[&str]) -> Command {
        let mut c = Command::new(BMUX);
        c.args(args).env("BMUX_AAP2", &self.aap2).env_remove("BMUX_ADMIN_SECRET");
        c
    }

    fn interrupt(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-INT", &pid]).status().unwrap();
        self.child.wait().unwrap()
    }
}

fn run(mut c: Command) -> Output {
    c.output().unwrap()
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"node_id": "dtn://a.dtn/", "bdm_timeout_ms": "soon"}"#).unwrap();
    let out = Command::new(BMUX).args(["daemon", "-c"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bdm_timeout_ms"));
}

#[test]
fn send_recv_link_fib_storage() {
    let dir = tempfile::tempdir().unwrap();
    let d = Daemon::start(dir.path());

    let recv = d
        .bmux(&["recv", "--agent", "echo", "--hex"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let mut send = d
        .bmux(&["send", "--to", "dtn://a.dtn/echo"])
        .stdin(Stdio::piped())
        .spawn()
        .unwrap();
    send.stdin.take().unwrap().write_all(b"hello\x00world").unwrap();
    assert!(send.wait().unwrap().success());
    let out = recv.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), hex::encode(b"hello\x00world"));

    let peer = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let cla = format!("mtcp:{}", peer.local_addr().unwrap());
    let link = ["link", "up", "--node", "dtn://b.dtn/", "--cla", &cla, "--flags", "0"];
    let mut wrong = d.bmux(&link);
    wrong.env("BMUX_ADMIN_SECRET", "nope");
    let out = run(wrong);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UNAUTHORIZED"));

    let mut right = d.bmux(&link);
    right.env("BMUX_ADMIN_SECRET", "s3cret");
    let out = run(right);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut fib = d.bmux(&["fib", "show"]);
    fib.env("BMUX_ADMIN_SECRET", "s3cret");
    let out = run(fib);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("dtn://b.dtn/ via {cla}")));

    let mut q = d.bmux(&["storage", "query", "--dest", "dtn://b.dtn/*"]);
    q.env("BMUX_ADMIN_SECRET", "s3cret");
    let out = run(q);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    assert!(d.interrupt().success());
}

#[test]
fn harness_runs_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let junit = dir.path().join("report.xml");
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/two_node_direct.json");
    let out = Command::new(HARNESS)
        .arg("run")
        .arg(&scenario)
        .arg("--junit")
        .arg(&junit)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS two_node_direct"));
    assert!(std::fs::read_to_string(&junit).unwrap().contains("<testsuite name=\"two_node_direct\""));

    let out = Command::new(HARNESS).args(["run", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
