use std::path::PathBuf;
use std::process::{Command, Output};

fn pifo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pifo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn validate_prints_paths() {
    let o = pifo(&["validate", &config("hpfq.tree")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("WFQ_Left -> WFQ_Root"));
}

#[test]
fn every_bundled_config_validates() {
    for name in [
        "stfq.tree",
        "hpfq.tree",
        "hshaping.tree",
        "lstf.tree",
        "stop_and_go.tree",
        "min_rate.tree",
        "fifo.tree",
        "field_priority.tree",
    ] {
        let o = pifo(&["validate", &config(name)]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn broken_config_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tree");
    std::fs::write(&path, "node Root\n  sched fifo\n  match p.flow_id ==\n").unwrap();
    let o = pifo(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_two() {
    let o = pifo(&["validate", "/nonexistent/x.tree"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pifo(&["run", &config("fifo.tree"), "/nonexistent/trace.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compile_then_check_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("hs.mesh");
    let o = pifo(&["compile", &config("hshaping.tree"), "--out", mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&mesh).unwrap();
    assert!(text.starts_with("blocks 3\n"));
    let o = pifo(&["check", &config("hshaping.tree"), mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn check_reports_colocated_shaping() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("bad.mesh");
    // The shaping PIFO of WFQ_Right moved into the root's block.
    std::fs::write(
        &mesh,
        "blocks 2
block 0
  lp 0 sched WFQ_Root
  lp 1 shaping WFQ_Right
block 1
  lp 0 sched WFQ_Left
  lp 1 sched WFQ_Right
next_hop
  0:0 ref 0 -> dequeue 1:0
  0:0 ref 1 -> dequeue 1:1
  0:1 ref 1 -> enqueue 0:0
  1:0 packet -> transmit
  1:1 packet -> transmit
enqueue
  WFQ_Left 1:0 0:0
  WFQ_Right 1:1 0:1 | 0:0
",
    )
    .unwrap();
    let o = pifo(&["check", &config("hshaping.tree"), mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("block 0"), "{}", stderr(&o));
}

#[test]
fn too_few_blocks_is_a_diagnostic() {
    let o = pifo(&["compile", &config("hshaping.tree"), "--max-blocks", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = pifo(&["run", &config("fifo.tree")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_is_seeded_and_rejects_overload() {
    let a = pifo(&["gen", "poisson:rates=0.3/0.3,len=100,ticks=500", "--seed", "4"]);
    let b = pifo(&["gen", "poisson:rates=0.3/0.3,len=100,ticks=500", "--seed", "4"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("arrival_tick,packet_id,flow_id,length_bytes,fields\n"));
    let o = pifo(&["gen", "poisson:rates=0.7/0.7"]);
    assert_eq!(o.status.code(), Some(1));
    let o = pifo(&["run", &config("fifo.tree")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_modes_agree_on_hpfq() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = pifo(&[
        "gen",
        "onoff:flows=4,burst=30,idle=10,len=300,ticks=3000",
        "--seed",
        "9",
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let run = |mode: &str| {
        let o = pifo(&[
            "run",
            &config("hpfq.tree"),
            trace.to_str().unwrap(),
            "--mode",
            mode,
            "--line-rate",
            "150",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };
    let behavioral = run("behavioral");
    assert!(behavioral.lines().count() > 1);
    assert_eq!(run("mesh"), behavioral);
}

#[test]
fn run_writes_stats_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let events = dir.path().join("e.log");
    let stats = dir.path().join("s.csv");
    let o = pifo(&[
        "run",
        &config("stfq.tree"),
        "gen:backlogged:flows=2,len=100,ticks=4000",
        "--line-rate",
        "50",
        "--horizon",
        "2000",
        "--stats-window",
        "100",
        "--out",
        out.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(&out).unwrap();
    assert!(log.starts_with("packet_id,flow_id,arrival_tick,departure_tick,length_bytes\n"));
    let ev = std::fs::read_to_string(&events).unwrap();
    assert!(ev.contains("horizon_exceeded"), "{ev}");
    let s = std::fs::read_to_string(&stats).unwrap();
    assert!(s.starts_with("kind,key,packets,bytes,share"));
    assert!(s.contains("\nflow,0,") && s.contains("\nflow,1,"));
}

#[test]
fn mesh_mode_rejects_crowded_ticks() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    std::fs::write(
        &trace,
        "arrival_tick,packet_id,flow_id,length_bytes,fields\n0,0,0,10,\n0,1,1,10,\n",
    )
    .unwrap();
    let o = pifo(&["run", &config("hpfq.tree"), trace.to_str().unwrap(), "--mode", "mesh"]);
    assert_eq!(o.status.code(), Some(1));
    let o = pifo(&["run", &config("hpfq.tree"), trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_line_rate_is_a_diagnostic() {
    let o = pifo(&["run", &config("fifo.tree"), "gen:backlogged:flows=1,ticks=5", "--line-rate", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = pifo(&["run", &config("fifo.tree")]);
    assert_eq!(o.status.code(), Some(1));
}
