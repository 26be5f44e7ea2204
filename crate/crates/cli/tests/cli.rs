use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use lagflow_cli::{
    cmd_blowup, cmd_plot, cmd_run, cmd_verify, load_trace, read_csv, read_json, DensityCsvRow,
    Exit, IndicatorRow, PlanesFile, PsiRow, Report, SnapshotFile, StepRow, Summary,
    FORMAT_VERSION,
};
use lagflow_core::flow::{self, TypeClass, Until};
use lagflow_core::mesh::Scenario;
use lagflow_core::monitors::{gaussian_density, weighted_psi, KernelSpec};
use lagflow_core::verify::Status;
use tempfile::TempDir;

fn lagflow(args: &[&str], dir: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_lagflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn clifford_config(dir: &Path) -> PathBuf {
    write(
        dir,
        "clifford.json",
        r#"{"format_version": 1,
            "scenario": {"name": "clifford_torus", "r0": 1.0, "resolution": 24},
            "snapshot_stride": 10}"#,
    )
}

#[test]
fn circle_run_estimates_the_singular_time() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "circle.json",
        r#"{"format_version": 1,
            "scenario": {"name": "circle", "r0": 1.0, "resolution": 64},
            "snapshot_stride": 100}"#,
    );
    assert_eq!(lagflow(&["run", "--config", cfg.to_str().unwrap(), "--out", "c"], tmp.path()), 0);
    let dir = tmp.path().join("c");
    let s: Summary = read_json(&dir.join("summary.json")).unwrap();
    assert_eq!(s.format_version, FORMAT_VERSION);
    let t = s.estimated_t.unwrap();
    assert!((t - 0.5).abs() < 5e-3, "{t}");
    assert_eq!(s.type_indicator.unwrap().classification, TypeClass::TypeI);

    let text = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "format_version,t,dt,volume,max_A_sq,min_cos_theta,max_H"
    );
    let rows: Vec<StepRow> = read_csv(&dir.join("trace.csv")).unwrap();
    assert_eq!(rows.len(), s.steps);
    assert!(rows.iter().all(|r| r.format_version == FORMAT_VERSION));
    let ind: Vec<IndicatorRow> = read_csv(&dir.join("type_indicator.csv")).unwrap();
    assert_eq!(ind.len(), s.steps + 1);
    let snaps = fs::read_dir(dir.join("snapshots")).unwrap().count();
    assert_eq!(snaps, s.snapshot_count);
    let last: SnapshotFile =
        read_json(&dir.join(format!("snapshots/snapshot_{:05}.json", snaps - 1))).unwrap();
    assert_eq!(last.t, s.final_time);
    assert_eq!(last.grid_shape, vec![64]);
    assert_eq!(last.positions.len(), 128);
}

#[test]
fn config_errors_exit_with_usage() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("not_json.json", "{"),
        ("unknown_field.json", r#"{"format_version": 1, "scenarios": []}"#),
        ("no_version.json", r#"{"scenario": {"name": "circle", "r0": 1.0, "resolution": 64}}"#),
        ("no_scenario.json", r#"{"format_version": 1}"#),
        (
            "bad_param.json",
            r#"{"format_version": 1, "scenario": {"name": "circle", "r0": -1.0, "resolution": 64}}"#,
        ),
        (
            "bad_cfl.json",
            r#"{"format_version": 1, "cfl": 0,
                "scenario": {"name": "circle", "r0": 1.0, "resolution": 64}}"#,
        ),
    ];
    for (name, text) in cases {
        let p = write(tmp.path(), name, text);
        assert_eq!(cmd_run(&p, Some(&tmp.path().join("o"))), Exit::Usage, "{name}");
    }
    assert_eq!(cmd_run(&tmp.path().join("missing.json"), None), Exit::Usage);
    assert_eq!(lagflow(&["run"], tmp.path()), 2);
    assert_eq!(lagflow(&["frobnicate"], tmp.path()), 2);
}

#[test]
fn zero_time_run_is_a_no_op() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "zero.json",
        r#"{"format_version": 1, "until": 0,
            "scenario": {"name": "graph_curve", "eps": 0.3, "resolution": 32}}"#,
    );
    let out = tmp.path().join("z");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    let rows: Vec<StepRow> = read_csv(&out.join("trace.csv")).unwrap();
    assert!(rows.is_empty());
    let s: Summary = read_json(&out.join("summary.json")).unwrap();
    assert_eq!((s.steps, s.snapshot_count, s.final_time), (0, 1, 0.0));
    assert!(s.singularity.is_none() && s.estimated_t.is_none());
    assert!(!out.join("type_indicator.csv").exists());
}

// the reloaded trace equals the one in memory, field by field
#[test]
fn saved_traces_reload_bit_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = clifford_config(tmp.path());
    let out = tmp.path().join("k");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    let (summary, loaded) = load_trace(&out).unwrap();
    let config = lagflow_cli::load_config(&cfg).unwrap();
    let scenario = Scenario::CliffordTorus { r0: 1.0, resolution: 24 };
    let trace = flow::run(scenario.build().unwrap(), Until::SINGULARITY, &config.controls()).unwrap();
    assert_eq!(summary.controls, trace.controls);
    assert_eq!(loaded, trace);

    let t_sing = trace.singularity_report.as_ref().unwrap().estimated_t;
    let spec = KernelSpec::new(&[0.0; 4], t_sing, None).unwrap();
    for (a, b) in loaded.snapshots.iter().zip(&trace.snapshots) {
        let (da, db) = (gaussian_density(a, &spec).unwrap(), gaussian_density(b, &spec).unwrap());
        assert_eq!(da.to_bits(), db.to_bits());
    }

    let tmp2 = TempDir::new().unwrap();
    let cfg = write(
        tmp2.path(),
        "graph.json",
        r#"{"format_version": 1, "until": 0.05, "snapshot_stride": 3,
            "scenario": {"name": "lagrangian_graph", "eps": 0.1, "delta": 0.1, "resolution": 16}}"#,
    );
    let out = tmp2.path().join("g");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    let (_, loaded) = load_trace(&out).unwrap();
    let scenario = Scenario::LagrangianGraph { eps: 0.1, delta: 0.1, resolution: 16 };
    let config = lagflow_cli::load_config(&cfg).unwrap();
    let trace = flow::run(scenario.build().unwrap(), Until::Time(0.05), &config.controls()).unwrap();
    assert_eq!(loaded, trace);
    let spec = KernelSpec::new(&[0.0; 4], 1.0, Some(2.0)).unwrap();
    for (a, b) in loaded.snapshots.iter().zip(&trace.snapshots) {
        assert_eq!(weighted_psi(a, &spec).unwrap().to_bits(), weighted_psi(b, &spec).unwrap().to_bits());
    }
}

#[test]
fn clifford_blowup_is_not_planar() {
    let tmp = TempDir::new().unwrap();
    let cfg = clifford_config(tmp.path());
    let out = tmp.path().join("k");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    assert_eq!(cmd_blowup(&out, None, Some(2), Some(5), None), Exit::Ok);
    let b = out.join("blowup");
    for k in 0..3 {
        let v: serde_json::Value = read_json(&b.join(format!("lambda_{k}.json"))).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["lambda"], 2f64.powi(k));
        assert_eq!(v["cloud"]["n"], 2);
    }
    assert!(!b.join("lambda_3.json").exists());
    let planes: PlanesFile = read_json(&b.join("planes.json")).unwrap();
    assert_eq!(planes.lambda, 4.0);
    let c = &planes.cluster;
    assert!(c.residual > 0.2 || c.unassigned_fraction > 0.5, "{c:?}");
    let density: Vec<DensityCsvRow> = read_csv(&b.join("density.csv")).unwrap();
    assert_eq!(density.len(), 3 * 4);
    // the rescaled torus lies on the sphere of radius sqrt(-4t) = 1
    for r in &density {
        assert_eq!(r.ratio.is_some(), r.radius > 1.0, "{r:?}");
    }
    let decay = fs::read_to_string(b.join("decay.csv")).unwrap();
    assert_eq!(decay.lines().count(), 4);
    assert!(decay.starts_with(
        "format_version,lambda,covered,grad_cos_sq,mean_curvature_sq,normal_position_sq,samples"
    ));
}

#[test]
fn blowup_needs_a_singularity() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "graph.json",
        r#"{"format_version": 1, "until": 0.1,
            "scenario": {"name": "graph_curve", "eps": 0.3, "resolution": 32}}"#,
    );
    let out = tmp.path().join("g");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    assert_eq!(cmd_blowup(&out, None, None, None, None), Exit::MissingPrerequisite);
    assert!(!out.join("blowup").exists());
    assert_eq!(lagflow(&["blowup", "g"], tmp.path()), 4);
    assert_eq!(cmd_blowup(&tmp.path().join("nothing"), None, None, None, None), Exit::Usage);
}

#[test]
fn calibrated_psi_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "graph.json",
        r#"{"format_version": 1, "until": 0.3, "snapshot_stride": 1, "resolutions": [32],
            "scenario": {"name": "lagrangian_graph", "eps": 0.1, "delta": 0.1, "resolution": 16},
            "kernels": [{"center": [0, 0, 0, 0], "reference_time": 2.0},
                        {"center": [0, 0, 0, 0], "reference_time": 0.1, "cutoff_radius": 1.0}]}"#,
    );
    let out = tmp.path().join("g");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    let s: Summary = read_json(&out.join("summary.json")).unwrap();
    assert_eq!(s.psi.len(), 2);
    let p = &s.psi[0];
    assert!(p.c_ref.unwrap() > 0.0);
    assert!(p.hold_fraction.unwrap() >= 0.99);
    assert_eq!(p.all_nonincreasing, Some(true));
    let rows: Vec<PsiRow> = read_csv(&out.join("psi_0.csv")).unwrap();
    assert_eq!(rows.len(), s.snapshot_count);
    assert!(rows.iter().all(|r| !r.refused && r.psi.unwrap() >= r.phi.unwrap()));
    // only snapshots before the reference time are evaluated
    let rows: Vec<PsiRow> = read_csv(&out.join("psi_1.csv")).unwrap();
    assert_eq!(rows.len(), s.psi[1].snapshots);
    assert!(rows.iter().all(|r| r.t < 0.1));
    assert_eq!(cmd_plot("psi", &out.join("psi_0.csv")), Exit::Ok);
    assert!(out.join("psi_0.svg").exists());
}

#[test]
fn circle_kernels_refuse() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "circle.json",
        r#"{"format_version": 1, "until": 0.2, "snapshot_stride": 200,
            "scenario": {"name": "circle", "r0": 1.0, "resolution": 64},
            "kernels": [{"center": [0, 0], "reference_time": 0.5}]}"#,
    );
    let out = tmp.path().join("c");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    let rows: Vec<PsiRow> = read_csv(&out.join("psi_0.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.refused && r.psi.is_none() && r.phi.is_some()));
    let text = fs::read_to_string(out.join("psi_0.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("1,0.0,,"));
}

#[test]
fn verify_exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lagflow(&["verify", "--suite", "everything", "--out", "r"], tmp.path()), 2);
    assert!(!tmp.path().join("r/report.json").exists());

    let out = tmp.path().join("ok");
    assert_eq!(cmd_verify(None, &["tangent_cone".into()], Some(&out), Some(1)), Exit::Ok);
    let r: Report = read_json(&out.join("report.json")).unwrap();
    assert_eq!((r.format_version, r.seed, r.passed), (FORMAT_VERSION, 1, true));
    assert_eq!(r.suites, vec!["tangent_cone"]);
    assert!(r.results.windows(2).all(|w| (&w[0].check, &w[0].scenario) <= (&w[1].check, &w[1].scenario)));

    let cfg = write(
        tmp.path(),
        "tight.json",
        r#"{"format_version": 1,
            "verify": {"tolerances": {"tangent_cone.principal_angle": 0.0,
                                      "tangent_cone.flatness": -1.0},
                       "skip": ["tangent_cone.multiplicity"]}}"#,
    );
    let out = tmp.path().join("tight");
    assert_eq!(
        cmd_verify(Some(&cfg), &["tangent_cone".into()], Some(&out), None),
        Exit::CheckFailure
    );
    let r: Report = read_json(&out.join("report.json")).unwrap();
    assert!(!r.passed);
    assert!(r.results.iter().any(|x| x.check == "tangent_cone.flatness" && x.status == Status::Fail));
    assert!(r
        .results
        .iter()
        .filter(|x| x.check == "tangent_cone.multiplicity")
        .all(|x| x.status == Status::Skipped));
}

#[test]
fn plot_outputs_and_malformed_inputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = clifford_config(tmp.path());
    let out = tmp.path().join("k");
    assert_eq!(cmd_run(&cfg, Some(&out)), Exit::Ok);
    assert_eq!(cmd_plot("type_indicator", &out.join("type_indicator.csv")), Exit::Ok);
    let svg = fs::read_to_string(out.join("type_indicator.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(cmd_plot("timeseries", &out.join("trace.csv")), Exit::Ok);
    assert_eq!(fs::read_to_string(out.join("trace.svg")).unwrap().matches("<polyline").count(), 4);
    assert_eq!(cmd_blowup(&out, None, None, None, None), Exit::Ok);
    assert_eq!(cmd_plot("density_ratio", &out.join("blowup/density.csv")), Exit::Ok);

    let d = tmp.path();
    let bad = [
        write(d, "empty.csv", ""),
        write(d, "header_only.csv", "format_version,t,indicator\n"),
        write(d, "text.csv", "format_version,t,indicator\n1,0.1,abc\n"),
        write(d, "ragged.csv", "format_version,t,indicator\n1,0.1\n"),
        write(d, "wrong_columns.csv", "a,b\n1,2\n"),
    ];
    for p in &bad {
        assert_eq!(cmd_plot("type_indicator", p), Exit::Usage, "{}", p.display());
    }
    assert_eq!(cmd_plot("type_indicator", &d.join("absent.csv")), Exit::Usage);
    assert_eq!(cmd_plot("histogram", &out.join("trace.csv")), Exit::Usage);
    assert_eq!(lagflow(&["plot", "psi", "empty.csv"], d), 2);
}

#[test]
fn thread_cap_is_validated() {
    let tmp = TempDir::new().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_lagflow"))
            .args(["plot", "histogram", "x.csv"])
            .env("LAGFLOW_THREADS", v)
            .current_dir(tmp.path())
            .status()
            .unwrap()
            .code()
            .unwrap()
    };
    assert_eq!(run("zero"), 2);
    let cfg = clifford_config(tmp.path());
    let status = Command::new(env!("CARGO_BIN_EXE_lagflow"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", "k"])
        .env("LAGFLOW_THREADS", "2")
        .current_dir(tmp.path())
        .status()
        .unwrap();
    assert!(status.success());
}
