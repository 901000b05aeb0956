mod common;

use common::*;

#[test]
#[ignore = "runs inside the network-isolated harness"]
fn offline_probe() {
    if std::env::var_os(PROBE_ENV).is_none() {
        return;
    }
    assert_no_egress();
    offline_suite();
}

#[test]
fn cli_and_service_work_without_network() {
    let out = run_isolated(&["--ignored", "--exact", "offline_probe", "--nocapture"]);
    let log = format!("{}{}", stdout(&out), stderr(&out));
    assert!(out.status.success(), "isolated run failed:\n{log}");
    assert!(log.contains("1 passed"), "{log}");
}
