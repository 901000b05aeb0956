#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

pub const BIN: &str = env!("CARGO_BIN_EXE_uniformid");
pub const EPOCH: &str = "1700000000";
pub const CONFIG: &str = "uniformid.toml";

/// The binary with the workspace as cwd, a fixed clock and the workspace
/// config.
pub fn uniformid(dir: &Path) -> Command {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env_remove("RUST_BACKTRACE")
        .args(["--config", CONFIG]);
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    uniformid(dir).args(args).output().expect("spawn uniformid")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?} failed:\n{}", stderr(&out));
    stdout(&out)
}

pub fn write_default_config(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let out = Command::new(BIN).arg("config").output().unwrap();
    std::fs::write(dir.join(CONFIG), &out.stdout).unwrap();
}

/// Generates a small dataset and trains both models into `dir`.
pub fn build_workspace(dir: &Path) {
    write_default_config(dir);
    ok(
        dir,
        &["generate-data", "--schools", "6", "--uniform-per-school", "20", "--nonuniform", "60"],
    );
    ok(dir, &["train", "uniform", "--version", "v1"]);
    ok(dir, &["train", "attribute", "--version", "v1"]);
}

fn template() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::Builder::new().prefix("uniformid-fixture").tempdir().unwrap().keep();
        build_workspace(&dir);
        dir
    })
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A private copy of the trained fixture workspace.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(template(), dir.path());
    dir
}

pub fn image_paths(dir: &Path) -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("data/images"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
}

/// Runs `cmd` in a fresh network namespace with only loopback up.
pub fn isolate_network(cmd: &mut Command) {
    // Formatted before fork: the pre-exec hook must not allocate.
    let uid_map = format!("{0} {0} 1", unsafe { libc::getuid() });
    let gid_map = format!("{0} {0} 1", unsafe { libc::getgid() });
    unsafe {
        cmd.pre_exec(move || enter_offline_namespace(uid_map.as_bytes(), gid_map.as_bytes()));
    }
}

fn write_proc(path: &std::ffi::CStr, bytes: &[u8]) -> std::io::Result<()> {
    unsafe {
        let fd = libc::open(path.as_ptr(), libc::O_WRONLY);
        if fd < 0 {
            return Err(std::io::Error::last_os_error());
        }
        let n = libc::write(fd, bytes.as_ptr().cast(), bytes.len());
        let err = std::io::Error::last_os_error();
        libc::close(fd);
        if n != bytes.len() as isize {
            return Err(err);
        }
    }
    Ok(())
}

fn enter_offline_namespace(uid_map: &[u8], gid_map: &[u8]) -> std::io::Result<()> {
    // A bare network namespace keeps file access unchanged; without
    // CAP_SYS_ADMIN a user namespace is needed to create one.
    if unsafe { libc::unshare(libc::CLONE_NEWNET) } != 0 {
        let err = std::io::Error::last_os_error();
        if err.raw_os_error() != Some(libc::EPERM) {
            return Err(err);
        }
        if unsafe { libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) } != 0 {
            return Err(std::io::Error::last_os_error());
        }
        write_proc(c"/proc/self/setgroups", b"deny")?;
        write_proc(c"/proc/self/uid_map", uid_map)?;
        write_proc(c"/proc/self/gid_map", gid_map)?;
    }
    unsafe {
        let sock = libc::socket(libc::AF_INET, libc::SOCK_DGRAM, 0);
        if sock < 0 {
            return Err(std::io::Error::last_os_error());
        }
        let mut req: libc::ifreq = std::mem::zeroed();
        for (dst, src) in req.ifr_name.iter_mut().zip(b"lo\0") {
            *dst = *src as libc::c_char;
        }
        let mut rc = libc::ioctl(sock, libc::SIOCGIFFLAGS, &mut req);
        if rc == 0 {
            req.ifr_ifru.ifru_flags |= (libc::IFF_UP | libc::IFF_RUNNING) as libc::c_short;
            rc = libc::ioctl(sock, libc::SIOCSIFFLAGS, &req);
        }
        let err = std::io::Error::last_os_error();
        libc::close(sock);
        if rc != 0 {
            return Err(err);
        }
    }
    Ok(())
}

/// Fails unless outbound connections are impossible and loopback works.
pub fn assert_no_egress() {
    for target in ["1.1.1.1:443", "8.8.8.8:53", "93.184.215.14:80"] {
        let addr = target.parse().unwrap();
        let attempt = TcpStream::connect_timeout(&addr, Duration::from_secs(3));
        assert!(attempt.is_err(), "egress to {target} succeeded");
    }
    use std::net::ToSocketAddrs;
    assert!(("example.com", 80).to_socket_addrs().is_err(), "DNS resolution succeeded");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("loopback bind");
    TcpStream::connect(listener.local_addr().unwrap()).expect("loopback connect");
}

/// A `uniformid serve` child bound to an ephemeral loopback port.
pub struct Server {
    child: Child,
    pub addr: String,
}

impl Server {
    /// Starts the server; on startup failure returns its exit code and
    /// stderr.
    pub fn start(dir: &Path) -> Result<Server, (Option<i32>, String)> {
        let mut child = uniformid(dir)
            .args(["serve", "--bind", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        match line.trim().strip_prefix("listening on ") {
            Some(addr) => Ok(Server {
                addr: addr.to_string(),
                child,
            }),
            None => {
                let status = child.wait().unwrap();
                let mut err = String::new();
                child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
                Err((status.code(), err))
            }
        }
    }

    pub fn request(&self, method: &str, path: &str, content_type: Option<&str>, body: &[u8]) -> (u16, String) {
        http(&self.addr, method, path, content_type, body)
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        self.request("GET", path, None, &[])
    }

    pub fn post_json(&self, path: &str, body: &str) -> (u16, String) {
        self.request("POST", path, Some("application/json"), body.as_bytes())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGINT);
        }
        let _ = self.child.wait();
    }
}

/// One HTTP/1.1 exchange over a fresh connection.
pub fn http(addr: &str, method: &str, path: &str, content_type: Option<&str>, body: &[u8]) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).expect("connect to server");
    stream.set_read_timeout(Some(Duration::from_secs(120))).unwrap();
    let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Length: {}\r\n", body.len());
    if let Some(ct) = content_type {
        head.push_str(&format!("Content-Type: {ct}\r\n"));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).unwrap();
    stream.write_all(body).unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("response head");
    let head = String::from_utf8_lossy(&raw[..split]).into_owned();
    let mut payload = raw[split + 4..].to_vec();
    let status: u16 = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        payload = dechunk(&payload);
    }
    (status, String::from_utf8(payload).unwrap())
}

fn dechunk(mut data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = data.windows(2).position(|w| w == b"\r\n").unwrap();
        let size = usize::from_str_radix(std::str::from_utf8(&data[..eol]).unwrap().trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&data[eol + 2..eol + 2 + size]);
        data = &data[eol + 4 + size..];
    }
}

pub const PROBE_ENV: &str = "UNIFORMID_OFFLINE_PROBE";

/// Builds, trains, predicts, searches and serves from scratch. Meant to run
/// inside [`isolate_network`].
pub fn offline_suite() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    build_workspace(dir);
    ok(dir, &["registry", "verify"]);
    let image = image_paths(dir)[0].display().to_string();
    let case = ok(dir, &["predict", &image]);
    assert!(case.contains("case-000001"), "{case}");

    let label = uniformid_core::data::load_dataset(&dir.join("data")).unwrap()[0]
        .ground_truth
        .unwrap()
        .label;
    let dist = uniformid_core::AttributeDistribution::one_hot(&label);
    std::fs::write(dir.join("dist.json"), uniformid_core::schema::encode_document(&dist)).unwrap();
    ok(dir, &["search", "--distribution", "dist.json", "--explain"]);

    ok(dir, &["ingest", "--input", "data/images", "--out", "ingested"]);
    ok(dir, &["label", "register", "--journal", "labels.jsonl", "--data", "data"]);
    ok(dir, &["label", "status", "--journal", "labels.jsonl"]);
    ok(dir, &["label", "export", "--journal", "labels.jsonl", "--out", "labels.json"]);
    ok(dir, &["evaluate", "holdout"]);
    ok(dir, &["evaluate", "loso"]);
    ok(dir, &["evaluate", "attributes", "--epochs", "2"]);
    ok(dir, &["train", "uniform", "--version", "v2", "--out", "u2.uidm"]);
    ok(dir, &["registry", "register", "--kind", "uniform", "--version", "v3", "--artifact", "u2.uidm"]);
    assert_eq!(ok(dir, &["registry", "list"]).lines().count(), 4);
    ok(dir, &["config"]);

    let server = Server::start(dir).expect("server starts offline");
    let (status, body) = server.get("/health");
    assert_eq!(status, 200, "{body}");
    let bytes = std::fs::read(&image_paths(dir)[1]).unwrap();
    let (status, body) = server.request("POST", "/cases", Some("image/png"), &bytes);
    assert_eq!(status, 201, "{body}");
}

/// Re-runs the current test executable inside the isolated namespace with
/// the probe enabled.
pub fn run_isolated(args: &[&str]) -> Output {
    let mut cmd = Command::new(std::env::current_exe().unwrap());
    cmd.args(args).env(PROBE_ENV, "1");
    isolate_network(&mut cmd);
    cmd.output().expect("spawn isolated probe")
}
