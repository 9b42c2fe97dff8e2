//! IP-routed artifact server and a verifying client.
//!
//! The server answers `GET /artifact` with whichever variant the route table
//! assigns to the peer address. Every variant must carry the published MD5,
//! so a client that checks the digest cannot tell which one it received.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::md5::{digest_reader, Digest, Md5};

pub const ARTIFACT_PATH: &str = "/artifact";
/// Longest request head the server will buffer.
const MAX_HEAD: usize = 8192;
const CHUNK: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("unparseable address {0:?}")]
    Address(String),
    #[error("{path}: digest {got} does not match published {expected}")]
    DigestMismatch { path: PathBuf, got: Digest, expected: Digest },
    #[error("bad url {0:?}")]
    Url(String),
    #[error("http: {0}")]
    Http(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

fn io_err(context: impl fmt::Display) -> impl FnOnce(io::Error) -> DistError {
    let context = context.to_string();
    move |source| DistError::Io { context, source }
}

/// An exact address or a CIDR block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpPattern {
    Exact(IpAddr),
    Cidr { net: IpAddr, prefix: u8 },
}

impl IpPattern {
    /// IPv4 patterns never match IPv6 peers and vice versa.
    pub fn contains(&self, ip: IpAddr) -> bool {
        match *self {
            IpPattern::Exact(a) => a == ip,
            IpPattern::Cidr { net, prefix } => match (net, ip) {
                (IpAddr::V4(n), IpAddr::V4(a)) => {
                    let mask = u32::MAX.checked_shl(32 - u32::from(prefix)).unwrap_or(0);
                    u32::from(n) & mask == u32::from(a) & mask
                }
                (IpAddr::V6(n), IpAddr::V6(a)) => {
                    let mask = u128::MAX.checked_shl(128 - u32::from(prefix)).unwrap_or(0);
                    u128::from(n) & mask == u128::from(a) & mask
                }
                _ => false,
            },
        }
    }
}

impl FromStr for IpPattern {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, DistError> {
        let bad = || DistError::Address(s.to_string());
        match s.split_once('/') {
            None => s.parse().map(IpPattern::Exact).map_err(|_| bad()),
            Some((net, prefix)) => {
                let net: IpAddr = net.parse().map_err(|_| bad())?;
                let prefix: u8 = prefix.parse().map_err(|_| bad())?;
                let max = if net.is_ipv4() { 32 } else { 128 };
                if prefix > max {
                    return Err(bad());
                }
                Ok(IpPattern::Cidr { net, prefix })
            }
        }
    }
}

impl fmt::Display for IpPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IpPattern::Exact(a) => write!(f, "{a}"),
            IpPattern::Cidr { net, prefix } => write!(f, "{net}/{prefix}"),
        }
    }
}

/// Immutable once loaded. Rules are tried in file order; the first match wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteTable {
    pub published_md5: Digest,
    pub default_variant: PathBuf,
    pub entries: Vec<(IpPattern, PathBuf)>,
}

/// Outcome of a lookup: the rule text (`default` when nothing matched) and
/// the variant it selects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Route<'a> {
    pub rule: String,
    pub variant: &'a Path,
}

impl RouteTable {
    /// Relative variant paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, DistError> {
        let (mut md5, mut default, mut entries) = (None, None, Vec::new());
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| DistError::Config { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected `key = value`".into()))?;
            if value.is_empty() {
                return Err(err(format!("empty value for {key}")));
            }
            match key {
                "md5" => md5 = Some(value.parse::<Digest>().map_err(|e| err(e.to_string()))?),
                "default" => default = Some(base.join(value)),
                pattern => {
                    let p = pattern.parse::<IpPattern>().map_err(|e| err(e.to_string()))?;
                    entries.push((p, base.join(value)));
                }
            }
        }
        let missing = |what: &str| DistError::Config {
            line: 0,
            msg: format!("missing `{what} =` line"),
        };
        Ok(RouteTable {
            published_md5: md5.ok_or_else(|| missing("md5"))?,
            default_variant: default.ok_or_else(|| missing("default"))?,
            entries,
        })
    }

    /// Parses `path` and runs the startup digest check.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DistError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path.display()))?;
        let table = Self::parse(&text, path.parent().unwrap_or(Path::new("")))?;
        table.check_variants()?;
        Ok(table)
    }

    /// Distinct variant paths, default first.
    pub fn variants(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.default_variant];
        for (_, v) in &self.entries {
            if !out.contains(&v.as_path()) {
                out.push(v);
            }
        }
        out
    }

    /// Every variant must be readable and hash to the published digest.
    /// Returns each variant's length.
    pub fn check_variants(&self) -> Result<Vec<(PathBuf, u64)>, DistError> {
        self.variants()
            .into_iter()
            .map(|v| {
                let f = File::open(v).map_err(io_err(v.display()))?;
                let (got, len) = digest_reader(f).map_err(io_err(v.display()))?;
                if got != self.published_md5 {
                    return Err(DistError::DigestMismatch {
                        path: v.to_path_buf(),
                        got,
                        expected: self.published_md5,
                    });
                }
                Ok((v.to_path_buf(), len))
            })
            .collect()
    }

    pub fn lookup(&self, ip: IpAddr) -> Route<'_> {
        match self.entries.iter().find(|(p, _)| p.contains(ip)) {
            Some((p, v)) => Route {
                rule: p.to_string(),
                variant: v,
            },
            None => Route {
                rule: "default".into(),
                variant: &self.default_variant,
            },
        }
    }

    /// True when every served entry in `log` is the decision this table makes.
    pub fn replays(&self, log: &[LogEntry]) -> bool {
        log.iter().filter(|e| e.status != Status::NotFound).all(|e| {
            let r = self.lookup(e.ip);
            r.rule == e.rule && r.variant == e.variant
        })
    }
}

pub fn route_lookup<'a>(ip: &str, table: &'a RouteTable) -> Result<&'a Path, DistError> {
    let ip: IpAddr = ip.trim().parse().map_err(|_| DistError::Address(ip.to_string()))?;
    Ok(table.lookup(ip).variant)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Served,
    NotFound,
    /// The variant could not be read to its advertised length.
    Aborted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    /// Seconds since the Unix epoch.
    pub time: f64,
    pub ip: IpAddr,
    pub rule: String,
    pub variant: PathBuf,
    pub bytes: u64,
    pub status: Status,
}

/// `time ip rule variant bytes`, tab-separated. 404s log rule and variant as
/// `-`; aborted transfers carry a trailing `aborted` column.
impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.3}\t{}\t{}\t{}\t{}",
            self.time,
            self.ip,
            self.rule,
            self.variant.display(),
            self.bytes
        )?;
        if self.status == Status::Aborted {
            write!(f, "\taborted")?;
        }
        Ok(())
    }
}

/// Append-only; appends are serialized so lines never interleave.
#[derive(Clone, Default)]
pub struct ServeLog {
    inner: Arc<Mutex<LogInner>>,
}

#[derive(Default)]
struct LogInner {
    entries: Vec<LogEntry>,
    sink: Option<Box<dyn Write + Send>>,
}

impl ServeLog {
    /// Also writes each entry as a line to `sink`.
    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        ServeLog {
            inner: Arc::new(Mutex::new(LogInner {
                entries: Vec::new(),
                sink: Some(sink),
            })),
        }
    }

    pub fn append(&self, entry: LogEntry) {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(sink) = inner.sink.as_mut() {
            // A broken log sink must not take the server down.
            let _ = writeln!(sink, "{entry}").and_then(|_| sink.flush());
        }
        inner.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).entries.clone()
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    log: ServeLog,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}{ARTIFACT_PATH}", self.addr)
    }

    pub fn log(&self) -> &ServeLog {
        &self.log
    }

    /// Blocks until the accept loop exits, which only happens on shutdown.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

/// Checks the variants, binds and starts serving on a background thread,
/// one thread per connection.
pub fn serve(table: RouteTable, bind: impl ToSocketAddrs, log: ServeLog) -> Result<ServerHandle, DistError> {
    let lengths = table.check_variants()?;
    let listener = TcpListener::bind(bind).map_err(io_err("bind"))?;
    let addr = listener.local_addr().map_err(io_err("bind"))?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new((table, lengths));
    let (stop2, log2) = (stop.clone(), log.clone());
    let accept = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let (shared, log) = (shared.clone(), log2.clone());
            std::thread::spawn(move || {
                let _ = handle(stream, &shared.0, &shared.1, &log);
            });
        }
    });
    Ok(ServerHandle {
        addr,
        log,
        stop,
        accept: Some(accept),
    })
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn read_head(stream: &mut TcpStream) -> io::Result<String> {
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") && !head.ends_with(b"\n\n") {
        if head.len() >= MAX_HEAD || stream.read(&mut byte)? == 0 {
            break;
        }
        head.push(byte[0]);
    }
    Ok(String::from_utf8_lossy(&head).into_owned())
}

fn handle(mut stream: TcpStream, table: &RouteTable, lengths: &[(PathBuf, u64)], log: &ServeLog) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let ip = stream.peer_addr()?.ip();
    let head = read_head(&mut stream)?;
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, target) = (parts.next(), parts.next());
    if method != Some("GET") || target != Some(ARTIFACT_PATH) {
        let status = if method == Some("GET") {
            "404 Not Found"
        } else {
            "405 Method Not Allowed"
        };
        write!(stream, "HTTP/1.1 {status}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")?;
        log.append(LogEntry {
            time: now(),
            ip,
            rule: "-".into(),
            variant: PathBuf::from("-"),
            bytes: 0,
            status: Status::NotFound,
        });
        return Ok(());
    }
    let route = table.lookup(ip);
    let len = lengths
        .iter()
        .find(|(p, _)| p == route.variant)
        .map(|(_, l)| *l)
        .unwrap_or(0);
    let mut entry = LogEntry {
        time: now(),
        ip,
        rule: route.rule.clone(),
        variant: route.variant.to_path_buf(),
        bytes: 0,
        status: Status::Served,
    };
    let result = send_variant(&mut stream, route.variant, len, &mut entry.bytes);
    let aborted = result.is_err() || entry.bytes != len;
    if aborted {
        entry.status = Status::Aborted;
    }
    // Logged before the close, so a client that has seen EOF also sees the entry.
    log.append(entry);
    if aborted {
        let _ = stream.shutdown(Shutdown::Both);
    }
    result
}

/// Streams exactly `len` bytes; a variant that has shrunk since startup is
/// an error, so the client sees a short body rather than a wrong one.
fn send_variant(stream: &mut TcpStream, path: &Path, len: u64, sent: &mut u64) -> io::Result<()> {
    let mut file = File::open(path)?;
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/octet-stream\r\nContent-Length: {len}\r\nConnection: close\r\n\r\n"
    )?;
    let mut buf = vec![0u8; CHUNK];
    while *sent < len {
        let want = (len - *sent).min(CHUNK as u64) as usize;
        let n = file.read(&mut buf[..want])?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "variant shorter than at startup"));
        }
        stream.write_all(&buf[..n])?;
        *sent += n as u64;
    }
    stream.flush()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientReport {
    pub bytes: u64,
    pub computed: Digest,
    pub expected: Digest,
    /// Always `computed == expected`; a short body also fails.
    pub pass: bool,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct FetchOptions {
    /// Local address to connect from, which is what the server routes on.
    pub source: Option<IpAddr>,
    /// Test hook: XOR this byte offset of the body with 0x01 as it arrives.
    pub flip_byte: Option<u64>,
}

/// Splits `http://host:port/path`.
fn parse_url(url: &str) -> Result<(SocketAddr, String), DistError> {
    let parsed = url::Url::parse(url).map_err(|_| DistError::Url(url.into()))?;
    if parsed.scheme() != "http" {
        return Err(DistError::Url(url.into()));
    }
    let host = parsed.host_str().ok_or_else(|| DistError::Url(url.into()))?;
    let host = host.trim_start_matches('[').trim_end_matches(']');
    let port = parsed.port_or_known_default().unwrap_or(80);
    let addr = (host, port)
        .to_socket_addrs()
        .map_err(io_err(format!("resolve {host}")))?
        .next()
        .ok_or_else(|| DistError::Url(url.into()))?;
    Ok((addr, parsed.path().to_string()))
}

fn connect(addr: SocketAddr, source: Option<IpAddr>) -> io::Result<TcpStream> {
    let Some(src) = source else {
        return TcpStream::connect(addr);
    };
    let socket = socket2::Socket::new(socket2::Domain::for_address(addr), socket2::Type::STREAM, None)?;
    socket.bind(&SocketAddr::new(src, 0).into())?;
    socket.connect(&addr.into())?;
    Ok(socket.into())
}

/// Downloads `url`, hashing the body as it streams into `out`.
pub fn client_fetch_verify(
    url: &str,
    expected: Digest,
    opts: &FetchOptions,
    out: &mut dyn Write,
) -> Result<ClientReport, DistError> {
    let (addr, path) = parse_url(url)?;
    let mut stream = connect(addr, opts.source).map_err(io_err(format!("connect {addr}")))?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")
        .map_err(io_err("send request"))?;
    let mut reader = BufReader::new(stream);
    let mut status = String::new();
    reader.read_line(&mut status).map_err(io_err("read status"))?;
    let code = status.split_whitespace().nth(1).unwrap_or("");
    if code != "200" {
        return Err(DistError::Http(format!("status line {:?}", status.trim_end())));
    }
    let mut length = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).map_err(io_err("read headers"))? == 0 {
            return Err(DistError::Http("headers cut short".into()));
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = Some(v.trim().parse::<u64>().map_err(|_| DistError::Http(format!("bad length {v:?}")))?);
            }
        }
    }
    let length = length.ok_or_else(|| DistError::Http("no Content-Length".into()))?;
    let mut md5 = Md5::new();
    let mut buf = vec![0u8; CHUNK];
    let (mut got, mut diagnostic) = (0u64, None);
    while got < length {
        let want = (length - got).min(CHUNK as u64) as usize;
        let n = match reader.read(&mut buf[..want]) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                diagnostic = Some(format!("read failed after {got} bytes: {e}"));
                break;
            }
        };
        if let Some(at) = opts.flip_byte.filter(|&at| (got..got + n as u64).contains(&at)) {
            buf[(at - got) as usize] ^= 1;
        }
        md5.update(&buf[..n]);
        out.write_all(&buf[..n]).map_err(io_err("write body"))?;
        got += n as u64;
    }
    if got == length {
        // The server logs before closing; waiting for EOF orders the two.
        let _ = io::copy(&mut reader, &mut io::sink());
    }
    if got < length && diagnostic.is_none() {
        diagnostic = Some(format!("short read: {got} of {length} bytes"));
    }
    let computed = md5.finalize();
    Ok(ClientReport {
        bytes: got,
        computed,
        expected,
        pass: computed == expected && got == length,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(s: &str) -> IpPattern {
        s.parse().unwrap()
    }

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    #[test]
    fn cidr_edges() {
        assert!(pat("10.0.0.0/8").contains(ip("10.255.255.255")));
        assert!(!pat("10.0.0.0/8").contains(ip("11.0.0.0")));
        assert!(pat("0.0.0.0/0").contains(ip("1.2.3.4")));
        assert!(!pat("0.0.0.0/0").contains(ip("::1")));
        assert!(pat("192.168.1.7/32").contains(ip("192.168.1.7")));
        assert!(!pat("192.168.1.7/32").contains(ip("192.168.1.6")));
        assert!(pat("fe80::/10").contains(ip("febf::1")));
        assert!(!pat("fe80::/10").contains(ip("fec0::1")));
        assert!("10.0.0.0/33".parse::<IpPattern>().is_err());
        assert!("10.0.0".parse::<IpPattern>().is_err());
    }

    #[test]
    fn config_parses_in_order() {
        let text = "# zoo\nmd5 = 0123456789abcdef0123456789abcdef\ndefault = clean.bin\n\
                    10.0.0.5 = poisoned.bin  # target\n10.0.0.0/24 = other.bin\n";
        let t = RouteTable::parse(text, Path::new("/srv")).unwrap();
        assert_eq!(t.default_variant, Path::new("/srv/clean.bin"));
        assert_eq!(route_lookup("10.0.0.5", &t).unwrap(), Path::new("/srv/poisoned.bin"));
        assert_eq!(route_lookup("10.0.0.6", &t).unwrap(), Path::new("/srv/other.bin"));
        assert_eq!(route_lookup("10.0.1.6", &t).unwrap(), Path::new("/srv/clean.bin"));
        assert_eq!(t.lookup(ip("8.8.8.8")).rule, "default");
        assert!(matches!(route_lookup("10.0.0.256", &t), Err(DistError::Address(_))));
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = RouteTable::parse("md5 = 00\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, DistError::Config { line: 1, .. }));
        let e = RouteTable::parse("md5 = 0123456789abcdef0123456789abcdef\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("default"));
        let e = RouteTable::parse("default = a\nnonsense\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, DistError::Config { line: 2, .. }));
    }

    #[test]
    fn log_line_format() {
        let e = LogEntry {
            time: 12.5,
            ip: ip("127.0.0.2"),
            rule: "default".into(),
            variant: "c.bin".into(),
            bytes: 9,
            status: Status::Served,
        };
        assert_eq!(e.to_string(), "12.500\t127.0.0.2\tdefault\tc.bin\t9");
    }
}
