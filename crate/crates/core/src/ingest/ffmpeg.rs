//! Container and RTMP decoding through an `ffmpeg` subprocess emitting raw
//! RGB24 frames on stdout.

use std::io::{BufReader, Read};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStderr, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use super::decode::{RawFrame, VideoDecoder};
use super::IngestError;
use crate::config::{IngestConfig, RtmpMode};

/// Environment override for the ffmpeg executable.
pub const FFMPEG_ENV: &str = "EGOSTREAM_FFMPEG";

/// Finds an ffmpeg binary: the configured path, then `$EGOSTREAM_FFMPEG`,
/// then `ffmpeg` on `PATH`, then the binary bundled with the `imageio-ffmpeg`
/// Python package.
pub fn locate_ffmpeg(configured: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = configured {
        return Some(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os(FFMPEG_ENV) {
        return Some(PathBuf::from(p));
    }
    static FOUND: OnceLock<Option<PathBuf>> = OnceLock::new();
    FOUND
        .get_or_init(|| {
            let runs = |p: &Path| {
                Command::new(p)
                    .arg("-version")
                    .stdout(Stdio::null())
                    .stderr(Stdio::null())
                    .status()
                    .is_ok_and(|s| s.success())
            };
            if runs(Path::new("ffmpeg")) {
                return Some(PathBuf::from("ffmpeg"));
            }
            let out = Command::new("python3")
                .args(["-c", "import imageio_ffmpeg; print(imageio_ffmpeg.get_ffmpeg_exe())"])
                .stderr(Stdio::null())
                .output()
                .ok()?;
            let p = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
            (out.status.success() && runs(&p)).then_some(p)
        })
        .clone()
}

fn ffmpeg_or_err(cfg: &IngestConfig) -> Result<PathBuf, IngestError> {
    locate_ffmpeg(cfg.ffmpeg_path.as_deref())
        .ok_or_else(|| IngestError::DecodeFailed("no ffmpeg executable found".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInfo {
    pub has_audio: bool,
    pub duration_s: Option<f64>,
}

/// Inspects a container without decoding it.
pub fn probe_file(ffmpeg: &Path, path: &Path) -> Result<ProbeInfo, IngestError> {
    let out = Command::new(ffmpeg)
        .args(["-hide_banner", "-nostdin", "-i"])
        .arg(path)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .output()
        .map_err(|e| IngestError::DecodeFailed(format!("cannot run ffmpeg: {e}")))?;
    let log = String::from_utf8_lossy(&out.stderr);
    let streams: Vec<&str> = log.lines().filter(|l| l.trim_start().starts_with("Stream #")).collect();
    if !streams.iter().any(|l| l.contains("Video:")) {
        let reason = log.lines().last().unwrap_or("no video stream").trim().to_string();
        return Err(IngestError::DecodeFailed(reason));
    }
    let duration_s = log
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("Duration: "))
        .and_then(|rest| parse_hms(rest.split(',').next()?));
    Ok(ProbeInfo {
        has_audio: streams.iter().any(|l| l.contains("Audio:")),
        duration_s,
    })
}

fn parse_hms(s: &str) -> Option<f64> {
    let mut parts = s.trim().split(':');
    let h: f64 = parts.next()?.parse().ok()?;
    let m: f64 = parts.next()?.parse().ok()?;
    let sec: f64 = parts.next()?.parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + sec)
}

/// Host and port of an `rtmp://` URL; the port defaults to 1935.
pub fn rtmp_endpoint(uri: &str) -> Result<(String, u16), IngestError> {
    let url = url::Url::parse(uri).map_err(|e| IngestError::InvalidSource(format!("{uri}: {e}")))?;
    if url.scheme() != "rtmp" {
        return Err(IngestError::InvalidSource(format!("{uri}: expected an rtmp:// URL")));
    }
    let host = url
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| IngestError::InvalidSource(format!("{uri}: missing host")))?;
    Ok((host.trim_matches(['[', ']']).to_string(), url.port().unwrap_or(1935)))
}

/// TCP reachability check for an RTMP server.
pub fn probe_rtmp(uri: &str, timeout: Duration) -> Result<(), IngestError> {
    let (host, port) = rtmp_endpoint(uri)?;
    let addrs: Vec<_> = (host.as_str(), port)
        .to_socket_addrs()
        .map_err(|e| IngestError::ConnectFailed(format!("{host}:{port}: {e}")))?
        .collect();
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(_) => return Ok(()),
            Err(e) => last = Some(e),
        }
    }
    Err(IngestError::ConnectFailed(format!(
        "{host}:{port}: {}",
        last.map_or_else(|| "no address".to_string(), |e| e.to_string())
    )))
}

pub struct FfmpegDecoder {
    child: Child,
    stdout: BufReader<ChildStdout>,
    audio: Option<ChildStderr>,
    stderr_log: Arc<Mutex<String>>,
    width: u32,
    height: u32,
    fps: f64,
    live: bool,
    duration_s: Option<f64>,
    frames_read: u64,
}

impl FfmpegDecoder {
    /// Decodes a local container, resampled to the configured size and rate.
    pub fn open_file(path: &Path, cfg: &IngestConfig) -> Result<Self, IngestError> {
        let ffmpeg = ffmpeg_or_err(cfg)?;
        let info = probe_file(&ffmpeg, path)?;
        let mut cmd = Command::new(&ffmpeg);
        cmd.args(["-hide_banner", "-nostdin", "-v"]);
        cmd.arg(if info.has_audio { "quiet" } else { "error" });
        cmd.arg("-i").arg(path);
        video_output_args(&mut cmd, cfg);
        if info.has_audio {
            cmd.args(["-map", "0:a:0", "-ac", "1", "-ar"])
                .arg(cfg.audio_sample_rate.to_string())
                .args(["-f", "s16le", "pipe:2"]);
        }
        Self::spawn(cmd, cfg, false, info.has_audio, info.duration_s)
    }

    /// Decodes an RTMP stream (video only; frames are stamped on arrival).
    pub fn open_rtmp(uri: &str, cfg: &IngestConfig) -> Result<Self, IngestError> {
        let ffmpeg = ffmpeg_or_err(cfg)?;
        let mut cmd = Command::new(&ffmpeg);
        cmd.args(["-hide_banner", "-nostdin", "-v", "error"]);
        if cfg.rtmp_mode == RtmpMode::Listen {
            cmd.args(["-listen", "1"]);
        }
        cmd.arg("-i").arg(uri);
        video_output_args(&mut cmd, cfg);
        Self::spawn(cmd, cfg, true, false, None)
    }

    fn spawn(mut cmd: Command, cfg: &IngestConfig, live: bool, audio: bool, duration_s: Option<f64>) -> Result<Self, IngestError> {
        let mut child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| IngestError::DecodeFailed(format!("cannot run ffmpeg: {e}")))?;
        let stdout = BufReader::with_capacity(1 << 20, child.stdout.take().expect("piped stdout"));
        let stderr = child.stderr.take().expect("piped stderr");
        let stderr_log = Arc::new(Mutex::new(String::new()));
        let audio = if audio {
            Some(stderr)
        } else {
            let log = stderr_log.clone();
            std::thread::spawn(move || {
                let mut s = String::new();
                let _ = BufReader::new(stderr).read_to_string(&mut s);
                *log.lock().expect("stderr log") = s;
            });
            None
        };
        Ok(FfmpegDecoder {
            child,
            stdout,
            audio,
            stderr_log,
            width: cfg.decode_width,
            height: cfg.decode_height,
            fps: cfg.decode_fps,
            live,
            duration_s,
            frames_read: 0,
        })
    }

    fn failure(&mut self) -> IngestError {
        let _ = self.child.wait();
        std::thread::sleep(Duration::from_millis(20));
        let log = self.stderr_log.lock().expect("stderr log").clone();
        let reason = log.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("ffmpeg produced no frames");
        IngestError::DecodeFailed(reason.trim().to_string())
    }
}

fn video_output_args(cmd: &mut Command, cfg: &IngestConfig) {
    cmd.args(["-map", "0:v:0", "-vf"])
        .arg(format!(
            "fps={},scale={}:{}",
            cfg.decode_fps, cfg.decode_width, cfg.decode_height
        ))
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"]);
}

impl VideoDecoder for FfmpegDecoder {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn duration_s(&self) -> Option<f64> {
        self.duration_s
    }

    fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError> {
        let mut pixels = vec![0u8; self.width as usize * self.height as usize * 3];
        match self.stdout.read_exact(&mut pixels) {
            Ok(()) => {
                let t = (!self.live).then(|| self.frames_read as f64 / self.fps);
                self.frames_read += 1;
                Ok(Some(RawFrame {
                    t,
                    width: self.width,
                    height: self.height,
                    pixels,
                }))
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                if self.frames_read == 0 {
                    Err(self.failure())
                } else {
                    let _ = self.child.wait();
                    Ok(None)
                }
            }
            Err(e) => Err(IngestError::DecodeFailed(e.to_string())),
        }
    }

    fn take_audio(&mut self) -> Option<Box<dyn Read + Send>> {
        self.audio.take().map(|a| Box::new(a) as Box<dyn Read + Send>)
    }
}

impl Drop for FfmpegDecoder {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
