"""Frame I/O (Y4M, PNG sequences) and external-encoder orchestration.

Colour interchange is BT.709 limited range, 8-bit:

    Y  = 16  + 219 * (0.2126 R + 0.7152 G + 0.0722 B)
    Cb = 128 + 224 * (B - Y') / 1.8556
    Cr = 128 + 224 * (R - Y') / 1.5748

with R, G, B in [0, 1], rounding half up and clamping to [0, 255].
"""

from __future__ import annotations

import hashlib
import logging
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EncoderError, FormatError

log = logging.getLogger(__name__)

KR, KB = 0.2126, 0.0722
KG = 1.0 - KR - KB
Y4M_MAGIC = b"YUV4MPEG2"
CHROMA_420 = ("420", "420jpeg", "420paldv", "420mpeg2")


@dataclass
class VideoClip:
    """RGB full-range frames (T, 3, H, W) in [0, 1]."""

    frames: np.ndarray
    frame_rate: Fraction = Fraction(30, 1)
    name: str = ""
    colorspace: str = "rgb-full"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise DimensionError(f"clip frames must be (T, 3, H, W), got {self.frames.shape}")
        self.frame_rate = Fraction(self.frame_rate)
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]

    @property
    def duration(self) -> float:
        return len(self) / float(self.frame_rate)

    def frame(self, i: int) -> np.ndarray:
        """Frame ``i`` as a (1, 3, H, W) batch."""
        return self.frames[i : i + 1]


# --------------------------------------------------------------------- colour


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def rgb_to_ycbcr_float(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[0], rgb[1], rgb[2]
    y = KR * r + KG * g + KB * b
    cb = (b - y) / (2.0 * (1.0 - KB))
    cr = (r - y) / (2.0 * (1.0 - KR))
    return np.stack([16.0 + 219.0 * y, 128.0 + 224.0 * cb, 128.0 + 224.0 * cr])


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB in [0, 1] -> (3, H, W) uint8 Y, Cb, Cr planes."""
    return _round_half_up(rgb_to_ycbcr_float(np.asarray(rgb, dtype=np.float64)))


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    """(3, H, W) uint8 (or float) YCbCr -> RGB float in [0, 1]."""
    ycc = np.asarray(ycc, dtype=np.float64)
    y = (ycc[0] - 16.0) / 219.0
    cb = (ycc[1] - 128.0) / 224.0
    cr = (ycc[2] - 128.0) / 224.0
    r = y + 2.0 * (1.0 - KR) * cr
    b = y + 2.0 * (1.0 - KB) * cb
    g = (y - KR * r - KB * b) / KG
    return np.clip(np.stack([r, g, b]), 0.0, 1.0)


# ------------------------------------------------------------------------ Y4M


@dataclass
class Y4MHeader:
    width: int
    height: int
    frame_rate: Fraction = Fraction(30, 1)
    chroma: str = "444"
    interlace: str = "p"
    aspect: str = "1:1"
    extras: list[str] = field(default_factory=list)

    @property
    def subsampled(self) -> bool:
        return self.chroma in CHROMA_420

    @property
    def frame_bytes(self) -> int:
        luma = self.width * self.height
        if self.subsampled:
            return luma + 2 * ((self.width + 1) // 2) * ((self.height + 1) // 2)
        return 3 * luma

    def encode(self) -> bytes:
        f = self.frame_rate
        parts = [
            "YUV4MPEG2",
            f"W{self.width}",
            f"H{self.height}",
            f"F{f.numerator}:{f.denominator}",
            f"I{self.interlace}",
            f"A{self.aspect}",
            f"C{self.chroma}",
        ] + list(self.extras)
        return (" ".join(parts) + "\n").encode("ascii")


def parse_y4m_header(line: bytes) -> Y4MHeader:
    tokens = line.decode("ascii", errors="replace").strip().split(" ")
    if not tokens or tokens[0] != "YUV4MPEG2":
        raise FormatError("missing YUV4MPEG2 signature")
    fields: dict[str, str] = {}
    extras = []
    for tok in tokens[1:]:
        if not tok:
            continue
        if tok[0] == "X":
            extras.append(tok)
        else:
            fields[tok[0]] = tok[1:]
    try:
        width, height = int(fields["W"]), int(fields["H"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"Y4M header needs integer W and H: {line!r}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"bad Y4M dimensions {width}x{height}")
    rate = Fraction(30, 1)
    if "F" in fields:
        try:
            num, den = fields["F"].split(":")
            rate = Fraction(int(num), int(den))
        except (ValueError, ZeroDivisionError) as exc:
            raise FormatError(f"bad Y4M frame rate {fields['F']!r}") from exc
    chroma = fields.get("C", "420jpeg")
    if chroma not in CHROMA_420 + ("444",):
        raise FormatError(f"unsupported Y4M chroma format C{chroma}")
    return Y4MHeader(
        width, height, rate, chroma, fields.get("I", "p"), fields.get("A", "1:1"), extras
    )


def read_y4m_planes(path) -> tuple[Y4MHeader, list[tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Raw 8-bit planes of every frame, exactly as stored."""
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0 or not blob.startswith(Y4M_MAGIC):
        raise FormatError(f"{path}: not a Y4M file")
    header = parse_y4m_header(blob[:nl])
    w, h = header.width, header.height
    cw, ch = ((w + 1) // 2, (h + 1) // 2) if header.subsampled else (w, h)
    size = header.frame_bytes
    frames = []
    pos = nl + 1
    while pos < len(blob):
        end = blob.find(b"\n", pos)
        if end < 0 or not blob.startswith(b"FRAME", pos):
            raise FormatError(f"{path}: bad frame marker at byte {pos}")
        start = end + 1
        have = len(blob) - start
        if have < size:
            raise FormatError(
                f"{path}: truncated frame {len(frames)}: expected {size} bytes, got {have}"
            )
        data = np.frombuffer(blob, dtype=np.uint8, count=size, offset=start)
        y = data[: w * h].reshape(h, w)
        u = data[w * h : w * h + cw * ch].reshape(ch, cw)
        v = data[w * h + cw * ch :].reshape(ch, cw)
        frames.append((y.copy(), u.copy(), v.copy()))
        pos = start + size
    return header, frames


def write_y4m_planes(path, header: Y4MHeader, frames) -> Path:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.encode())
        for y, u, v in frames:
            f.write(b"FRAME\n")
            for plane in (y, u, v):
                f.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
    return path


def read_y4m(path) -> VideoClip:
    header, planes = read_y4m_planes(path)
    out = np.empty((len(planes), 3, header.height, header.width))
    for i, (y, u, v) in enumerate(planes):
        if header.subsampled:
            u = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[: header.height, : header.width]
            v = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[: header.height, : header.width]
        out[i] = ycbcr_to_rgb(np.stack([y, u, v]))
    return VideoClip(out, header.frame_rate, name=Path(path).stem)


def clip_to_planes(clip: VideoClip, chroma: str = "444"):
    planes = []
    for frame in clip.frames:
        ycc = rgb_to_ycbcr_float(np.clip(frame, 0.0, 1.0))
        y = _round_half_up(ycc[0])
        if chroma in CHROMA_420:
            h, w = y.shape
            pad = ((0, 0), (0, h % 2), (0, w % 2))
            c = np.pad(ycc[1:], pad, mode="edge")
            c = c.reshape(2, (h + 1) // 2, 2, (w + 1) // 2, 2).mean(axis=(2, 4))
            u, v = _round_half_up(c[0]), _round_half_up(c[1])
        else:
            u, v = _round_half_up(ycc[1]), _round_half_up(ycc[2])
        planes.append((y, u, v))
    return planes


def write_y4m(clip: VideoClip, path, chroma: str = "444") -> Path:
    header = Y4MHeader(clip.width, clip.height, clip.frame_rate, chroma)
    return write_y4m_planes(path, header, clip_to_planes(clip, chroma))


# ----------------------------------------------------------------- PNG frames


def read_png_sequence(directory, frame_rate=Fraction(30, 1)) -> VideoClip:
    from PIL import Image

    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FormatError(f"{directory}: no PNG frames")
    frames = []
    for f in files:
        with Image.open(f) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        frames.append(arr.transpose(2, 0, 1))
    return VideoClip(np.stack(frames), frame_rate, name=Path(directory).name)


def write_png_sequence(clip: VideoClip, directory) -> Path:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        arr = _round_half_up(np.clip(frame, 0.0, 1.0) * 255.0).transpose(1, 2, 0)
        Image.fromarray(arr, "RGB").save(directory / f"{i:05d}.png")
    return directory


# -------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    clips: list[VideoClip]
    train: list[VideoClip]
    validation: list[VideoClip]


def split_names(names: Sequence[str], validation_every: int = 10) -> set[str]:
    """Names assigned to validation: the lowest SHA-256 ranks, one per ten clips."""
    ranked = sorted(names, key=lambda n: hashlib.sha256(n.encode()).hexdigest())
    n_val = (len(names) + validation_every // 2) // validation_every
    return set(ranked[:n_val])


def load_dataset(directory) -> Dataset:
    """Y4M files and PNG-sequence subdirectories, in lexicographic order, split 9:1."""
    root = Path(directory)
    if not root.is_dir():
        raise FormatError(f"{directory}: not a directory")
    clips = []
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        try:
            if entry.is_file() and entry.suffix.lower() == ".y4m":
                clip = read_y4m(entry)
            elif entry.is_dir() and any(entry.glob("*.png")):
                clip = read_png_sequence(entry)
            else:
                continue
        except (FormatError, OSError, ValueError) as exc:
            log.warning("skipping unreadable clip %s: %s", entry, exc)
            continue
        clip.name = entry.stem if entry.is_file() else entry.name
        clips.append(clip)
    if not clips:
        raise FormatError(f"{directory}: no readable clips")
    val = split_names([c.name for c in clips])
    return Dataset(
        clips,
        [c for c in clips if c.name not in val],
        [c for c in clips if c.name in val],
    )


# -------------------------------------------------------------------- encoder

CODEC_TEMPLATES: dict[str, list[str]] = {
    "h264": [
        "-c:v", "libx264", "-preset", "{preset}", "-qp", "{qp}",
        "-pix_fmt", "yuv444p", "-threads", "1", "-f", "h264",
    ],
    "h265": [
        "-c:v", "libx265", "-preset", "{preset}",
        "-x265-params", "qp={qp}:pools=none:frame-threads=1:log-level=error",
        "-pix_fmt", "yuv444p", "-f", "hevc",
    ],
    "av1": [
        "-c:v", "libaom-av1", "-cpu-used", "8", "-crf", "{qp}", "-b:v", "0",
        "-row-mt", "0", "-threads", "1", "-pix_fmt", "yuv444p", "-f", "ivf",
    ],
}  # fmt: skip
BITRATE_TEMPLATES: dict[str, list[str]] = {
    "h264": ["-c:v", "libx264", "-preset", "{preset}", "-b:v", "{bitrate}k",
             "-pix_fmt", "yuv444p", "-threads", "1", "-f", "h264"],
    "h265": ["-c:v", "libx265", "-preset", "{preset}", "-b:v", "{bitrate}k",
             "-x265-params", "pools=none:frame-threads=1:log-level=error",
             "-pix_fmt", "yuv444p", "-f", "hevc"],
    "av1": ["-c:v", "libaom-av1", "-cpu-used", "8", "-b:v", "{bitrate}k",
            "-row-mt", "0", "-threads", "1", "-pix_fmt", "yuv444p", "-f", "ivf"],
}  # fmt: skip
ENCODER_NAMES = {"h264": "libx264", "h265": "libx265", "av1": "libaom-av1"}
EXTENSIONS = {"h264": ".h264", "h265": ".hevc", "av1": ".ivf"}


@dataclass
class EncoderJob:
    codec: str
    input_path: Path
    output_path: Path
    qp: int | None = None
    bitrate_kbps: float | None = None
    preset: str = "medium"

    def __post_init__(self):
        if self.codec not in CODEC_TEMPLATES:
            raise ConfigError(f"unknown codec {self.codec!r}; expected one of {sorted(CODEC_TEMPLATES)}")
        if (self.qp is None) == (self.bitrate_kbps is None):
            raise ConfigError("EncoderJob needs exactly one of qp or bitrate_kbps")
        if self.qp is not None and not 0 <= self.qp <= 63:
            raise ConfigError(f"qp out of range: {self.qp}")
        if self.bitrate_kbps is not None and self.bitrate_kbps <= 0:
            raise ConfigError("bitrate target must be positive")
        self.input_path = Path(self.input_path)
        self.output_path = Path(self.output_path)

    @property
    def label(self) -> str:
        setting = f"qp{self.qp}" if self.qp is not None else f"{self.bitrate_kbps:g}k"
        return f"{self.codec}/{setting}"


def find_ffmpeg(explicit: str | None = None) -> str:
    """Explicit path, then ``ffmpeg`` on PATH, then the imageio-ffmpeg binary."""
    if explicit:
        if shutil.which(explicit) is None and not Path(explicit).is_file():
            raise EncoderError(f"ffmpeg executable not found at {explicit!r}")
        return explicit
    found = shutil.which("ffmpeg")
    if found:
        return found
    try:
        import imageio_ffmpeg

        return imageio_ffmpeg.get_ffmpeg_exe()
    except (ImportError, RuntimeError) as exc:
        raise EncoderError(
            "no ffmpeg executable found: install ffmpeg on PATH, `pip install imageio-ffmpeg`, "
            "or pass an explicit path"
        ) from exc


class Encoder:
    """Runs an ffmpeg binary with pinned per-codec argument templates."""

    def __init__(
        self,
        ffmpeg: str | None = None,
        templates: dict[str, list[str]] | None = None,
        timeout: float = 600.0,
        probe: bool = True,
    ):
        self.ffmpeg = find_ffmpeg(ffmpeg)
        self.templates = {**CODEC_TEMPLATES, **(templates or {})}
        self.timeout = timeout
        self.encoders: set[str] = set()
        self.version = ""
        if probe:
            self.probe()

    def _run(self, args: list[str]) -> subprocess.CompletedProcess:
        cmd = [self.ffmpeg, *args]
        log.info("exec: %s", " ".join(cmd))
        try:
            proc = subprocess.run(cmd, capture_output=True, timeout=self.timeout, env={}, stdin=subprocess.DEVNULL)
        except FileNotFoundError as exc:
            raise EncoderError(f"cannot execute {self.ffmpeg!r}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise EncoderError(f"ffmpeg timed out after {self.timeout}s: {' '.join(cmd)}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode(errors="replace").strip()
            raise EncoderError(f"ffmpeg exited with {proc.returncode}: {' '.join(cmd)}\n{stderr}")
        return proc

    def probe(self) -> dict[str, bool]:
        out = self._run(["-hide_banner", "-encoders"]).stdout.decode(errors="replace")
        self.encoders = {line.split()[1] for line in out.splitlines() if len(line.split()) > 1}
        self.version = self._run(["-hide_banner", "-version"]).stdout.decode(errors="replace").splitlines()[0]
        return {codec: name in self.encoders for codec, name in ENCODER_NAMES.items()}

    def supports(self, codec: str) -> bool:
        return ENCODER_NAMES.get(codec) in self.encoders

    def require(self, codec: str) -> None:
        if self.encoders and not self.supports(codec):
            raise EncoderError(f"{self.ffmpeg} has no {ENCODER_NAMES.get(codec, codec)} encoder")

    def codec_args(self, job: EncoderJob) -> list[str]:
        if job.qp is not None:
            template = self.templates[job.codec]
        else:
            template = BITRATE_TEMPLATES[job.codec]
        values = {"preset": job.preset, "qp": job.qp, "bitrate": job.bitrate_kbps}
        return [a.format(**values) for a in template]

    def encode(self, job: EncoderJob) -> Path:
        self.require(job.codec)
        common = ["-hide_banner", "-nostdin", "-loglevel", "error", "-y"]
        args = common + ["-f", "yuv4mpegpipe", "-i", str(job.input_path)]
        args += self.codec_args(job) + ["-fflags", "+bitexact", str(job.output_path)]
        self._run(args)
        return job.output_path

    def decode(self, bitstream, out_path) -> Path:
        args = ["-hide_banner", "-nostdin", "-loglevel", "error", "-y", "-i", str(bitstream)]
        args += ["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-strict", "-1", str(out_path)]
        self._run(args)
        return Path(out_path)

    def encode_decode(self, job: EncoderJob) -> tuple[VideoClip, float]:
        """Encode the job's Y4M input and decode it back; returns (clip, kbps)."""
        header, planes = read_y4m_planes(job.input_path)
        duration = len(planes) / float(header.frame_rate)
        self.encode(job)
        decoded_path = job.output_path.with_suffix(job.output_path.suffix + ".y4m")
        self.decode(job.output_path, decoded_path)
        decoded = read_y4m(decoded_path)
        kbps = 8.0 * job.output_path.stat().st_size / duration / 1000.0
        return decoded, kbps


def encode_clip(encoder: Encoder, clip: VideoClip, codec: str, qp: int, workdir=None, preset="medium"):
    """Convenience wrapper: write ``clip`` as Y4M, encode at ``qp``, decode."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        src = write_y4m(clip, Path(tmp) / "source.y4m")
        job = EncoderJob(codec, src, Path(tmp) / f"out{EXTENSIONS[codec]}", qp=qp, preset=preset)
        decoded, kbps = encoder.encode_decode(job)
        size = job.output_path.stat().st_size
    return decoded, kbps, size
