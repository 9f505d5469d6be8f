"""Correlated spectrogram/video pairs generated from a shared low-dimensional latent."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from src.config import DataConfig
from src.seeding import stream

LATENT_STREAM = 0
AUDIO_NOISE_STREAM = 1
VIDEO_NOISE_STREAM = 2


@dataclass(frozen=True)
class LatentSpec:
    """Seed plus the latent ``z`` in ``[0, 1)^latent_dim`` derived from it.

    ``z[0]`` sets the audio frequency band and the blob row, ``z[1]`` the atom
    time spread and blob speed, ``z[2]`` the atom modulation and ``z[3]`` the
    blob's starting column.
    """

    seed: int
    z: tuple[float, ...]

    @classmethod
    def from_seed(cls, seed: int, latent_dim: int = 4) -> "LatentSpec":
        if latent_dim < 4:
            raise ValueError(f"latent_dim must be at least 4, got {latent_dim}")
        z = stream(seed, LATENT_STREAM).uniform(size=latent_dim)
        return cls(seed=seed, z=tuple(float(v) for v in z))


@dataclass
class GenerationStats:
    """Counts of generated tensors per modality."""

    audio_built: int = 0
    video_built: int = 0


@dataclass
class SyntheticPair:
    latent: LatentSpec
    audio: np.ndarray
    video: np.ndarray | None = None


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the whole sample."""
    centered = x - x.mean()
    std = np.sqrt((centered * centered).mean())
    if std == 0:
        return centered
    out = centered / std
    # second pass absorbs rounding left by the first
    out = out - out.mean()
    return out / np.sqrt((out * out).mean())


def atom_centers(latent: LatentSpec, shape: tuple[int, int], num_atoms: int) -> list[tuple[int, int]]:
    """Integer ``(time, freq)`` centres of the Gabor atoms."""
    time_bins, freq_bins = shape
    band = (0.1 + 0.8 * latent.z[0]) * (freq_bins - 1)
    centers = []
    for k in range(num_atoms):
        t = round((k + 0.5) / num_atoms * (time_bins - 1))
        f = round(band + (k - (num_atoms - 1) / 2) * 0.05 * freq_bins)
        centers.append((int(t), int(np.clip(f, 0, freq_bins - 1))))
    return centers


def generate_audio(latent: LatentSpec, data: DataConfig, noise_std: float | None = None) -> np.ndarray:
    data.audio_spec.grid_dims(data.audio_shape)
    noise_std = data.noise_std if noise_std is None else noise_std
    time_bins, freq_bins = data.audio_shape
    t = np.arange(time_bins, dtype=np.float64)[:, None]
    f = np.arange(freq_bins, dtype=np.float64)[None, :]
    sigma_t = time_bins * (0.02 + 0.08 * latent.z[1])
    sigma_f = max(1.0, 0.04 * freq_bins)
    omega = 2 * np.pi * (0.02 + 0.15 * latent.z[2])

    spec = np.zeros((time_bins, freq_bins))
    for tc, fc in atom_centers(latent, data.audio_shape, data.num_atoms):
        envelope = np.exp(-((t - tc) ** 2) / (2 * sigma_t**2) - ((f - fc) ** 2) / (2 * sigma_f**2))
        spec += envelope * np.cos(omega * (t - tc))
    if noise_std > 0:
        spec += noise_std * stream(latent.seed, AUDIO_NOISE_STREAM).standard_normal(spec.shape)
    return standardize(spec)


def blob_track(latent: LatentSpec, frames: int, size: int) -> list[tuple[float, float]]:
    """Blob centre ``(row, col)`` per frame."""
    row = (0.2 + 0.6 * latent.z[0]) * (size - 1)
    speed = 0.5 + 1.5 * latent.z[1]
    start = latent.z[3] * (size - 1)
    return [(row, (start + speed * i) % size) for i in range(frames)]


def generate_video(latent: LatentSpec, data: DataConfig, noise_std: float | None = None) -> np.ndarray:
    data.video_spec.grid_dims(data.video_shape)
    noise_std = data.noise_std if noise_std is None else noise_std
    frames, size = data.video_frames, data.video_size
    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]
    sigma = max(1.0, 0.12 * size)

    clip = np.zeros(data.video_shape)
    for i, (r, c) in enumerate(blob_track(latent, frames, size)):
        # wrap-around distance keeps the blob whole as it leaves the frame
        dc = np.minimum(np.abs(cols - c), size - np.abs(cols - c))
        blob = np.exp(-((rows - r) ** 2 + dc**2) / (2 * sigma**2))
        clip[i] = blob[:, :, None]
    if noise_std > 0:
        clip += noise_std * stream(latent.seed, VIDEO_NOISE_STREAM).standard_normal(clip.shape)
    return standardize(clip)


def generate_pair(
    latent: LatentSpec,
    data: DataConfig,
    include_video: bool = True,
    stats: GenerationStats | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Spectrogram ``[T x F]`` and clip ``[frames x H x W x C]`` from one latent.

    Args:
        latent: Seed and latent vector
        data: Shapes, patch sizes, atom count and noise level
        include_video: Skip the clip entirely when False
        stats: Counters to update

    Returns:
        ``(audio, video)``; ``video`` is ``None`` when not requested
    """
    audio = generate_audio(latent, data)
    video = generate_video(latent, data) if include_video else None
    if stats is not None:
        stats.audio_built += 1
        stats.video_built += int(video is not None)
    return audio, video


def generate_dataset(
    seeds,
    data: DataConfig,
    include_video: bool = True,
    stats: GenerationStats | None = None,
) -> list[SyntheticPair]:
    pairs = []
    for seed in seeds:
        latent = LatentSpec.from_seed(int(seed))
        audio, video = generate_pair(latent, data, include_video, stats)
        pairs.append(SyntheticPair(latent, audio, video))
    logger.debug(f"Generated {len(pairs)} synthetic pairs (video={include_video})")
    return pairs


def dump_pairs(pairs: list[SyntheticPair], directory: Path) -> list[Path]:
    """Write raw little-endian fp64 arrays plus a JSON sidecar per pair."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for pair in pairs:
        seed = pair.latent.seed
        sidecar = {"seed": seed, "z": list(pair.latent.z), "dtype": "<f8", "audio_shape": list(pair.audio.shape)}
        path = directory / f"{seed}_audio.f64"
        pair.audio.astype("<f8").tofile(path)
        written.append(path)
        if pair.video is not None:
            path = directory / f"{seed}_video.f64"
            pair.video.astype("<f8").tofile(path)
            written.append(path)
            sidecar["video_shape"] = list(pair.video.shape)
        path = directory / f"{seed}.json"
        path.write_text(json.dumps(sidecar, indent=2))
        written.append(path)
    logger.info(f"Wrote {len(pairs)} pairs to {directory}")
    return written
