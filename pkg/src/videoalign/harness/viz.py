"""File-based visual outputs: inverse-depth colormaps, per-frame point clouds
and a top-down trajectory plot."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..evaluation import DepthSequence, Trajectory  # noqa: E402
from ..geometry import Intrinsics, Pose, unproject  # noqa: E402
from .io import write_ply  # noqa: E402


def inverse_depth_colors(seq: DepthSequence) -> np.ndarray:
    """(N, H, W, 3) uint8 turbo colors of 1/depth, one range for the whole sequence.

    Sharing the range across frames keeps frame-to-frame flicker visible.
    Invalid pixels are black.
    """
    vals, valid = seq.stack()
    inv = np.where(valid, 1.0 / np.where(valid, vals, 1.0), np.nan)
    lo, hi = np.nanmin(inv), np.nanmax(inv)
    t = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
    rgb = matplotlib.colormaps["turbo"](np.nan_to_num(t))[..., :3]
    rgb[~valid] = 0.0
    return np.round(rgb * 255).astype(np.uint8)


def write_depth_pngs(directory, seq: DepthSequence, prefix: str = "depth") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(inverse_depth_colors(seq)):
        p = d / f"{prefix}_{i:04d}.png"
        plt.imsave(p, img)
        paths.append(p)
    return paths


def write_point_clouds(
    directory, seq: DepthSequence, poses: tuple[Pose, ...], intrinsics: tuple[Intrinsics, ...], prefix: str = "cloud"
) -> list[Path]:
    """One world-frame PLY per frame, colored like the depth PNGs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    colors = inverse_depth_colors(seq)
    paths = []
    for i, (depth, pose, k) in enumerate(zip(seq.frames, poses, intrinsics, strict=True)):
        pm = unproject(depth, k)
        pts = pose.apply(pm.points[pm.valid])
        p = d / f"{prefix}_{i:04d}.ply"
        write_ply(p, pts, colors[i][pm.valid])
        paths.append(p)
    return paths


def write_trajectory_svg(path, trajectories: dict[str, Trajectory]) -> None:
    """Top-down (x, z) view of camera centers, one line per trajectory."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, traj in trajectories.items():
        c = traj.positions()
        ax.plot(c[:, 0], c[:, 2], marker=".", label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
