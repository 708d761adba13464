"""Figures and grayscale images for run reports.

Figures use matplotlib's Agg backend and are written straight to files.
``render_pgm`` writes an 8-bit binary PGM without any imaging dependency.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import FormatError, NumericalError  # noqa: E402
from .fields import DomainSpec, ScalarField, Sinogram  # noqa: E402

__all__ = [
    "set_style",
    "save_figure",
    "plot_field",
    "plot_reconstruction",
    "plot_sinogram",
    "plot_energy",
    "plot_coefficients",
    "plot_rays",
    "render_pgm",
    "pgm_bytes",
]

SCALINGS = ("minmax", "symmetric-zero")


def set_style() -> None:
    """Compact defaults shared by every report figure."""
    plt.rcParams.update(
        {
            "figure.figsize": (6.0, 4.0),
            "figure.dpi": 100,
            "savefig.dpi": 120,
            "savefig.bbox": "tight",
            "font.size": 9,
            "axes.titlesize": 10,
            "axes.grid": False,
            "image.cmap": "viridis",
        }
    )


def save_figure(fig, path: str | Path) -> Path:
    path = Path(path)
    try:
        # no Software tag, so identical figures give identical PNG bytes
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    except OSError as exc:
        raise FormatError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def _extent(field: ScalarField) -> list[float]:
    g = field.grid
    return [g.origin[0], g.upper[0], g.origin[1], g.upper[1]]


def _outline(ax, domain: DomainSpec | None) -> None:
    if domain is None or domain.dim != 2:
        return
    (x0, y0), (x1, y1) = domain.lower, domain.upper
    ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], "w--", lw=0.8)


def _show(ax, field: ScalarField, title: str, symmetric: bool = False, cmap: str | None = None):
    v = field.values
    if field.grid.dim == 1:
        ax.plot(field.grid.axis(0), v, lw=1.0)
        ax.set_title(title)
        return None
    m = float(np.max(np.abs(v))) or 1.0
    kw = dict(vmin=-m, vmax=m, cmap=cmap or "RdBu_r") if symmetric else dict(cmap=cmap)
    im = ax.imshow(v.T, origin="lower", extent=_extent(field), **kw)
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return im


def plot_field(field: ScalarField, title: str = "", domain: DomainSpec | None = None, symmetric: bool = False):
    set_style()
    fig, ax = plt.subplots()
    im = _show(ax, field, title, symmetric)
    if im is not None:
        fig.colorbar(im, ax=ax)
        _outline(ax, domain)
    return fig


def plot_reconstruction(truth: ScalarField, estimate: ScalarField, title: str = ""):
    """Truth, estimate and their difference on B, side by side."""
    set_style()
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))
    lo = min(truth.values.min(), estimate.values.min())
    hi = max(truth.values.max(), estimate.values.max())
    diff = estimate.with_values(estimate.values - truth.values)
    if truth.grid.dim == 1:
        for ax, fld, name in zip(axes, (truth, estimate, diff), ("truth", "estimate", "error")):
            _show(ax, fld, name)
    else:
        for ax, fld, name in zip(axes[:2], (truth, estimate), ("truth", "estimate")):
            im = ax.imshow(fld.values.T, origin="lower", extent=_extent(fld), vmin=lo, vmax=hi)
            ax.set_title(name)
        fig.colorbar(im, ax=axes[:2].tolist())
        im = _show(axes[2], diff, "estimate - truth", symmetric=True)
        fig.colorbar(im, ax=axes[2])
    if title:
        fig.suptitle(title)
    return fig


def plot_sinogram(sino: Sinogram, title: str = "boundary data"):
    set_style()
    fig, ax = plt.subplots()
    v = sino.values
    if sino.surface.count <= 4:
        for i, row in enumerate(v):
            ax.plot(sino.times, row, lw=1.0, label=f"detector {i}")
        ax.set_xlabel("t")
        ax.legend()
    else:
        m = float(np.max(np.abs(v))) or 1.0
        s = sino.surface.arc_parameter()
        im = ax.imshow(
            v, aspect="auto", origin="lower", cmap="RdBu_r", vmin=-m, vmax=m,
            extent=[0.0, sino.t_max, float(s[0]), float(s[-1])],
        )
        ax.set_xlabel("t")
        ax.set_ylabel("arc length along the boundary")
        fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return fig


def plot_energy(times: np.ndarray, values: np.ndarray, markers: Sequence[tuple[float, str]] = ()):
    """Interior energy on a log axis with optional labelled vertical markers."""
    set_style()
    fig, ax = plt.subplots()
    positive = values > 0
    ax.semilogy(times[positive], values[positive], lw=1.0)
    for t, label in markers:
        ax.axvline(t, ls="--", lw=0.8, color="k")
        ax.text(t, ax.get_ylim()[1], label, rotation=90, va="top", ha="right", fontsize=7)
    ax.set_xlabel("t")
    ax.set_ylabel("interior energy")
    ax.set_title("energy decay in B")
    return fig


def plot_coefficients(lam: np.ndarray, coefficients: dict[str, np.ndarray], reference: np.ndarray | None = None):
    """|f_k| per route against lambda_k, and each route's deviation from the reference."""
    set_style()
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(11.0, 3.8))
    for name, v in coefficients.items():
        a0.semilogy(lam, np.abs(v) + 1e-300, ".", ms=3, label=name)
    if reference is not None:
        a0.semilogy(lam, np.abs(reference) + 1e-300, "k+", ms=4, label="projection")
        for name, v in coefficients.items():
            a1.semilogy(lam, np.abs(v - reference) + 1e-300, ".", ms=3, label=name)
        a1.set_title("|route - projection|")
    a0.set_title("coefficient magnitude")
    for ax in (a0, a1):
        ax.set_xlabel("lambda_k")
        ax.legend(fontsize=7)
    return fig


def plot_rays(trajectories, speed: ScalarField, domain: DomainSpec | None = None, title: str = "rays"):
    """Ray traces over the sound speed map; non-escaped rays drawn in red."""
    set_style()
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    im = ax.imshow(speed.values.T, origin="lower", extent=_extent(speed), cmap="Greys")
    fig.colorbar(im, ax=ax, label="c")
    for tr in trajectories:
        ax.plot(tr.x[:, 0], tr.x[:, 1], lw=0.7, color="tab:blue" if tr.escaped else "tab:red")
    _outline(ax, domain)
    ax.set_xlim(speed.grid.origin[0], speed.grid.upper[0])
    ax.set_ylim(speed.grid.origin[1], speed.grid.upper[1])
    ax.set_title(title)
    return fig


def pgm_bytes(field: ScalarField | np.ndarray, scaling: str = "minmax") -> bytes:
    """P5 image of a 2D field: column = first index, row = second index (top row first).

    ``minmax`` maps [min, max] to [0, 255]; ``symmetric-zero`` maps
    [-max|v|, max|v|] to [1, 255] with zero at 128. A field without range
    renders as uniform 128 under either scaling.
    """
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    v = np.asarray(getattr(field, "values", field), dtype=float)
    if v.ndim != 2:
        raise ValueError("PGM rendering needs a two-dimensional field")
    if not np.all(np.isfinite(v)):
        raise NumericalError("cannot render a field containing non-finite values")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        pix = np.full(v.shape, 128.0)
    elif scaling == "minmax":
        pix = np.rint(255.0 * (v - lo) / (hi - lo))
    else:
        m = max(abs(lo), abs(hi))
        pix = 128.0 + np.rint(127.0 * v / m)
    img = np.clip(pix, 0, 255).astype(np.uint8).T  # rows follow the second index
    height, width = img.shape
    if scaling == "minmax":
        note = f"# scaling minmax lo={lo:.9g} hi={hi:.9g}"
    else:
        note = f"# scaling symmetric-zero absmax={max(abs(lo), abs(hi)):.9g}"
    head = f"P5\n{note}\n{width} {height}\n255\n".encode("ascii")
    return head + np.ascontiguousarray(img).tobytes()


def render_pgm(field: ScalarField | np.ndarray, path: str | Path, scaling: str = "minmax") -> Path:
    blob = pgm_bytes(field, scaling)  # validates before anything touches disk
    path = Path(path)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise FormatError(f"cannot write image {path}: {exc}") from exc
    return path
