"""Figure rendering for the reproduce recipes (file output only, Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import TWO_PI  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
    "figure.dpi": 150,
}
# no software/version stamp, so identical data gives identical bytes
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_fig2(cols, pulse, trace, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 3, figsize=(9.0, 2.6), constrained_layout=True)
        t = pulse.times * 1e6
        ax[0].plot(t, pulse.steps[:, 0] / TWO_PI / 1e6, label=r"$\Omega_x$")
        ax[0].plot(t, pulse.steps[:, 1] / TWO_PI / 1e6, label=r"$\Omega_y$")
        ax[0].set_xlabel("time (us)")
        ax[0].set_ylabel("Rabi frequency (MHz)")
        ax[0].legend(frameon=False)
        f = cols["detuning_hz"] / 1e6
        ax[1].plot(f, cols["target_mz"], "k--", lw=0.8, label="target")
        for key in cols:
            if key.startswith("mz_scale_"):
                ax[1].plot(f, cols[key], label=key.replace("mz_scale_", "scale "))
        ax[1].set_xlabel("detuning (MHz)")
        ax[1].set_ylabel(r"$m_z$")
        ax[1].legend(frameon=False)
        ax[2].semilogy(trace.infidelity)
        ax[2].set_xlabel("iteration")
        ax[2].set_ylabel("infidelity")
        _save(fig, path)


def plot_fig3(panels, path):
    """``panels`` maps a label to ``(fluorescence, field_mT, extent_um)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(2, len(panels), figsize=(3.2 * len(panels), 5.6),
                               constrained_layout=True)
        ax = np.asarray(ax).reshape(2, -1)
        for k, (label, (fl, b, extent)) in enumerate(panels.items()):
            im = ax[0, k].imshow(fl, origin="lower", extent=extent, cmap="gray")
            ax[0, k].set_title(f"fringes, {label}")
            fig.colorbar(im, ax=ax[0, k], label="fluorescence")
            im = ax[1, k].imshow(b, origin="lower", extent=extent, cmap="viridis")
            ax[1, k].set_title(f"field, {label}")
            fig.colorbar(im, ax=ax[1, k], label="B - bias (mT)")
            for a in ax[:, k]:
                a.set_xlabel("x (um)")
                a.set_ylabel("y (um)")
        _save(fig, path)


def plot_fig4(points, fid, curve, fits, path):
    spacing, model, eta = curve
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 4, figsize=(12.0, 2.6), constrained_layout=True)
        d = np.array([p.spacing_hz for p in points])
        ax[0].semilogx(spacing / 1e6, model, "k-", lw=0.8, label="model")
        ax[0].semilogx(d / 1e6, [p.contrast_sim for p in points], "o", label="simulated")
        ax[0].set_xlim(0.3, 30.0)
        ax[0].legend(frameon=False)
        ax[0].set_xlabel("grating spacing (MHz)")
        ax[0].set_ylabel("contrast")
        t, c = fid
        ax[1].plot(t * 1e9, c)
        ax[1].set_xlabel("free evolution (ns)")
        ax[1].set_ylabel("contrast")
        keep = eta < 100.0 * eta.min()
        ax[2].loglog(spacing[keep] / 1e6, eta[keep] * 1e6)
        ax[2].set_xlabel("grating spacing (MHz)")
        ax[2].set_ylabel("sensitivity (uT/sqrt(Hz))")
        names = list(fits)
        ax[3].bar(names, [max(fits[n].rms_residual, 1e-18) for n in names])
        ax[3].set_yscale("log")
        ax[3].set_ylabel("rms residual (T)")
        _save(fig, path)
