"""Line charts for run reports (Gaussian count over training, tile pairs versus beta)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_counts(curves, path, title="Gaussian count during training"):
    """``curves`` maps a label to ``(iterations, counts)``."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, (its, counts) in curves.items():
        ax.plot(its, counts, label=label, linewidth=1.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("Gaussians")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows, path):
    """Pairs and image difference against beta from bench-tiles rows."""
    rows = [r for r in rows if r["binning"] == "compact"]
    betas = [r["beta"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(betas, [r["pairs"] for r in rows], "o-", color="tab:blue")
    ax.set_xlabel("beta")
    ax.set_ylabel("Gaussian-tile pairs", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(betas, [255 * r["mean_abs_diff"] for r in rows], "s--", color="tab:red")
    ax2.set_ylabel("mean |diff| vs beta=1 (1/255 units)", color="tab:red")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
