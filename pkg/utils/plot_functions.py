import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


TSNE_FILENAME = "plots/tsne_plot.png"
NIQE_FILENAME = "plots/niqe_histogram.png"
LOSS_FILENAME = "plots/loss_plot.png"


def _save(filename):
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    plt.savefig(filename)
    plt.clf()


def plot_tsne(embedding, groups, filename=TSNE_FILENAME):
    """
    Scatter of a 2-D embedding, one colour per group.
    Args:
        embedding (np.ndarray): (n, 2) points.
        groups (list of str): group label of each point.
    """
    logging.info("Plotting t-SNE embedding... saving into file.")
    for group in sorted(set(groups)):
        idx = [i for i, g in enumerate(groups) if g == group]
        plt.scatter(embedding[idx, 0], embedding[idx, 1], s=8, label=group)
    plt.legend()
    _save(filename)


def plot_niqe_histogram(scores_by_group, filename=NIQE_FILENAME, bins=30):
    logging.info("Plotting NIQE histogram... saving into file.")
    for group, scores in sorted(scores_by_group.items()):
        plt.hist(scores, bins=bins, alpha=0.5, label=group)
    plt.xlabel("NIQE")
    plt.legend()
    _save(filename)


def plot_loss(steps, values, filename=LOSS_FILENAME, title=None):
    plt.plot(steps, values)
    plt.xlabel("step")
    plt.ylabel("loss")
    if title:
        plt.title(title)
    _save(filename)
