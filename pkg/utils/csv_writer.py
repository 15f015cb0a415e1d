import csv
import os


TRAINING_LOG_HEADER = ["wall_time", "stage", "step", "term", "value", "lrs"]
REPORT_HEADER = ["image_id", "metric", "value"]
EMBEDDING_HEADER = ["image_id", "x", "y", "group"]


def _open(filename, mode):
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return open(filename, mode, encoding="UTF8", newline="")


def format_lrs(lrs):
    return ";".join(f"{name}={lr:.6g}" for name, lr in lrs.items())


def append_training_log(rows, filename="logs/training_log.csv"):
    """Append (wall time, stage, step, term, value, lrs) rows; the header is written once."""
    new_file = not os.path.exists(filename) or os.path.getsize(filename) == 0
    with _open(filename, "a") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(TRAINING_LOG_HEADER)
        writer.writerows(rows)


def write_report(report, filename="logs/metrics_report.csv"):
    """
    Per-image rows, then failures and an aggregate footer:
    ``#failure,<id>,<message>`` and ``#mean|#std|#count,<metric>,<value>``.
    """
    with _open(filename, "w") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_HEADER)
        writer.writerows(report.rows)
        for image_id, message in report.failures:
            writer.writerow(["#failure", image_id, message])
        for metric, (mean, std, count) in report.aggregates().items():
            writer.writerow(["#mean", metric, repr(mean)])
            writer.writerow(["#std", metric, repr(std)])
            writer.writerow(["#count", metric, count])


def read_report_rows(filename):
    """Per-image rows of a report file as (image_id, metric, value) tuples."""
    rows = []
    with open(filename, encoding="UTF8", newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for image_id, metric, value in reader:
            if image_id.startswith("#"):
                continue
            rows.append((image_id, metric, float(value)))
    return rows


def write_embeddings(ids, embedding, groups, filename="logs/tsne_embedding.csv"):
    with _open(filename, "w") as f:
        writer = csv.writer(f)
        writer.writerow(EMBEDDING_HEADER)
        for image_id, (x, y), group in zip(ids, embedding, groups):
            writer.writerow([image_id, repr(float(x)), repr(float(y)), group])


def write_scores(scores, filename="logs/niqe_scores.csv"):
    """(image_id, group, score) rows."""
    with _open(filename, "w") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "group", "niqe"])
        writer.writerows(scores)


def write_summary(rows, filename="logs/ablation_summary.csv"):
    """(variant, metric, mean) rows."""
    with _open(filename, "w") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "metric", "mean"])
        writer.writerows(rows)
