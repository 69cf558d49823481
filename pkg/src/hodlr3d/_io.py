"""CSV output shared by the experiment drivers."""
import csv
import io


def write_csv(dest, columns, rows, config=None):
    """Write ``rows`` (dicts) as CSV with an optional ``#`` config comment.

    ``dest`` is a path, an open text file, or ``None`` to return a string.
    """
    buf = io.StringIO() if dest is None else None
    fh = buf
    close = False
    if dest is not None:
        if hasattr(dest, "write"):
            fh = dest
        else:
            fh = open(dest, "w", newline="")
            close = True
    try:
        if config:
            items = " ".join(f"{k}={v}" for k, v in config.items())
            fh.write(f"# {items}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    finally:
        if close:
            fh.close()
    return buf.getvalue() if buf is not None else None


def parse_csv(text):
    """Rows of CSV text written by :func:`write_csv`, skipping comment lines."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))
