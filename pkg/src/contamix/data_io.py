"""CSV ingestion, principal-component outlier injection, result documents
and density-grid export.

The result document is a versioned JSON tree; matrices are stored
row-major with explicit dimensions so any consumer can rebuild them.
Serialization is deterministic (sorted keys, repr-exact floats), which is
what makes fixed-seed runs byte-identical.
"""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .densities import MixtureModel, ComponentParams, mixture_logpdf_rows
from .exceptions import DataError, DomainError

__all__ = [
    "load_csv",
    "inject_pc_outlier",
    "export_density_grid",
    "write_result_document",
    "read_result_document",
    "result_document",
    "fixture_path",
]

SCHEMA_VERSION = 1
_FIXTURE_DIR = Path(__file__).parent / "datasets"


def fixture_path(name):
    """Path of a bundled or fetched dataset fixture (may not exist)."""
    return _FIXTURE_DIR / f"{name}.csv"


def load_csv(path, label_col=None, bad_col=None):
    """Load a rectangular numeric CSV with a header row into a Dataset.

    ``label_col`` and ``bad_col`` name optional class-label and bad-flag
    columns; every remaining column must parse as a float (dot decimal
    separator, locale independent).  Missing or non-numeric cells raise
    :class:`DataError` with the offending row and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        special_cols = {}
        for role, name in (("label", label_col), ("bad", bad_col)):
            if name is not None:
                if name not in header:
                    raise DataError(f"{role} column {name!r} not in header")
                special_cols[header.index(name)] = role
        feat_idx = [j for j in range(len(header)) if j not in special_cols]
        if not feat_idx:
            raise DataError("no feature columns left after removing label/bad columns")

        rows, labels, bads = [], [], []
        for i, rec in enumerate(reader):
            if len(rec) != len(header):
                raise DataError(
                    f"expected {len(header)} fields, got {len(rec)}", row=i)
            vals = []
            for j in feat_idx:
                cell = rec[j].strip()
                if cell == "":
                    raise DataError("missing value", row=i, column=header[j])
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r}",
                                    row=i, column=header[j]) from None
            rows.append(vals)
            for j, role in special_cols.items():
                cell = rec[j].strip()
                if role == "label":
                    labels.append(cell)
                else:
                    bads.append(cell)

    if not rows:
        raise DataError(f"no data rows in {path}")
    x = np.asarray(rows, dtype=float)

    label_arr = None
    if label_col is not None:
        classes = sorted(set(labels))
        label_arr = np.asarray([classes.index(v) for v in labels], dtype=int)
    bad_arr = None
    if bad_col is not None:
        truthy = {"1", "true", "yes"}
        falsy = {"0", "false", "no", ""}
        flags = []
        for i, v in enumerate(bads):
            lv = v.lower()
            if lv in truthy:
                flags.append(True)
            elif lv in falsy:
                flags.append(False)
            else:
                raise DataError(f"unparseable bad flag {v!r}", row=i, column=bad_col)
        bad_arr = np.asarray(flags, dtype=bool)

    return Dataset(x=x, feature_names=tuple(header[j] for j in feat_idx),
                   labels=label_arr, bad_truth=bad_arr)


def write_csv(path, dataset):
    """Write a Dataset (with any labels/flags) back to CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        header = list(dataset.feature_names)
        if dataset.labels is not None:
            header.append("label")
        if dataset.bad_truth is not None:
            header.append("bad")
        wr.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            if dataset.labels is not None:
                row.append(str(dataset.labels[i]))
            if dataset.bad_truth is not None:
                row.append(str(int(dataset.bad_truth[i])))
            wr.writerow(row)


def inject_pc_outlier(data, base_row, pc_multiples):
    """Append one artificial outlier shifted along principal components.

    Classical PCA is run on the column-standardized data; the new row is
    the base row plus ``multiple_k`` times the k-th eigenvector expressed
    on the original scale, so its standardized PC-k score exceeds the base
    row's by exactly ``multiple_k``.
    """
    x = data.x
    n, p = x.shape
    if not (0 <= base_row < n):
        raise DomainError(f"base_row {base_row} out of range")
    pc_multiples = np.atleast_1d(np.asarray(pc_multiples, dtype=float))
    if pc_multiples.shape[0] > min(2, p):
        raise DomainError("at most the first two principal components are used")
    if n <= p:
        raise DomainError("PCA needs more rows than columns")

    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DomainError("constant column; cannot standardize for PCA")
    z = (x - mean) / sd
    corr = z.T @ z / (n - 1)
    vals, vecs = np.linalg.eigh(corr)
    order = np.argsort(vals)[::-1]
    vecs = vecs[:, order]

    shift = np.zeros(p)
    for k, mult in enumerate(pc_multiples):
        shift += mult * vecs[:, k] * sd
    new_row = x[base_row] + shift

    new_x = np.vstack([x, new_row])
    labels = None
    if data.labels is not None:
        fill = data.labels.max() + 1 if data.labels.dtype.kind in "iu" else data.labels[base_row]
        labels = np.concatenate([data.labels, [fill]])
    flags = np.zeros(n + 1, dtype=bool) if data.bad_truth is None else data.bad_truth.copy()
    flags = np.concatenate([flags[:n], [True]])
    return Dataset(x=new_x, feature_names=data.feature_names, labels=labels,
                   bad_truth=flags)


# ---------------------------------------------------------------------------
# Density grid export
# ---------------------------------------------------------------------------

def export_density_grid(model, dims, grid_spec, seed=0):
    """Tabulate the mixture density on a 2-d grid for external contouring.

    ``dims`` picks the two plotted coordinates; all other coordinates are
    held at the mixing-weighted component means.  ``grid_spec`` is
    ``(lo, hi, steps)`` per dimension or one shared triple.  Returns an
    array with columns (x_i, x_j, density).
    """
    i, j = dims
    p = model.p
    if p < 2 or i == j or not (0 <= i < p and 0 <= j < p):
        raise DomainError("dims must pick two distinct valid coordinates")
    spec = np.asarray(grid_spec, dtype=float)
    if spec.ndim == 1:
        spec = np.vstack([spec, spec])
    if not np.all(np.isfinite(spec[:, :2])) or np.any(spec[:, 2] < 1):
        raise DomainError("grid spec must be finite with at least one step")
    axes = [np.linspace(spec[k, 0], spec[k, 1], int(spec[k, 2])) for k in range(2)]

    means = model.component_means()
    weights = np.array([c.pi for c in model.components])
    base = weights @ means

    gi, gj = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.tile(base, (gi.size, 1))
    pts[:, i] = gi.ravel()
    pts[:, j] = gj.ravel()
    dens = np.exp(mixture_logpdf_rows(pts, model, seed=seed))
    return np.column_stack([pts[:, i], pts[:, j], dens])


# ---------------------------------------------------------------------------
# Result document
# ---------------------------------------------------------------------------

def _matrix_doc(mat):
    mat = np.asarray(mat, dtype=float)
    return {"rows": int(mat.shape[0]), "cols": int(mat.shape[1]),
            "data": [float(v) for v in mat.ravel()]}


def _matrix_from_doc(doc):
    return np.asarray(doc["data"], dtype=float).reshape(doc["rows"], doc["cols"])


def _model_doc(model):
    return {
        "family": model.family,
        "p": int(model.p),
        "components": [
            {
                "pi": float(c.pi),
                "lambda": float(c.lam),
                "eta": float(c.eta),
                "mu": [float(v) for v in c.mu],
                "alpha": [float(v) for v in c.alpha],
                "sigma": _matrix_doc(c.sigma),
            }
            for c in model.components
        ],
    }


def model_from_doc(doc):
    comps = tuple(
        ComponentParams(pi=c["pi"], lam=c["lambda"], eta=c["eta"],
                        mu=np.asarray(c["mu"]), alpha=np.asarray(c["alpha"]),
                        sigma=_matrix_from_doc(c["sigma"]), family=doc["family"])
        for c in doc["components"])
    return MixtureModel(family=doc["family"], components=comps)


def result_document(fit, family, chosen_g, config_echo, bic_table=None,
                    ari=None, seed=None, standardize=False):
    """Build the serializable result tree for a finished fit."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "family": family,
        "chosen_g": int(chosen_g),
        "config": config_echo,
        "standardize": bool(standardize),
        "seed": seed,
        "model": _model_doc(fit.model),
        "bic": float(fit.bic),
        "bic_table": bic_table if bic_table is not None else [
            {"g": int(chosen_g), "bic": float(fit.bic),
             "loglik": fit.loglik, "converged": bool(fit.converged)}],
        "loglik_trace": [float(v) for v in fit.loglik_trace],
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "hard_labels": [int(v) for v in fit.hard_labels],
        "bad_flags": [bool(v) for v in fit.bad_flags],
        "z_hat": _matrix_doc(fit.z_hat),
        "v_hat": _matrix_doc(fit.v_hat),
        "flags": list(fit.flags),
    }
    if ari is not None:
        doc["ari"] = float(ari)
    return doc


def write_result_document(path, doc):
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_result_document(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def verify_checksum(path):
    """Check a fixture against its sidecar .sha256 file, if one exists."""
    path = Path(path)
    sidecar = path.with_suffix(".sha256")
    if not sidecar.exists():
        return True
    want = sidecar.read_text().split()[0].strip()
    got = hashlib.sha256(path.read_bytes()).hexdigest()
    if got != want:
        raise DataError(f"checksum mismatch for {path.name}: {got} != {want}")
    return True
