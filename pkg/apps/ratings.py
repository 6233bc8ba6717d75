"""
Rating-matrix loaders (Jester dataset 1, MovieLens-1M) and the canonical
`row,col,value` triplet format.

Rows of the completion matrix are items (jokes / movies), columns are
users, so d = number of items and N = number of users.
"""
import json
import logging
import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from core.errors import ConfigError, DroppedUsersWarning, ParseError
from core.problems import McProblem
from core.utils import make_rng

log = logging.getLogger(__name__)

JESTER_MISSING = 99.0
TRIPLET_COLUMNS = ["row", "col", "value"]
FLOAT_FORMAT = "%.17g"


def _empty():
    return pd.DataFrame({"row": np.array([], dtype=np.int64),
                         "col": np.array([], dtype=np.int64),
                         "value": np.array([], dtype=float)})


@dataclass
class RatingDataset:
    n_items: int
    n_users: int
    train: pd.DataFrame = field(default_factory=_empty)
    test: pd.DataFrame = field(default_factory=_empty)
    value_range: tuple = (float("nan"), float("nan"))

    @property
    def d(self):
        return self.n_items

    @property
    def n(self):
        return self.n_users

    def validate(self):
        for name, df in (("train", self.train), ("test", self.test)):
            if len(df) == 0:
                continue
            if df["row"].min() < 0 or df["row"].max() >= self.n_items:
                raise ParseError(f"{name} row index out of range [0, {self.n_items})")
            if df["col"].min() < 0 or df["col"].max() >= self.n_users:
                raise ParseError(f"{name} col index out of range [0, {self.n_users})")
        if len(self.test):
            both = self.train.merge(self.test, on=["row", "col"])
            if len(both):
                raise ParseError(f"{len(both)} entries appear in both train and test")
        return self


def _as_triplets(rows, cols, vals):
    return pd.DataFrame({"row": np.asarray(rows, dtype=np.int64),
                         "col": np.asarray(cols, dtype=np.int64),
                         "value": np.asarray(vals, dtype=float)})


def _value_range(df):
    if len(df) == 0:
        return (float("nan"), float("nan"))
    return (float(df["value"].min()), float(df["value"].max()))


def load_jester(path, count_column=True):
    """
    One CSV row per user, one column per joke; 99 marks a missing rating.
    The Jester-1 sheets start every row with the number of rated jokes,
    which is skipped when `count_column` is set.
    """
    try:
        raw = pd.read_csv(path, header=None, dtype=float, skip_blank_lines=False)
    except (pd.errors.ParserError, ValueError) as e:
        raise ParseError(str(e), line=_line_from(e), path=path) from e
    blank = raw.isna().all(axis=1).to_numpy()
    if count_column:
        raw = raw.iloc[:, 1:]
    mat = raw.to_numpy()
    bad = np.argwhere(~np.isfinite(mat) & ~blank[:, None])
    if bad.size:
        raise ParseError("missing or non-numeric field", line=int(bad[0, 0]) + 1, path=path)
    mat = mat[~blank]
    users, items = np.nonzero(mat != JESTER_MISSING)
    ratings = _as_triplets(items, users, mat[users, items])
    out = mat[mat != JESTER_MISSING]
    if out.size and (out.min() < -10.0 or out.max() > 10.0):
        log.warning("[Ratings] jester values outside [-10, 10] in %s", path)
    return RatingDataset(n_items=mat.shape[1], n_users=mat.shape[0], train=ratings,
                         value_range=_value_range(ratings))


def load_movielens(path):
    """`UserID::MovieID::Rating::Timestamp` lines; ids are re-indexed densely in sorted order."""
    try:
        raw = pd.read_csv(path, sep="::", engine="python", header=None,
                          names=["user", "item", "rating", "ts"], dtype=str, skip_blank_lines=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(str(e), line=_line_from(e), path=path) from e
    # blank lines stay in the frame so row i is file line i + 1
    blank = raw.isna().all(axis=1).to_numpy()
    num = raw.apply(pd.to_numeric, errors="coerce")
    bad = (num.isna().any(axis=1).to_numpy() & ~blank).nonzero()[0]
    if bad.size:
        raise ParseError("malformed rating line", line=int(bad[0]) + 1, path=path)
    num = num[~blank]
    user_ids = np.unique(num["user"].to_numpy(dtype=np.int64))
    item_ids = np.unique(num["item"].to_numpy(dtype=np.int64))
    cols = np.searchsorted(user_ids, num["user"].to_numpy(dtype=np.int64))
    rows = np.searchsorted(item_ids, num["item"].to_numpy(dtype=np.int64))
    ratings = _as_triplets(rows, cols, num["rating"].to_numpy(dtype=float))
    return RatingDataset(n_items=len(item_ids), n_users=len(user_ids), train=ratings,
                         value_range=_value_range(ratings))


def _line_from(exc):
    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


def load_ratings(path, format="movielens", **kw):
    if format == "jester":
        return load_jester(path, **kw)
    if format == "movielens":
        return load_movielens(path)
    if format == "triplets":
        return read_dataset(path)
    raise ConfigError(f"unknown rating format {format!r} (expected jester, movielens or triplets)")


def split_ratings(ds: RatingDataset, per_user_holdout=2, seed=0):
    """
    Hold out `per_user_holdout` ratings per user, chosen uniformly, as the
    test set; the rest is train. Users with fewer than per_user_holdout + 1
    ratings are dropped from both sides.
    """
    rng = make_rng(seed)
    df = ds.train.sort_values(["col", "row"], kind="mergesort").reset_index(drop=True)
    cols = df["col"].to_numpy()
    bounds = np.searchsorted(cols, np.arange(ds.n_users + 1))
    test_mask = np.zeros(len(df), dtype=bool)
    keep_mask = np.ones(len(df), dtype=bool)
    dropped = 0
    for u in range(ds.n_users):
        lo, hi = bounds[u], bounds[u + 1]
        count = hi - lo
        if count == 0:
            continue
        if count < per_user_holdout + 1:
            keep_mask[lo:hi] = False
            dropped += 1
            continue
        pick = rng.choice(count, size=per_user_holdout, replace=False)
        test_mask[lo + pick] = True
    if dropped:
        warnings.warn(f"dropped {dropped} users with fewer than {per_user_holdout + 1} ratings",
                      DroppedUsersWarning, stacklevel=2)
        log.info("[Ratings] dropped %d users during split", dropped)
    train = df[keep_mask & ~test_mask].reset_index(drop=True)
    test = df[keep_mask & test_mask].reset_index(drop=True)
    return train, test


def split_dataset(ds, per_user_holdout=2, seed=0):
    train, test = split_ratings(ds, per_user_holdout, seed)
    return RatingDataset(ds.n_items, ds.n_users, train, test, ds.value_range)


def ratings_to_problem(ds: RatingDataset, r=5, ridge=1e-8):
    tr, te = ds.train, ds.test
    return McProblem(ds.n_items, ds.n_users,
                     (tr["row"].to_numpy(), tr["col"].to_numpy(), tr["value"].to_numpy()),
                     (te["row"].to_numpy(), te["col"].to_numpy(), te["value"].to_numpy()),
                     r=r, ridge=ridge)


def write_triplets(df, path):
    df[TRIPLET_COLUMNS].to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_triplets(path):
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(str(e), line=_line_from(e), path=path) from e
    if list(df.columns) != TRIPLET_COLUMNS:
        raise ParseError(f"expected header {','.join(TRIPLET_COLUMNS)}", line=1, path=path)
    try:
        return df.astype({"row": np.int64, "col": np.int64, "value": float})
    except (ValueError, TypeError) as e:
        raise ParseError(f"non-numeric triplet field: {e}", path=path) from e


def write_dataset(ds: RatingDataset, directory):
    os.makedirs(directory, exist_ok=True)
    write_triplets(ds.train, os.path.join(directory, "train.csv"))
    write_triplets(ds.test, os.path.join(directory, "test.csv"))
    meta = {"n_items": ds.n_items, "n_users": ds.n_users, "value_range": list(ds.value_range)}
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return directory


def read_dataset(directory):
    with open(os.path.join(directory, "meta.json"), "r") as f:
        meta = json.load(f)
    ds = RatingDataset(meta["n_items"], meta["n_users"],
                       read_triplets(os.path.join(directory, "train.csv")),
                       read_triplets(os.path.join(directory, "test.csv")),
                       tuple(float(v) for v in meta["value_range"]))
    return ds.validate()
