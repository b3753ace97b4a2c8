"""CSV metric reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

from .fidelity import PSNR_CAP

COLUMNS = ("metric", "level", "value", "n_images", "embedder_id", "seed", "config_hash")


@dataclass
class MetricRow:
    metric: str
    value: float
    level: Optional[int] = None
    n_images: int = 0
    embedder_id: str = ""
    seed: int = 0
    config_hash: str = ""


@dataclass
class MetricReport:
    rows: List[MetricRow] = field(default_factory=list)

    def add(self, metric: str, value: float, **kw) -> None:
        self.rows.append(MetricRow(metric, float(value), **kw))

    def value(self, metric: str, level: Optional[int] = None) -> float:
        for r in self.rows:
            if r.metric == metric and r.level == level:
                return r.value
        raise KeyError((metric, level))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for r in self.rows:
                v = r.value
                if r.metric == "psnr" and math.isinf(v):
                    v = PSNR_CAP
                w.writerow([r.metric, "" if r.level is None else r.level, f"{v:.6g}", r.n_images,
                            r.embedder_id, r.seed, r.config_hash])


def read_csv(path) -> MetricReport:
    rep = MetricReport()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rep.rows.append(MetricRow(row["metric"], float(row["value"]),
                                      int(row["level"]) if row["level"] else None,
                                      int(row["n_images"]), row["embedder_id"], int(row["seed"]),
                                      row["config_hash"]))
    return rep
