"""Service configuration: JSON file with environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional


@dataclass
class ServiceConfig:
    data_root: str = "./histoloop-data"
    host: str = "127.0.0.1"
    port: int = 8077
    k: int = 32
    cluster_seed: int = 0
    recluster_seed: int = 1
    ui_dir: Optional[str] = None   # built frontend to serve at /ui

    @classmethod
    def load(
        cls,
        path: Optional[str | Path] = None,
        env: Mapping[str, str] = os.environ,
    ) -> "ServiceConfig":
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text()))
        if "HISTOLOOP_DATA_ROOT" in env:
            values["data_root"] = env["HISTOLOOP_DATA_ROOT"]
        if "HISTOLOOP_HOST" in env:
            values["host"] = env["HISTOLOOP_HOST"]
        if "HISTOLOOP_PORT" in env:
            values["port"] = int(env["HISTOLOOP_PORT"])
        if "HISTOLOOP_UI_DIR" in env:
            values["ui_dir"] = env["HISTOLOOP_UI_DIR"]
        return cls(**values)
