"""Python access to the kloak engine. Results come back as plain dicts."""

import json

from ._kloak import KloakError, check_view, generate, parse_plan
from . import _kloak

__all__ = ["Federation", "KloakError", "check_view", "generate", "parse_plan", "run_local", "run_scenario"]


class Federation:
    """In-process federation over a dataset directory."""

    def __init__(self, data_dir, seed=42):
        self._fed = _kloak.Federation(str(data_dir), seed)

    def query(self, sql, k=2, mode="kanon"):
        return json.loads(self._fed.query(sql, k, mode))

    def setup_views(self, c, k):
        self._fed.setup_views(list(c), k)

    def view(self):
        return json.loads(self._fed.view())

    def frames_sent(self):
        return dict(self._fed.frames_sent())

    @property
    def coordinator_host(self):
        return self._fed.coordinator_host


def run_local(data_dir, sql, mode="plain"):
    return json.loads(_kloak.run_local(str(data_dir), sql, mode))


def run_scenario(path, out=""):
    return _kloak.run_scenario(str(path), str(out))
