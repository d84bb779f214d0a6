"""Bundled example graphs in the graph JSON format."""

from __future__ import annotations

import json
from importlib import resources

from ..graph import PolcmGraph, graph_from_dict

# identifiable up to group sign
GS_FIXTURES = ("ident_simple", "ident_mixed", "fig3", "gs_chain", "gs_mixed")
# identifiable up to group sign and an orthogonal rotation of a latent group
OT_FIXTURES = ("ot_pair", "ot_latent_child", "ot_triple", "ot_overlap", "ot_observed_parents")


def names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__name__).iterdir() if p.name.endswith(".json"))


def path(name: str):
    return resources.files(__name__) / f"{name}.json"


def load(name: str) -> PolcmGraph:
    try:
        text = path(name).read_text()
    except FileNotFoundError:
        raise KeyError(f"no bundled fixture named {name!r}; available: {', '.join(names())}") from None
    return graph_from_dict(json.loads(text))


def description(name: str) -> str:
    return json.loads(path(name).read_text()).get("description", "")
