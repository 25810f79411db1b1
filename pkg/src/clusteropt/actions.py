"""Control actions: no-op, per-pair scaling and cross-cluster replica migration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

Pair = tuple[str, str]


@dataclass(frozen=True)
class NoOp:
    def sort_key(self) -> tuple:
        return (0,)

    def touches(self) -> frozenset[Pair]:
        return frozenset()

    def __str__(self) -> str:
        return "noop"


@dataclass(frozen=True)
class Scale:
    cluster_id: str
    workload_id: str
    delta: int

    def __post_init__(self) -> None:
        if self.delta == 0:
            raise ValueError("Scale delta must be non-zero")

    def sort_key(self) -> tuple:
        return (1, (self.cluster_id,), self.workload_id, self.delta)

    def touches(self) -> frozenset[Pair]:
        return frozenset({(self.cluster_id, self.workload_id)})

    def __str__(self) -> str:
        return f"scale({self.cluster_id},{self.workload_id},{self.delta:+d})"


@dataclass(frozen=True)
class Migrate:
    src_cluster: str
    dst_cluster: str
    workload_id: str
    count: int

    def __post_init__(self) -> None:
        if self.src_cluster == self.dst_cluster:
            raise ValueError("Migrate needs distinct source and destination clusters")
        if self.count < 1:
            raise ValueError("Migrate count must be positive")

    def sort_key(self) -> tuple:
        return (2, (self.src_cluster, self.dst_cluster), self.workload_id, self.count)

    def touches(self) -> frozenset[Pair]:
        return frozenset(
            {(self.src_cluster, self.workload_id), (self.dst_cluster, self.workload_id)}
        )

    def __str__(self) -> str:
        return (
            f"migrate({self.src_cluster}->{self.dst_cluster},{self.workload_id},{self.count})"
        )


Action = Union[NoOp, Scale, Migrate]


def canonical_key(action: Action) -> tuple:
    """Total order used for sorting and tie-breaks: NoOp < Scale < Migrate."""
    return action.sort_key()


def replica_deltas(action: Action) -> dict[Pair, int]:
    if isinstance(action, Scale):
        return {(action.cluster_id, action.workload_id): action.delta}
    if isinstance(action, Migrate):
        return {
            (action.src_cluster, action.workload_id): -action.count,
            (action.dst_cluster, action.workload_id): action.count,
        }
    return {}


def conflicts(a: Action, b: Action) -> bool:
    return bool(a.touches() & b.touches())
