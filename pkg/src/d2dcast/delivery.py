"""Infrastructure-side content delivery management.

Tracks every node's cache index, neighbor rankings, and pending requests, and
decides the delivery time and mode for each content request:

1. a neighbor already holds the content: it transmits device-to-device;
2. no holder nearby, but one comes within range during the content timeout:
   the encounter triggers the device-to-device transmission;
3. otherwise the serving base station delivers at timeout expiry.

Delivered contents stay cached and shareable until their sharing timeout
expires; a repeated request for a cached content is discarded and resets the
sharing timeout.  Neighbor ranking uses the distance-only nominal gain, so
the decisions here never depend on shadowing, fading, or the channel model
selected for the transmission simulation.

The manager is realized as a single global agent with per-node base-station
associations; a handover is an explicit association update, after which the
pending-request state is simply served by the new station.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Mode, SimConfig


@dataclass
class CacheEntry:
    valid_from: float   # reception completes here; sharable from then on
    expiry: float


@dataclass
class PendingRequest:
    seq: int
    requester: int
    content: int
    t_req: float
    expiry: float                 # content timeout instant
    counted: bool                 # inside the metrics window
    packet_pid: int | None = None
    attempts_started: bool = False  # the current packet has transmitted at least once
    fallback_deferred: bool = False  # timeout expired while a transmission was in flight


@dataclass
class RequestOutcome:
    disposition: str              # 'repeat' | 'pending'
    d2d_source: int | None = None


class ContentDeliveryManager:
    """Global view of caches, neighbors, and the pending-request ledger."""

    def __init__(self, cfg: SimConfig, gain_matrix_fn, audit: bool = False):
        self.cfg = cfg
        self.benchmark = Mode(cfg.mode) == Mode.BENCHMARK_I2D_ONLY
        self._gain_matrix_fn = gain_matrix_fn
        self.caches: dict[int, dict[int, CacheEntry]] = {}
        self.pending: dict[tuple[int, int], PendingRequest] = {}
        self.bs_assoc: dict[int, int] = {}
        self.neighbors: dict[int, list[int]] = {}
        self.handover_count = 0
        self.audit_rows = [] if audit else None

    # ---- per-interval state refresh ------------------------------------------

    def refresh_neighbors(self, ids: list[int], positions: np.ndarray) -> None:
        """Rebuild ranked neighbor lists from the sampled positions.

        Membership uses the exact pairwise distance against the neighbor
        range; ranking orders members by descending nominal gain with ties
        broken by the lower node id.
        """
        self.neighbors = {k: [] for k in ids}
        n = len(ids)
        if n < 2:
            return
        dx = positions[:, None, 0] - positions[None, :, 0]
        dy = positions[:, None, 1] - positions[None, :, 1]
        dist = np.hypot(dx, dy)
        gain = self._gain_matrix_fn(positions)
        rng_m = self.cfg.neighbor_range_m
        for a in range(n):
            within = [b for b in range(n) if b != a and dist[a, b] <= rng_m]
            within.sort(key=lambda b: (-gain[b, a], ids[b]))
            self.neighbors[ids[a]] = [ids[b] for b in within]

    def update_association(self, k: int, bs_id: int) -> None:
        old = self.bs_assoc.get(k)
        if old is not None and old != bs_id:
            self.handover(k, old, bs_id)
        else:
            self.bs_assoc[k] = bs_id

    def handover(self, k: int, old_bs: int, new_bs: int) -> None:
        """Transfer a node's delivery state between stations.

        State is globally shared here, so the transfer reduces to updating
        the association; pending requests and content timeouts carry over
        untouched and the new station serves any timeout fallback.
        """
        self.bs_assoc[k] = new_bs
        self.handover_count += 1

    # ---- caches ---------------------------------------------------------------

    def cache_valid(self, k: int, z: int, t: float) -> bool:
        entry = self.caches.get(k, {}).get(z)
        return entry is not None and entry.valid_from <= t < entry.expiry

    def expire_caches(self, t: float) -> None:
        for k, cache in self.caches.items():
            stale = [z for z, e in cache.items() if e.expiry <= t]
            for z in stale:
                del cache[z]

    # ---- request lifecycle ------------------------------------------------------

    def handle_request(self, k: int, z: int, t: float, seq: int, counted: bool) -> RequestOutcome:
        """Classify and register one content request at time t.

        Repeats (content already cached, or the same request already pending)
        are discarded; a cached repeat resets the sharing timeout.  New
        requests enter the ledger; in case 1 the best-ranked holder is
        returned so the caller can enqueue the transmission at once.
        """
        if self.cache_valid(k, z, t):
            self.caches[k][z].expiry = t + self.cfg.sharing_timeout_s
            self._audit(t, k, z, "repeat_cached")
            return RequestOutcome("repeat")
        if (k, z) in self.pending:
            self._audit(t, k, z, "repeat_pending")
            return RequestOutcome("repeat")
        timeout = 0.0 if self.benchmark else self.cfg.content_timeout_s
        self.pending[(k, z)] = PendingRequest(seq=seq, requester=k, content=z,
                                              t_req=t, expiry=t + timeout, counted=counted)
        source = None if self.benchmark else self.best_source(k, z, t)
        self._audit(t, k, z, "registered")
        return RequestOutcome("pending", d2d_source=source)

    def best_source(self, k: int, z: int, t: float) -> int | None:
        """Highest-ranked neighbor of k holding a valid copy of z, if any."""
        for j in self.neighbors.get(k, ()):
            if self.cache_valid(j, z, t):
                return j
        return None

    def scan_for_triggers(self, t: float):
        """Pending requests whose holder just came within range (case 2).

        Only requests with no transmission in flight and an unexpired timeout
        are eligible; evaluated at interval boundaries.
        """
        triggers = []
        for key in sorted(self.pending, key=lambda key: self.pending[key].seq):
            pr = self.pending[key]
            if pr.packet_pid is not None or pr.expiry <= t:
                continue
            source = self.best_source(pr.requester, pr.content, t)
            if source is not None:
                triggers.append((key, source))
        return triggers

    def on_timeout(self, k: int, z: int, t: float) -> str:
        """Content-timeout handling: 'done', 'defer', or 'fallback'.

        A transmission that already started keeps retrying to completion (the
        fallback is deferred until it fails for good); a queued-but-never-
        transmitted packet is abandoned in favor of the infrastructure path.
        """
        pr = self.pending.get((k, z))
        if pr is None:
            return "done"
        if pr.packet_pid is not None and pr.attempts_started:
            pr.fallback_deferred = True
            return "defer"
        return "fallback"

    def deliver(self, k: int, z: int, t_complete: float, mode: str) -> PendingRequest:
        """Mark a pending request served; the content becomes shareable."""
        pr = self.pending.pop((k, z))
        self.caches.setdefault(k, {})[z] = CacheEntry(
            valid_from=t_complete, expiry=t_complete + self.cfg.sharing_timeout_s)
        self._audit(t_complete, k, z, f"delivered_{mode}")
        return pr

    def cancel_request(self, key: tuple[int, int], reason: str) -> PendingRequest:
        pr = self.pending.pop(key)
        self._audit(pr.expiry, key[0], key[1], f"cancelled_{reason}")
        return pr

    def drop_node(self, k: int):
        """Node left the street: purge its cache and pending requests."""
        self.caches.pop(k, None)
        self.bs_assoc.pop(k, None)
        dropped = [key for key in self.pending if key[0] == k]
        return dropped

    def _audit(self, t, k, z, what):
        if self.audit_rows is not None:
            self.audit_rows.append({"t": t, "node": k, "content": z, "event": what})
