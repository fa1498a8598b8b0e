"""Discrete-event simulation core: one replication of the offloading system.

The event loop advances in (time, insertion-order) priority.  Mobility,
neighbor lists, scheduling, and transmission outcomes are evaluated once per
control interval: a transmission scheduled at an interval's start completes
at its end, so cache entries and served flags become effective at interval
boundaries.  Content requests and timeouts are exact-time events in between.

Rules resolving spec-level boundary cases (all deterministic):
- a vehicle leaving the street cancels its pending requests and in-flight
  packets; those requests count as neither served nor offloaded;
- a device-to-device transmission that already started keeps retrying to
  completion even if the content timeout expires mid-flight; the
  infrastructure fallback fires only if it fails for good;
- a failed packet re-enters the next interval's candidate set, capped at the
  retry limit, after which it is dropped.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import phy, scheduler
from .channel import ChannelSampler, PathLossTable, generate_lsp_fields
from .config import ChannelModel, LinkKind, Mode, SimConfig
from .delivery import ContentDeliveryManager
from .events import EventKind, EventQueue, RngStreams
from .metrics import MetricsRecord
from .traffic import Vehicle, ZipfCatalog, draw_prepopulated, draw_vehicle, vehicle_density

_VEHICLE_KEY = 1 << 20  # entity-key offset separating vehicles from base stations


class Simulator:
    """One replication with its own state, RNG streams, and channel fields."""

    def __init__(self, config: SimConfig, seed: int | None = None,
                 margin_i2d_db: float | None = None, margin_d2d_db: float | None = None,
                 audit: bool = False):
        cfg = config.resolved()
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed)).resolved()
        self.cfg = cfg
        self.margin_i2d = margin_i2d_db if margin_i2d_db is not None else cfg.link_margin_i2d_db
        self.margin_d2d = margin_d2d_db if margin_d2d_db is not None else cfg.link_margin_d2d_db
        if self.margin_i2d is None or self.margin_d2d is None:
            raise ValueError("link margins unset: run calibration (harness/CLI 'calibrate') "
                             "or set link_margin_i2d_db / link_margin_d2d_db")
        self.model = ChannelModel(cfg.channel_model)
        self.benchmark = Mode(cfg.mode) == Mode.BENCHMARK_I2D_ONLY

        self.streams = RngStreams(cfg.seed)
        self.table = PathLossTable(cfg)
        lsp = None
        if self.model >= ChannelModel.M4:
            lsp = generate_lsp_fields(self.table.nx, self.table.ny, cfg.channel,
                                      self.streams.shadowing)
        self.sampler = ChannelSampler(cfg, self.table, lsp, self.streams)
        self.dm = ContentDeliveryManager(cfg, self.table.nominal_gain_matrix, audit=audit)
        self.catalog = ZipfCatalog(cfg.catalog_size, cfg.zipf_alpha)
        self.bs_xy = cfg.bs_positions()

        self.events = EventQueue()
        self.vehicles: dict[int, Vehicle] = {}
        self.queue: dict[int, phy.Packet] = {}     # candidate packets, by pid
        self._next_vid = 0
        self._next_pid = 0
        self._next_req_seq = 0

        self.t_end = cfg.warmup_s + cfg.sim_duration_s
        # requests later than this may not resolve before the run ends
        self.t_count_end = self.t_end - cfg.content_timeout_s - 10.0 * cfg.ci_duration_s

        self.rec = MetricsRecord(
            seed=cfg.seed, scenario=cfg.scenario.value, channel_model=self.model.name,
            mode=cfg.mode.value, speed_min_mps=cfg.speed_min_mps,
            speed_max_mps=cfg.speed_max_mps)
        self._latencies = []
        self._spectrum_samples = []
        self._density_samples = []
        self._d2d_seqs = []
        self.sched_trace = [] if audit else None

    # ---- public API ----------------------------------------------------------

    def run(self) -> MetricsRecord:
        cfg = self.cfg
        if cfg.prepopulate and cfg.vehicle_rate_per_s > 0:
            density = vehicle_density(cfg.vehicle_rate_per_s, cfg.speed_min_mps,
                                      cfg.speed_max_mps)
            n0 = self.streams.arrivals.poisson(density * cfg.roi_length_m)
            for _ in range(n0):
                veh = draw_prepopulated(self._next_vid, cfg, self.streams.arrivals,
                                        self.streams.speeds)
                self._admit_vehicle(veh, 0.0)
        if cfg.vehicle_rate_per_s > 0:
            dt = self.streams.arrivals.exponential(1.0 / cfg.vehicle_rate_per_s)
            if dt < self.t_end:
                self.events.schedule(dt, EventKind.VEHICLE_ARRIVAL)
        self.events.schedule(0.0, EventKind.CI_TICK)

        while len(self.events):
            t, kind, payload = self.events.pop()
            if t >= self.t_end:
                break
            if kind == EventKind.CI_TICK:
                self._on_tick(t)
            elif kind == EventKind.VEHICLE_ARRIVAL:
                self._on_arrival(t)
            elif kind == EventKind.REQUEST:
                self._on_request(t, payload)
            elif kind == EventKind.CONTENT_TIMEOUT:
                self._on_timeout(t, payload)
        return self._finalize()

    # ---- traffic events --------------------------------------------------------

    def _admit_vehicle(self, veh: Vehicle, t: float) -> None:
        self.vehicles[veh.vid] = veh
        self._next_vid += 1
        if self.cfg.request_rate_per_s > 0:
            dt = self.streams.requests.exponential(1.0 / self.cfg.request_rate_per_s)
            if t + dt < self.t_end:
                self.events.schedule(t + dt, EventKind.REQUEST, veh.vid)

    def _on_arrival(self, t: float) -> None:
        veh = draw_vehicle(self._next_vid, t, self.cfg, self.streams.arrivals,
                           self.streams.speeds)
        self._admit_vehicle(veh, t)
        dt = self.streams.arrivals.exponential(1.0 / self.cfg.vehicle_rate_per_s)
        if t + dt < self.t_end:
            self.events.schedule(t + dt, EventKind.VEHICLE_ARRIVAL)

    def _on_request(self, t: float, vid: int) -> None:
        veh = self.vehicles.get(vid)
        if veh is None or not veh.inside(t, self.cfg.roi_length_m):
            return  # vehicle gone: the request chain ends without consuming draws
        z = self.catalog.draw(self.streams.requests)
        dt = self.streams.requests.exponential(1.0 / self.cfg.request_rate_per_s)
        if t + dt < self.t_end:
            self.events.schedule(t + dt, EventKind.REQUEST, vid)

        seq = self._next_req_seq
        self._next_req_seq += 1
        counted = self.cfg.warmup_s <= t <= self.t_count_end
        if counted:
            self.rec.requests_total += 1
        outcome = self.dm.handle_request(vid, z, t, seq, counted)
        if outcome.disposition == "repeat":
            if counted:
                self.rec.requests_repeat += 1
            return
        if self.benchmark:
            self._enqueue_packet(LinkKind.I2D, (vid, z))
            return
        if outcome.d2d_source is not None:
            self._enqueue_packet(LinkKind.D2D, (vid, z), source=outcome.d2d_source)
        self.events.schedule(t + self.cfg.content_timeout_s, EventKind.CONTENT_TIMEOUT,
                             (vid, z))

    def _on_timeout(self, t: float, key: tuple) -> None:
        action = self.dm.on_timeout(key[0], key[1], t)
        if action != "fallback":
            return
        pr = self.dm.pending[key]
        if pr.packet_pid is not None:
            # queued but never transmitted: abandon in favor of the infrastructure
            self.queue.pop(pr.packet_pid, None)
            pr.packet_pid = None
        self._enqueue_packet(LinkKind.I2D, key)

    def _enqueue_packet(self, kind: LinkKind, key: tuple, source: int | None = None) -> None:
        pr = self.dm.pending[key]
        vid, z = key
        if kind == LinkKind.I2D:
            bs = self.dm.bs_assoc.get(vid, self._nearest_bs(self.vehicles[vid], self.events.now))
            pkt = phy.Packet(self._next_pid, kind, key, pr.seq, tx_key=bs,
                             rx_key=_VEHICLE_KEY + vid, payload_bits=self.cfg.payload_bits,
                             coded_bits=self.cfg.coded_bits, bs_id=bs)
        else:
            pkt = phy.Packet(self._next_pid, kind, key, pr.seq,
                             tx_key=_VEHICLE_KEY + source, rx_key=_VEHICLE_KEY + vid,
                             payload_bits=self.cfg.payload_bits, coded_bits=self.cfg.coded_bits)
        self._next_pid += 1
        self.queue[pkt.pid] = pkt
        pr.packet_pid = pkt.pid
        pr.attempts_started = False

    def _nearest_bs(self, veh: Vehicle, t: float) -> int:
        x, y = veh.position(t)
        return min(range(len(self.bs_xy)),
                   key=lambda b: (self.bs_xy[b][0] - x) ** 2 + (self.bs_xy[b][1] - y) ** 2)

    # ---- control interval ----------------------------------------------------

    def _on_tick(self, t: float) -> None:
        cfg = self.cfg
        in_window = cfg.warmup_s <= t < self.t_end

        self._process_exits(t)
        ids = sorted(self.vehicles)
        positions = np.array([self.vehicles[v].position(t) for v in ids]).reshape(-1, 2)
        for vid, pos in zip(ids, positions):
            bs = min(range(len(self.bs_xy)),
                     key=lambda b: (self.bs_xy[b][0] - pos[0]) ** 2
                     + (self.bs_xy[b][1] - pos[1]) ** 2)
            self.dm.update_association(vid, bs)
        self.dm.refresh_neighbors(ids, positions)
        self.dm.expire_caches(t)
        self._invalidate_stale_packets(t)

        for key, source in self.dm.scan_for_triggers(t):
            if key[0] in self.vehicles and source in self.vehicles:
                self._enqueue_packet(LinkKind.D2D, key, source=source)

        alloc = None
        if self.queue:
            alloc = self._schedule_and_transmit(t, in_window)

        if in_window:
            used = scheduler.spectrum_used_fraction(alloc) if alloc else 0.0
            self._spectrum_samples.append(used)
            self._density_samples.append(len(self.vehicles) / cfg.roi_length_m)

        if t + cfg.ci_duration_s < self.t_end:
            self.events.schedule(t + cfg.ci_duration_s, EventKind.CI_TICK)

    def _process_exits(self, t: float) -> None:
        gone = [vid for vid, v in self.vehicles.items()
                if not v.inside(t, self.cfg.roi_length_m)]
        for vid in gone:
            for key in self.dm.drop_node(vid):
                pr = self.dm.cancel_request(key, "exit")
                if pr.counted:
                    self.rec.cancelled += 1
                if pr.packet_pid is not None:
                    self.queue.pop(pr.packet_pid, None)
            ent_key = _VEHICLE_KEY + vid
            for pid in [p for p, pkt in self.queue.items()
                        if pkt.tx_key == ent_key or pkt.rx_key == ent_key]:
                pkt = self.queue.pop(pid)
                self._detach_packet(pkt, t)
            del self.vehicles[vid]

    def _detach_packet(self, pkt: phy.Packet, t: float) -> None:
        """A packet died without delivering; let the request recover."""
        pr = self.dm.pending.get(pkt.request_key)
        if pr is None or pr.packet_pid != pkt.pid:
            return
        pr.packet_pid = None
        pr.attempts_started = False
        if pr.fallback_deferred:
            # the timeout already expired while this transmission was running
            self._enqueue_packet(LinkKind.I2D, pkt.request_key)

    def _invalidate_stale_packets(self, t: float) -> None:
        """Senders must hold the content when the interval starts transmitting."""
        stale = []
        for pid in sorted(self.queue):
            pkt = self.queue[pid]
            if pkt.kind != LinkKind.D2D:
                continue
            src = pkt.tx_key - _VEHICLE_KEY
            if not self.dm.cache_valid(src, pkt.request_key[1], t):
                stale.append(pid)
        for pid in stale:
            self._detach_packet(self.queue.pop(pid), t)

    # ---- scheduling and transmission ---------------------------------------------

    def _schedule_and_transmit(self, t: float, in_window: bool):
        cfg = self.cfg
        ci_index = int(round(t / cfg.ci_duration_s))

        def entity_pos(key):
            if key >= _VEHICLE_KEY:
                return self.vehicles[key - _VEHICLE_KEY].position(t)
            return self.bs_xy[key]

        groups: dict[tuple, list] = {}
        for pid in sorted(self.queue):
            pkt = self.queue[pid]
            groups.setdefault((pkt.kind, pkt.tx_key, pkt.rx_key), []).append(pkt)
        keys = sorted(groups, key=lambda k: (0 if k[0] == LinkKind.I2D else 1, k[1], k[2]))
        links = []
        for idx, key in enumerate(keys):
            kind, tx_key, rx_key = key
            gain = self.table.det_gain(self.model, kind, entity_pos(tx_key), entity_pos(rx_key))
            bs_id = tx_key if kind == LinkKind.I2D else None
            links.append(scheduler.SchedLink(idx, kind, tx_key, rx_key, gain, bs_id))
        n = len(links)
        gains = np.empty((n, n))
        for j, lj in enumerate(links):
            for i, li in enumerate(links):
                ck = LinkKind.I2D if lj.tx_key < _VEHICLE_KEY else LinkKind.D2D
                gains[j, i] = self.table.det_gain(self.model, ck, entity_pos(lj.tx_key),
                                                  entity_pos(li.rx_key))
        packets_by_link = {i: groups[keys[i]] for i in range(n)}

        alloc = scheduler.schedule_ci(links, packets_by_link, gains, cfg,
                                      self.margin_i2d, self.margin_d2d)
        if in_window:
            self.rec.pruned_postponements += len(alloc.pruned)
        if self.sched_trace is not None:
            self.sched_trace.append({"t": t, "demand": alloc.demand, "d2d_rate": alloc.d2d_rate,
                                     "n_sets": len(alloc.reuse_sets),
                                     "pruned": len(alloc.pruned)})

        self._evaluate_transmissions(t, ci_index, links, alloc, entity_pos, in_window)
        return alloc

    def _evaluate_transmissions(self, t, ci_index, links, alloc, entity_pos, in_window):
        cfg = self.cfg
        sigma2 = phy.subcarrier_noise_mw(cfg)
        n_c = cfg.subcarriers_per_prb
        n_slots = cfg.n_slots_per_ci
        chan_cache: dict[tuple, object] = {}

        def channel(tx_key, rx_key):
            ck = (tx_key, rx_key)
            if ck not in chan_cache:
                kind = LinkKind.I2D if tx_key < _VEHICLE_KEY else LinkKind.D2D
                chan_cache[ck] = self.sampler.realization(
                    self.model, kind, entity_pos(tx_key), entity_pos(rx_key),
                    ci_index, tx_key, rx_key)
            return chan_cache[ck]

        for a in sorted(alloc.assignments, key=lambda a: a.packet.pid):
            link = links[a.link_idx]
            own = channel(link.tx_key, link.rx_key)
            others = [b for b in alloc.assignments
                      if b.link_idx != a.link_idx and b.start < a.end and b.end > a.start]
            bits = self._achievable_bits(a, own, others, links, channel, sigma2, n_c, n_slots)
            pkt = a.packet
            pkt.attempts += 1
            pr = self.dm.pending.get(pkt.request_key)
            if pr is not None:
                pr.attempts_started = True
            energy = phy.packet_energy_mj(a.end - a.start, n_c, a.power_mw,
                                          cfg.prb_duration_s)
            pkt.energy_mj += energy
            if in_window:
                self.rec.attempts += 1
                self.rec.energy_mj += energy
            if phy.transmission_succeeds(bits, pkt.payload_bits):
                self._complete_delivery(pkt, t + cfg.ci_duration_s)
            else:
                if in_window:
                    self.rec.failed_attempts += 1
                if pkt.attempts >= cfg.retry_limit:
                    self.queue.pop(pkt.pid, None)
                    if in_window:
                        self.rec.dropped_packets += 1
                    self._detach_packet(pkt, t)

    def _achievable_bits(self, a, own, others, links, channel, sigma2, n_c, n_slots):
        """Information transferable over the assignment's PRBs (payload test).

        PRBs are indexed frequency-major, so the interval [start, end) is cut
        at frequency-block boundaries and wherever the set of overlapping
        interferers changes; within one segment every PRB sees identical
        per-subcarrier ratios.
        """
        cfg = self.cfg
        cuts = {a.start, a.end}
        first_block = a.start // n_slots + 1
        cuts.update(range(first_block * n_slots, a.end, n_slots))
        for b in others:
            if a.start < b.start < a.end:
                cuts.add(b.start)
            if a.start < b.end < a.end:
                cuts.add(b.end)
        edges = sorted(cuts)
        tau_wc = cfg.prb_duration_s * cfg.subcarrier_spacing_hz
        bits = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            block = lo // n_slots
            sig = a.power_mw * np.broadcast_to(np.asarray(own.h2_block(block, n_c), dtype=float),
                                               (n_c,))
            denom = np.full(n_c, sigma2)
            for b in others:
                if b.start <= lo and b.end >= hi:
                    lb = links[b.link_idx]
                    cross = channel(lb.tx_key, links[a.link_idx].rx_key)
                    denom = denom + b.power_mw * np.broadcast_to(
                        np.asarray(cross.h2_block(block, n_c), dtype=float), (n_c,))
            per_sub = np.minimum(a.rate, np.log2(1.0 + sig / denom))
            bits += (hi - lo) * tau_wc * float(np.sum(per_sub))
        return bits

    def _complete_delivery(self, pkt: phy.Packet, t_complete: float) -> None:
        self.queue.pop(pkt.pid, None)
        mode = "d2d" if pkt.kind == LinkKind.D2D else "i2d"
        pr = self.dm.deliver(pkt.request_key[0], pkt.request_key[1], t_complete, mode)
        if pr.counted:
            if pkt.kind == LinkKind.D2D:
                self.rec.delivered_d2d += 1
                self._d2d_seqs.append(pr.seq)
            else:
                self.rec.delivered_i2d += 1
            self._latencies.append(t_complete - pr.t_req)

    # ---- wrap-up ------------------------------------------------------------------

    def _finalize(self) -> MetricsRecord:
        rec = self.rec
        rec.handovers = self.dm.handover_count
        rec.spectrum_occupation = float(np.mean(self._spectrum_samples)) \
            if self._spectrum_samples else 0.0
        rec.mean_vehicle_density = float(np.mean(self._density_samples)) \
            if self._density_samples else 0.0
        rec.mean_latency_s = float(np.mean(self._latencies)) if self._latencies else 0.0
        rec.d2d_served_seqs = tuple(sorted(self._d2d_seqs))
        return rec


def run_replication(config: SimConfig, seed: int | None = None,
                    margin_i2d_db: float | None = None,
                    margin_d2d_db: float | None = None,
                    audit: bool = False) -> MetricsRecord:
    """Run one full replication and return its metrics.

    Identical (config, seed) pairs produce bit-identical records; the vehicle
    and request substreams do not depend on the channel model or mode.
    """
    sim = Simulator(config, seed=seed, margin_i2d_db=margin_i2d_db,
                    margin_d2d_db=margin_d2d_db, audit=audit)
    return sim.run()
