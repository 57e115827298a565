"""Simulated external-memory execution with exact I/O accounting.

The device stores B-word blocks and counts every block transfer; a frame
manager asserts that no algorithm ever holds more than floor(M/B) pinned
frames, which is the honesty check for the M-word memory budget. Records
are fixed at two words (key, probability), so block counts are
deterministic.

Engines built on the device:

  * em_naive_query     - scan every block, one Bernoulli draw per record
  * SetSampler         - batched uniform sampling (with or without
                         replacement) from a static record vector
  * EMSampler          - the full external engine: bucket partition by
                         external sort, gated per-bucket set sampling, and
                         a recursion that ends in an in-memory sampler as
                         soon as the problem fits the memory budget

The SetSampler pre-draws large epochs of i.i.d. uniform record copies in
one sequential pass (per memory-sized segment of the data), allocating the
epoch across segments multinomially and interleaving segment streams in
random order. Unconsumed copies are independent of everything delivered
before, so queries stay independent. A without-replacement request keeps
first occurrences until enough distinct records arrive, or falls back to a
single scan with sequential hypergeometric selection when the request is
too large for that to be cheap.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .dynamic import DynamicSampler, bucket_level, level_count
from .errors import FrameBudgetError, check_prob
from .flat import WorkCounter  # noqa: F401  (re-exported for benchmark code)

RECORD_WORDS = 2


class Frame:
    """A pinned block; release it (or use as a context manager) when done."""

    __slots__ = ("words", "_dev", "_released")

    def __init__(self, words, dev):
        self.words = words
        self._dev = dev
        self._released = False

    def release(self):
        if not self._released:
            self._released = True
            self._dev._unpin()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()
        return False


class BlockDevice:
    """Addressable store of B-word blocks with read/write counters.

    M is the memory budget in words (M >= 2B); at most floor(M/B) frames
    may be pinned at any instant, counting in-memory scratch buffers that
    algorithms register via scratch().
    """

    def __init__(self, block_words: int, memory_words: int):
        if block_words < RECORD_WORDS:
            raise ValueError(f"block must hold at least one record, B={block_words}")
        if memory_words < 2 * block_words:
            raise ValueError(
                f"memory must be at least two blocks: M={memory_words}, B={block_words}"
            )
        self.B = int(block_words)
        self.M = int(memory_words)
        self.frame_limit = self.M // self.B
        self.reads = 0
        self.writes = 0
        self._blocks = []
        self._pinned = 0
        self.max_pinned = 0
        self.live_blocks = 0
        self.peak_blocks = 0

    # -- frame accounting ----------------------------------------------------

    def _pin(self, count=1):
        self._pinned += count
        if self._pinned > self.frame_limit:
            raise FrameBudgetError(
                f"{self._pinned} frames pinned, budget is {self.frame_limit}"
            )
        if self._pinned > self.max_pinned:
            self.max_pinned = self._pinned

    def _unpin(self, count=1):
        self._pinned -= count

    def scratch(self, frames: int):
        """Context manager charging `frames` of in-memory scratch space."""
        dev = self

        class _Scratch:
            def __enter__(self):
                dev._pin(frames)
                return self

            def __exit__(self, *exc):
                dev._unpin(frames)
                return False

        return _Scratch()

    # -- storage -------------------------------------------------------------

    def allocate(self, nblocks: int) -> int:
        start = len(self._blocks)
        self._blocks.extend([None] * nblocks)
        self.live_blocks += nblocks
        if self.live_blocks > self.peak_blocks:
            self.peak_blocks = self.live_blocks
        return start

    def free(self, start: int, nblocks: int):
        for a in range(start, start + nblocks):
            self._blocks[a] = None
        self.live_blocks -= nblocks

    def read_block(self, addr: int) -> Frame:
        """One I/O; the returned frame stays pinned until released."""
        if not (0 <= addr < len(self._blocks)):
            raise IndexError(f"bad block address {addr}")
        self._pin()
        self.reads += 1
        words = self._blocks[addr]
        if words is None:
            raise IndexError(f"read of unwritten/freed block {addr}")
        return Frame(words, self)

    def write_block(self, addr: int, words):
        """One I/O; `words` must not exceed B."""
        if not (0 <= addr < len(self._blocks)):
            raise IndexError(f"bad block address {addr}")
        if len(words) > self.B:
            raise ValueError(f"{len(words)} words exceed block size {self.B}")
        self.writes += 1
        self._blocks[addr] = list(words)

    def reset_counters(self):
        self.reads = 0
        self.writes = 0

    @property
    def io(self) -> int:
        return self.reads + self.writes


class EMVector:
    """Contiguous run of blocks holding n two-word (key, prob) records."""

    __slots__ = ("dev", "start", "n", "rpb", "nblocks")

    def __init__(self, dev: BlockDevice, start: int, n: int):
        self.dev = dev
        self.start = start
        self.n = n
        self.rpb = dev.B // RECORD_WORDS
        self.nblocks = -(-n // self.rpb) if n else 0

    @classmethod
    def build(cls, dev: BlockDevice, records) -> "EMVector":
        records = list(records)
        rpb = dev.B // RECORD_WORDS
        nblocks = -(-len(records) // rpb) if records else 0
        start = dev.allocate(nblocks)
        for b in range(nblocks):
            words = []
            for key, p in records[b * rpb:(b + 1) * rpb]:
                words.append(key)
                words.append(check_prob(p))
            dev.write_block(start + b, words)
        return cls(dev, start, len(records))

    def block_records(self, frame_words):
        """Decode (key, prob) pairs from one block's words."""
        it = iter(frame_words)
        return list(zip(it, it))

    def free(self):
        if self.nblocks:
            self.dev.free(self.start, self.nblocks)


def em_naive_query(vec: EMVector, rng, work=None):
    """Scan the vector once; include each record independently.

    Costs exactly `vec.nblocks` reads.
    """
    out = []
    dev = vec.dev
    if work is not None:
        work.add(vec.n)
    for b in range(vec.nblocks):
        with dev.read_block(vec.start + b) as frame:
            recs = vec.block_records(frame.words)
        m = len(recs)
        u = rng.uniform01_batch(m)
        for i in range(m):
            if u[i] < recs[i][1]:
                out.append(recs[i][0])
    return out


# -- exact binomial draws via geometric skips ---------------------------------


def binomial_draw(rng, n: int, p: float) -> int:
    """t ~ Bin(n, p), counted as geometric-skip landings within n slots."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if n <= 64:
        count = 0
        pos = 0
        while True:
            pos += rng.geometric_skip(p) + 1
            if pos > n:
                return count
            count += 1
    count = 0
    pos = 0
    while pos < n:
        expect = (n - pos) * p
        k = max(8, int(expect + 6.0 * math.sqrt(expect) + 4.0))
        g = rng.geometric_batch(p, k)
        steps = np.cumsum(g) + np.arange(1, k + 1, dtype=np.int64) + pos
        inside = int(np.searchsorted(steps, n, side="right"))
        count += inside
        if inside < k:
            break
        pos = int(steps[-1])
    return count


def binomial_positive(rng, n: int, p: float) -> int:
    """t ~ Bin(n, p) conditioned on t >= 1, by rejection (CPU only)."""
    while True:
        t = binomial_draw(rng, n, p)
        if t >= 1:
            return t


# -- batched set sampling ------------------------------------------------------


class _Lane:
    """One on-disk queue of pre-drawn copies, consumed front to back."""

    __slots__ = ("start", "nblocks", "next_block", "residue", "remaining")

    def __init__(self, start, nblocks, remaining):
        self.start = start
        self.nblocks = nblocks
        self.next_block = 0
        self.residue = []  # copies of the current block, reversed
        self.remaining = remaining

    def pop(self, dev, rpb):
        if not self.residue:
            addr = self.start + self.next_block
            with dev.read_block(addr) as frame:
                it = iter(frame.words)
                self.residue = list(zip(it, it))
            self.residue.reverse()
            self.next_block += 1
        self.remaining -= 1
        return self.residue.pop()


class SetSampler:
    """Uniform sampling from a static EMVector, amortized via pre-draws.

    Each refill epoch makes `epoch` i.i.d. uniform copies: the data is
    scanned once in memory-sized segments, each segment contributing a
    multinomial share written out as one sequential lane, and lanes are
    merged (randomly interleaved) until few enough remain that their
    partially-consumed head blocks fit in memory. Taking k copies then
    costs k * 2/B block reads plus the amortized refill.
    """

    def __init__(self, vec: EMVector, rng, epoch: int | None = None):
        self.vec = vec
        self.dev = vec.dev
        self.n = vec.n
        if self.n == 0:
            raise ValueError("cannot sample from an empty vector")
        self.rpb = vec.rpb
        if epoch is None:
            epoch = min(max(64, self.n), 131_072)
        self.epoch = epoch
        self.seg_blocks = max(1, self.dev.M // (2 * self.dev.B))
        self.max_lanes = max(1, min(12, self.dev.M // (2 * self.dev.B)))
        self.fan_in = max(2, min(14, self.dev.frame_limit - 2))
        self.dedup_limit = max(16, self.dev.M // 4)
        self.lanes = []
        self.remaining = 0
        self._fill(rng)

    # -- epoch construction ---------------------------------------------------

    def _fill(self, rng):
        for lane in self.lanes:  # drop exhausted lane storage
            self.dev.free(lane.start, lane.nblocks)
        vec = self.vec
        dev = self.dev
        lanes = []
        left_copies = self.epoch
        left_records = self.n
        for seg_lo in range(0, vec.nblocks, self.seg_blocks):
            seg_hi = min(seg_lo + self.seg_blocks, vec.nblocks)
            seg_records = min(seg_hi * self.rpb, self.n) - seg_lo * self.rpb
            share = binomial_draw(rng, left_copies, seg_records / left_records)
            left_copies -= share
            left_records -= seg_records
            if share == 0:
                continue
            nblocks = -(-share // self.rpb)
            start = dev.allocate(nblocks)
            written = 0
            with dev.scratch(seg_hi - seg_lo + 1):  # segment copy + write buffer
                local = []
                for b in range(seg_lo, seg_hi):
                    with dev.read_block(vec.start + b) as f:
                        it = iter(f.words)
                        local.extend(zip(it, it))
                for b in range(nblocks):
                    k = min(self.rpb, share - written)
                    idx = (rng.uniform01_batch(k) * len(local)).astype(np.int64)
                    words = []
                    for j in idx:
                        key, p = local[j]
                        words.append(key)
                        words.append(p)
                    dev.write_block(start + b, words)
                    written += k
            lanes.append(_Lane(start, nblocks, share))
        while len(lanes) > self.max_lanes:
            lanes = [
                self._merge_group(lanes[i:i + self.fan_in], rng)
                for i in range(0, len(lanes), self.fan_in)
            ]
        self.lanes = [l for l in lanes if l.remaining > 0]
        self.remaining = sum(l.remaining for l in self.lanes)

    def _merge_group(self, group, rng):
        """Randomly interleave a group of lanes into one sequential lane."""
        if len(group) == 1:
            return group[0]
        dev = self.dev
        total = sum(l.remaining for l in group)
        nblocks = -(-total // self.rpb)
        start = dev.allocate(nblocks)
        remaining = [l.remaining for l in group]
        left = total
        out_block = 0
        # one scratch frame per input residue plus the output buffer
        with dev.scratch(len(group) + 1):
            buf = []
            while left > 0:
                r = rng.uniform01() * left
                acc = 0.0
                for j, lane in enumerate(group):
                    acc += remaining[j]
                    if r < acc:
                        break
                remaining[j] -= 1
                left -= 1
                key, p = lane.pop(dev, self.rpb)
                buf.append(key)
                buf.append(p)
                if len(buf) == self.rpb * RECORD_WORDS:
                    dev.write_block(start + out_block, buf)
                    out_block += 1
                    buf = []
            if buf:
                dev.write_block(start + out_block, buf)
        for lane in group:
            dev.free(lane.start, lane.nblocks)
        return _Lane(start, nblocks, total)

    # -- consumption ----------------------------------------------------------

    def take_with_replacement(self, k: int, rng, work=None):
        """Next k copies of the i.i.d. uniform stream, as (key, p) pairs."""
        out = []
        if work is not None:
            work.add(k)
        while k > 0:
            if self.remaining == 0:
                self._fill(rng)
            step = min(k, self.remaining)
            lanes = self.lanes
            for _ in range(step):
                if len(lanes) == 1:
                    lane = lanes[0]
                else:
                    r = rng.uniform01() * self.remaining
                    acc = 0.0
                    for lane in lanes:
                        acc += lane.remaining
                        if r < acc:
                            break
                out.append(lane.pop(self.dev, self.rpb))
                self.remaining -= 1
                if lane.remaining == 0:
                    self.dev.free(lane.start, lane.nblocks)
                    lanes.remove(lane)
            k -= step
        return out

    def sample_distinct(self, t: int, rng, work=None):
        """Uniform t-subset of the records, as (key, p) pairs.

        Consumes the pre-drawn stream keeping first occurrences; large
        requests (t > n/2, or beyond the in-memory dedup budget) fall back
        to one scan with sequential hypergeometric selection.
        """
        if t < 0 or t > self.n:
            raise ValueError(f"cannot sample {t} distinct of {self.n}")
        if t == 0:
            return []
        if 2 * t > self.n or t > self.dedup_limit:
            return self._scan_subset(t, rng, work)
        seen = set()
        out = []
        need = t
        while need > 0:
            for key, p in self.take_with_replacement(need, rng, work):
                if key not in seen:
                    seen.add(key)
                    out.append((key, p))
            need = t - len(out)
        return out

    def _scan_subset(self, t, rng, work=None):
        dev = self.dev
        vec = self.vec
        out = []
        left = t
        pool = self.n
        if work is not None:
            work.add(self.n)
        for b in range(vec.nblocks):
            if left == 0:
                break
            with dev.read_block(vec.start + b) as frame:
                recs = vec.block_records(frame.words)
            for rec in recs:
                if rng.uniform01() * pool < left:
                    out.append(rec)
                    left -= 1
                pool -= 1
        return out


# -- bucket partition by external sort -----------------------------------------


def _sort_partition(dev: BlockDevice, vec: EMVector, L: int):
    """Split a record vector into per-bucket vectors via external sort.

    Returns {level: EMVector}; the merge's final pass writes records grouped
    by level directly, so partitioning costs no extra pass.
    """
    rpb = vec.rpb
    run_blocks = max(1, dev.frame_limit - 2)
    runs = []
    for lo in range(0, vec.nblocks, run_blocks):
        hi = min(lo + run_blocks, vec.nblocks)
        nb = hi - lo
        start = dev.allocate(nb)
        with dev.scratch(nb + 1):  # in-memory run + write buffer
            recs = []
            for b in range(lo, hi):
                with dev.read_block(vec.start + b) as f:
                    it = iter(f.words)
                    recs.extend(zip(it, it))
            recs.sort(key=lambda rec: bucket_level(rec[1], L))
            for b in range(nb):
                words = []
                for key, p in recs[b * rpb:(b + 1) * rpb]:
                    words.append(key)
                    words.append(p)
                dev.write_block(start + b, words)
        runs.append((start, nb, len(recs)))

    fan = max(2, dev.frame_limit - 2)
    while len(runs) > fan:
        merged = []
        for i in range(0, len(runs), fan):
            merged.append(_merge_runs_to_run(dev, runs[i:i + fan], L, rpb))
        runs = merged
    return _merge_runs_partitioned(dev, runs, L, rpb)


class _RunReader:
    __slots__ = ("dev", "start", "nblocks", "next_block", "queue", "total")

    def __init__(self, dev, start, nblocks, total):
        self.dev = dev
        self.start = start
        self.nblocks = nblocks
        self.next_block = 0
        self.queue = []
        self.total = total

    def refill(self):
        if self.queue or self.next_block >= self.nblocks or self.total == 0:
            return bool(self.queue)
        with self.dev.read_block(self.start + self.next_block) as frame:
            it = iter(frame.words)
            self.queue = list(zip(it, it))
        self.next_block += 1
        self.queue.reverse()
        return True

    def pop(self):
        rec = self.queue.pop()
        self.total -= 1
        return rec


def _merge_stream(dev, runs, L, rpb):
    """Yield records from sorted runs in level order (k-way heap merge)."""
    readers = []
    for start, nb, total in runs:
        r = _RunReader(dev, start, nb, total)
        if total:
            readers.append(r)
    heap = []
    for idx, r in enumerate(readers):
        r.refill()
        if r.queue:
            rec = r.pop()
            heap.append((bucket_level(rec[1], L), idx, rec))
    heapq.heapify(heap)
    while heap:
        lvl, idx, rec = heapq.heappop(heap)
        yield lvl, rec
        r = readers[idx]
        if r.total > 0:
            if not r.queue:
                r.refill()
            nxt = r.pop()
            heapq.heappush(heap, (bucket_level(nxt[1], L), idx, nxt))
    for start, nb, _ in runs:
        dev.free(start, nb)


def _merge_runs_to_run(dev, runs, L, rpb):
    total = sum(t for _, _, t in runs)
    nblocks = -(-total // rpb) if total else 0
    start = dev.allocate(nblocks)
    out_block = 0
    buf = []
    with dev.scratch(1):
        for _, rec in _merge_stream(dev, runs, L, rpb):
            buf.append(rec[0])
            buf.append(rec[1])
            if len(buf) == rpb * RECORD_WORDS:
                dev.write_block(start + out_block, buf)
                out_block += 1
                buf = []
        if buf:
            dev.write_block(start + out_block, buf)
    return (start, nblocks, total)


def _merge_runs_partitioned(dev, runs, L, rpb):
    """Final merge pass writing one contiguous vector per bucket level."""
    parts = {}
    cur_level = None
    cur_addrs = []
    cur_count = 0
    buf = []

    def flush_level():
        nonlocal cur_addrs, cur_count, buf
        if cur_level is None:
            return
        if buf:
            addr = dev.allocate(1)
            dev.write_block(addr, buf)
            cur_addrs.append(addr)
            buf = []
        if cur_count:
            v = EMVector(dev, cur_addrs[0], cur_count)
            parts[cur_level] = v
        cur_addrs = []
        cur_count = 0

    with dev.scratch(1):
        for lvl, rec in _merge_stream(dev, runs, L, rpb):
            if lvl != cur_level:
                flush_level()
                cur_level = lvl
            buf.append(rec[0])
            buf.append(rec[1])
            cur_count += 1
            if len(buf) == rpb * RECORD_WORDS:
                addr = dev.allocate(1)
                dev.write_block(addr, buf)
                cur_addrs.append(addr)
                buf = []
        flush_level()
    return parts


# -- the full engine -----------------------------------------------------------


class EMSampler:
    """Static external-memory subset sampler.

    Buckets are laid out by one external sort; each nonempty bucket gets a
    SetSampler (its first epoch is drawn at build time). Queries draw the
    selected bucket set from the reduced instance, which lives in memory as
    soon as the gate problem fits the budget; per selected bucket, the
    candidate count is a conditional binomial drawn CPU-side, the
    candidates come from the set sampler, and acceptance thinning restores
    the exact law.

    `force_em` keeps even memory-sized inputs on the external path, which
    the distribution tests use to exercise the machinery at oracle scale.
    """

    def __init__(self, records, device: BlockDevice, rng, m0: int = 3,
                 force_em: bool = False):
        self.dev = device
        records = [(k, check_prob(p)) for k, p in records]
        self.n = len(records)
        self.mu = float(sum(p for _, p in records))
        if not force_em and self.n * RECORD_WORDS <= device.M:
            self.base = DynamicSampler(records, m0=m0)
            self.buckets = {}
            self.reduced = None
            self.L = 0
            return
        self.base = None
        L = level_count(self.n)
        self.L = L
        vec = EMVector.build(device, records)
        parts = _sort_partition(device, vec, L)
        vec.free()
        self.buckets = {}
        gates = []
        for l in range(1, L + 1):
            pvec = parts.get(l)
            if pvec is None or pvec.n == 0:
                gates.append((l, 0.0))
                continue
            pbar = 2.0 ** (-l + 1)
            gate = 1.0 if pbar == 1.0 else -math.expm1(
                pvec.n * math.log1p(-pbar)
            )
            self.buckets[l] = (pvec, SetSampler(pvec, rng), pbar)
            gates.append((l, gate))
        # level 0 holds p = 0 records: stored, never sampled
        self.reduced = EMSampler(gates, device, rng, m0=m0)

    @property
    def em_levels(self) -> int:
        """External levels above the in-memory base."""
        if self.base is not None:
            return 0
        return 1 + self.reduced.em_levels

    def query(self, rng, work=None):
        """Exact independent Bernoulli(p(v)) subset of the stored keys."""
        if self.base is not None:
            return self.base.query(rng, work)
        out = []
        for l in self.reduced.query(rng, work):
            pvec, sampler, pbar = self.buckets[l]
            t = pvec.n if pbar == 1.0 else binomial_positive(rng, pvec.n, pbar)
            inv = 1.0 / pbar
            for key, p in sampler.sample_distinct(t, rng, work):
                if p * inv >= 1.0 or rng.uniform01() < p * inv:
                    out.append(key)
        return out
