"""In-process map/shuffle/reduce execution core.

Jobs follow the classic contract: every input record is handed to exactly
one mapper invocation together with a read-only broadcast payload; all
intermediate values that share a key are handed to exactly one reducer
invocation. Reducer inputs always arrive in a canonical order (global
input record order, then emission order within a record), so job output
is a pure function of the input and is bit-identical at any worker count.

Worker parallelism uses forked processes: mapper/reducer callables and the
broadcast payload are inherited by the children at fork time, and only
record data crosses process boundaries. Map workers pre-partition their
emissions into one pickled bucket per reduce worker so the parent merely
relays opaque blobs.
"""

import pickle
import time
import zlib
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Callable, NamedTuple

from .errors import ConfigError, JobError


class Record(NamedTuple):
    key: bytes
    value: bytes


MapperFn = Callable[[Record, bytes, dict], list]
ReducerFn = Callable[[bytes, list, dict], Record]


@dataclass(frozen=True)
class JobSpec:
    """One map/reduce job: input records, broadcast payload (the
    distributed-cache analog, typically serialized weights), the names of
    a registered mapper/reducer pair, a worker count and a flat string
    config map."""

    input: list
    broadcast: bytes
    mapper_id: str
    reducer_id: str
    workers: int
    config: dict = field(default_factory=dict)


@dataclass
class JobMetrics:
    map_tasks: int
    reduce_keys: int
    wall_time: float
    per_phase_time: tuple  # (map, shuffle, reduce) seconds


@dataclass
class JobResult:
    output: list  # Records, sorted by key, one per reduce key
    metrics: JobMetrics


def partition(records: list, workers: int) -> list:
    """Split records into `workers` contiguous partitions whose sizes
    differ by at most one; concatenating them reproduces the input."""
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    n = len(records)
    base, extra = divmod(n, workers)
    parts = []
    start = 0
    for i in range(workers):
        size = base + (1 if i < extra else 0)
        parts.append(records[start:start + size])
        start += size
    return parts


# Context installed in each forked worker by the pool initializer.
_CTX = None


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def _run_map_task(task):
    """Run the mapper over one partition, bucketing emissions by reduce
    worker. Returns one pickled [(key, value), ...] blob per bucket."""
    start_index, records = task
    mapper, broadcast, config, n_buckets = (
        _CTX["mapper"], _CTX["broadcast"], _CTX["config"], _CTX["buckets"])
    buckets = [[] for _ in range(n_buckets)]
    crc = zlib.crc32
    for offset, rec in enumerate(records):
        try:
            emitted = mapper(rec, broadcast, config)
        except Exception as exc:
            raise JobError(
                f"mapper {_CTX['mapper_id']!r} failed on record "
                f"{start_index + offset}: {exc}") from exc
        for out in emitted:
            buckets[crc(out[0]) % n_buckets].append(out)
    return [pickle.dumps(b, protocol=pickle.HIGHEST_PROTOCOL) for b in buckets]


def _run_reduce_task(blobs):
    """Group one bucket's records (map-task order is canonical order) and
    reduce each key."""
    reducer, config = _CTX["reducer"], _CTX["config"]
    groups = {}
    for blob in blobs:
        for key, value in pickle.loads(blob):
            g = groups.get(key)
            if g is None:
                groups[key] = [value]
            else:
                g.append(value)
    return [reducer(key, values, config) for key, values in groups.items()]


class MapReduceEngine:
    """Registry of mapper/reducer callables plus the job executor.

    Mapper and reducer functions must be pure with respect to their
    inputs; all parallelism lives here. run_job is blocking and safe to
    call concurrently for independent jobs.
    """

    def __init__(self):
        self._mappers = {}
        self._reducers = {}

    def register_mapper(self, mapper_id: str, fn: MapperFn,
                        required_config: tuple = ()) -> None:
        if mapper_id in self._mappers:
            raise ConfigError(f"mapper id {mapper_id!r} already registered")
        self._mappers[mapper_id] = (fn, tuple(required_config))

    def register_reducer(self, reducer_id: str, fn: ReducerFn) -> None:
        if reducer_id in self._reducers:
            raise ConfigError(f"reducer id {reducer_id!r} already registered")
        self._reducers[reducer_id] = fn

    def _validate(self, spec: JobSpec):
        if spec.mapper_id not in self._mappers:
            raise ConfigError(f"unknown mapper id {spec.mapper_id!r}")
        if spec.reducer_id not in self._reducers:
            raise ConfigError(f"unknown reducer id {spec.reducer_id!r}")
        if spec.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {spec.workers}")
        mapper, required = self._mappers[spec.mapper_id]
        missing = [k for k in required if k not in spec.config]
        if missing:
            raise ConfigError(
                f"mapper {spec.mapper_id!r} requires config keys {missing}")
        for i, rec in enumerate(spec.input):
            if not (isinstance(rec[0], bytes) and isinstance(rec[1], bytes)):
                raise ConfigError(f"input record {i} is not a bytes key/value pair")
        return mapper, self._reducers[spec.reducer_id]

    def run_job(self, spec: JobSpec) -> JobResult:
        mapper, reducer = self._validate(spec)
        t0 = time.perf_counter()
        if spec.workers == 1 or len(spec.input) <= 1:
            output, phases = self._run_serial(spec, mapper, reducer)
        else:
            output, phases = self._run_parallel(spec, mapper, reducer)
        wall = time.perf_counter() - t0
        metrics = JobMetrics(
            map_tasks=len(spec.input),
            reduce_keys=len(output),
            wall_time=wall,
            per_phase_time=phases,
        )
        return JobResult(output=output, metrics=metrics)

    def _run_serial(self, spec, mapper, reducer):
        t0 = time.perf_counter()
        emitted = []
        for index, rec in enumerate(spec.input):
            try:
                emitted.append(mapper(rec, spec.broadcast, spec.config))
            except Exception as exc:
                raise JobError(
                    f"mapper {spec.mapper_id!r} failed on record {index}: "
                    f"{exc}") from exc
        t1 = time.perf_counter()
        groups = {}
        for out in emitted:
            for key, value in out:
                g = groups.get(key)
                if g is None:
                    groups[key] = [value]
                else:
                    g.append(value)
        t2 = time.perf_counter()
        output = [reducer(key, values, spec.config)
                  for key, values in groups.items()]
        output.sort(key=lambda r: r[0])
        t3 = time.perf_counter()
        return output, (t1 - t0, t2 - t1, t3 - t2)

    def _run_parallel(self, spec, mapper, reducer):
        parts = partition(spec.input, spec.workers)
        tasks = []
        start = 0
        for part in parts:
            tasks.append((start, part))
            start += len(part)
        ctx = {
            "mapper": mapper,
            "mapper_id": spec.mapper_id,
            "reducer": reducer,
            "broadcast": spec.broadcast,
            "config": spec.config,
            "buckets": spec.workers,
        }
        # Fork context: callables and broadcast are inherited at fork time,
        # only record data is pickled across the pipes.
        mp = get_context("fork")
        with mp.Pool(spec.workers, initializer=_init_worker,
                     initargs=(ctx,)) as pool:
            t0 = time.perf_counter()
            per_task_buckets = pool.map(_run_map_task, tasks, chunksize=1)
            t1 = time.perf_counter()
            # Shuffle: bucket b receives one blob per map task, task order
            # first so reducers see values in global input record order.
            bucket_blobs = [[task_buckets[b] for task_buckets in per_task_buckets]
                            for b in range(spec.workers)]
            t2 = time.perf_counter()
            reduced = pool.map(_run_reduce_task, bucket_blobs, chunksize=1)
            output = [rec for chunk in reduced for rec in chunk]
            output.sort(key=lambda r: r[0])
            t3 = time.perf_counter()
        return output, (t1 - t0, t2 - t1, t3 - t2)
