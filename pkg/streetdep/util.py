"""Generally useful, non-performance-critical streetdep functions."""

import hashlib
import time

import joblib
import numpy


def stream_key(seed, *unit):
  """Return the 128-bit Philox key for the stream named by (seed, *unit).

  The key is the first 16 bytes of SHA-256 over the colon-joined decimal or
  text form of seed and unit parts, read as two little-endian uint64 words.
  A reimplementation in another language reproduces every stream from this
  rule alone.
  """
  text = ':'.join(str(part) for part in (int(seed),) + unit)
  digest = hashlib.sha256(text.encode('utf-8')).digest()
  return numpy.frombuffer(digest[:16], dtype='<u8').copy()


def make_rng(seed, *unit):
  """Return a numpy Generator over Philox-4x64 keyed by (seed, *unit).

  Example: make_rng(42, 'lisa', 17) is the permutation stream of grid cell
  17. Streams with different unit names are independent, so parallel workers
  draw the same numbers as a sequential run.
  """
  key = stream_key(seed, *unit)
  return numpy.random.Generator(numpy.random.Philox(key=key))


def file_sha256(path):
  digest = hashlib.sha256()
  with open(path, 'rb') as f:
    while True:
      data = f.read(1 << 16)
      if not data:
        break
      digest.update(data)
  return digest.hexdigest()


def parallel_map(function, items, threads=1):
  """Return [function(item) for item in items], maybe on worker threads.

  The result order is the order of items regardless of threads, and
  threads <= 1 runs in the caller's thread.
  """
  items = list(items)
  if threads <= 1 or len(items) <= 1:
    return [function(item) for item in items]
  return joblib.Parallel(n_jobs=threads, prefer='threads')(
      joblib.delayed(function)(item) for item in items)


class Stopwatch(object):
  """A context manager measuring wall time.

  Example:

    with Stopwatch() as sw:
      ...
    logging.info('took %.3fs' % sw.elapsed)
  """

  __slots__ = ['start_at', 'elapsed']

  def __init__(self):
    self.start_at = None
    self.elapsed = 0.0

  def __enter__(self):
    self.start_at = time.time()
    return self

  def __exit__(self, *args):
    self.elapsed = time.time() - self.start_at
