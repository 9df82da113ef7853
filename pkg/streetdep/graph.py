"""Street graph construction and ego-graph centrality.

Segment endpoints closer than the snap tolerance are merged into one node,
then each segment becomes an undirected edge weighted by its length. The
centrality of a segment is computed at its midpoint: the segment is split
into two half-length edges meeting at a temporary node, and degree,
closeness, betweenness and depth of that node are evaluated on its
ego-graph (nodes within radius_m network meters).

Example:

  from streetdep import graph, schema
  segments = schema.read_segments('segments.geojson')
  g = graph.build_graph(segments, snap_tolerance_m=0.5)
  result = graph.centrality(g, radius_m=800)
  graph.write_centrality('centrality.csv', result)
"""

import collections
import logging

import networkx
import numpy
import pandas
import scipy.sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from streetdep import schema
from streetdep import util
from streetdep.errors import InputError
from streetdep.errors import NodeLookupError

DEFAULT_SNAP_TOLERANCE_M = 0.5

DEFAULT_RADIUS_M = 800.0

# Relative tolerance deciding whether a path length equals a shortest one.
TIE_RTOL = 1e-10

Edge = collections.namedtuple('Edge', 'u v weight_m segment')


class StreetGraph(object):
  """Undirected weighted street graph over snapped segments.

  nodes: node id -> (x, y); edges: segment id -> Edge; adjacency: node id ->
  list of (neighbor, segment id). Parallel segments between the same two
  nodes are all kept as edges, but distances use the shortest one.
  """

  __slots__ = ['nodes', 'edges', 'adjacency', 'segments', 'segment_index',
               '_graph', '_matrix']

  def __init__(self, nodes, segments):
    self.nodes = collections.OrderedDict(nodes)
    self.segments = tuple(segments)
    self.segment_index = dict(
        (segment.id, i) for i, segment in enumerate(self.segments))
    self.edges = collections.OrderedDict()
    self.adjacency = collections.OrderedDict((node, []) for node in self.nodes)
    graph = networkx.Graph()
    graph.add_nodes_from(self.nodes)
    for segment in self.segments:
      u, v = segment.from_node, segment.to_node
      self.edges[segment.id] = Edge(u, v, segment.length_m, segment)
      self.adjacency[u].append((v, segment.id))
      if u != v:
        self.adjacency[v].append((u, segment.id))
        data = graph.get_edge_data(u, v)
        if data is None or segment.length_m < data['weight']:
          graph.add_edge(u, v, weight=segment.length_m, segment=segment.id)
    self._graph = graph
    n = len(self.nodes)
    rows, cols, weights = [], [], []
    for u, v, data in graph.edges(data=True):
      rows.extend((u, v))
      cols.extend((v, u))
      weights.extend((data['weight'], data['weight']))
    self._matrix = scipy.sparse.csr_matrix(
        (weights, (rows, cols)), shape=(n, n))

  def __repr__(self):
    return 'StreetGraph(%d nodes, %d edges)' % (len(self.nodes),
                                                len(self.edges))

  @property
  def node_count(self):
    return len(self.nodes)

  @property
  def edge_count(self):
    return len(self.edges)

  def to_networkx(self):
    """Return the simple graph used for distances (shorter parallel edge)."""
    return self._graph

  def components(self):
    """Return node sets of connected components, largest first."""
    return sorted(networkx.connected_components(self._graph),
                  key=lambda c: (-len(c), min(c)))

  def segment_adjacency(self):
    """Return a sparse segment x segment 0/1 matrix of segments sharing a node."""
    n = len(self.segments)
    rows = numpy.repeat(numpy.arange(n), 2)
    cols = numpy.array([[s.from_node, s.to_node] for s in self.segments],
                       dtype=int).ravel() if n else numpy.zeros(0, dtype=int)
    incidence = scipy.sparse.csr_matrix(
        (numpy.ones(2 * n), (rows, cols)), shape=(n, len(self.nodes)))
    shared = (incidence @ incidence.T).tocsr()
    shared.setdiag(0)
    shared.eliminate_zeros()
    shared.data[:] = 1.0
    return shared


def build_graph(segments, snap_tolerance_m=DEFAULT_SNAP_TOLERANCE_M):
  """Snap segment endpoints into nodes and return a StreetGraph.

  Endpoints within snap_tolerance_m of each other are merged transitively
  (single linkage). A merged node takes the coordinate of its endpoint with
  the lowest index, with endpoints indexed as start, end of segment 0, then
  of segment 1 and so on. Node ids are 0, 1, ... in that order as well.
  """
  if snap_tolerance_m < 0:
    raise InputError('snap_tolerance_m must be >= 0, got %r' %
                     snap_tolerance_m)
  seen = set()
  for segment in segments:
    if segment.id in seen:
      raise InputError('duplicate segment id %s' % segment.id)
    seen.add(segment.id)
  n = len(segments)
  if not n:
    return StreetGraph({}, [])
  endpoints = numpy.array(
      [(s.coords[0], s.coords[-1]) for s in segments]).reshape(2 * n, 2)
  pairs = cKDTree(endpoints).query_pairs(snap_tolerance_m,
                                         output_type='ndarray')
  links = scipy.sparse.csr_matrix(
      (numpy.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
      shape=(2 * n, 2 * n))
  _, labels = csgraph.connected_components(links, directed=False)
  _, first = numpy.unique(labels, return_index=True)
  order = numpy.argsort(first, kind='stable')
  rank = numpy.empty_like(order)
  rank[order] = numpy.arange(len(order))
  node_of = rank[labels]
  nodes = collections.OrderedDict(
      (int(i), (float(endpoints[first[label], 0]),
                float(endpoints[first[label], 1])))
      for i, label in enumerate(order))
  snapped = []
  for i, segment in enumerate(segments):
    u, v = int(node_of[2 * i]), int(node_of[2 * i + 1])
    if u == v and not segment.is_loop:
      raise InputError(
          'segment %s: both endpoints snap to node %d; flag it as a loop or '
          'lower snap_tolerance_m' % (segment.id, u))
    snapped.append(segment.with_nodes(u, v))
  graph = StreetGraph(nodes, snapped)
  components = graph.components()
  if len(components) > 1:
    logging.warning(
        'street graph has %d components; outside the largest (%d nodes): %s' %
        (len(components), len(components[0]),
         ', '.join('%d nodes at node %d' % (len(c), min(c))
                   for c in components[1:])))
  logging.info('built street graph: %d nodes, %d edges' %
               (graph.node_count, graph.edge_count))
  return graph


def ego_subgraph(graph, origin_node, radius_m):
  """Return the networkx subgraph of nodes within radius_m of origin_node.

  Each node carries its network distance from the origin as the
  `distance' attribute.
  """
  if not radius_m > 0:
    raise ValueError('radius_m must be > 0, got %r' % radius_m)
  if origin_node not in graph.nodes:
    raise NodeLookupError('unknown node %r' % (origin_node,))
  g = graph.to_networkx()
  distances = networkx.single_source_dijkstra_path_length(
      g, origin_node, cutoff=radius_m, weight='weight')
  ego = g.subgraph(distances).copy()
  networkx.set_node_attributes(ego, distances, 'distance')
  return ego


class CentralityResult(object):
  """Per-segment centrality vectors computed within radius_m."""

  METRICS = ('deg', 'clo', 'betw', 'depth')

  def __init__(self, segment_ids, deg, clo, betw, depth, radius_m):
    self.segment_ids = tuple(segment_ids)
    self.deg = numpy.asarray(deg, dtype=float)
    self.clo = numpy.asarray(clo, dtype=float)
    self.betw = numpy.asarray(betw, dtype=float)
    self.depth = numpy.asarray(depth, dtype=float)
    self.radius_m = radius_m

  def column_name(self, metric):
    return 'C_%s_%gm' % (metric, self.radius_m)

  def as_columns(self):
    return collections.OrderedDict(
        (self.column_name(metric), getattr(self, metric))
        for metric in self.METRICS)


def _path_counts(weights, distances):
  """Return sigma[s, t], the number of shortest s-t paths.

  weights is the dense edge weight matrix (inf: no edge), distances the
  all-pairs shortest path matrix. The shortest-path DAG of every source is
  built at once; counts propagate one hop per iteration.
  """
  k = len(weights)
  scale = numpy.where(numpy.isfinite(distances), distances, 0.0)
  with numpy.errstate(invalid='ignore'):
    # dag[s, a, b]: edge a -> b lies on a shortest path from s.
    reach = distances[:, :, None] + weights[None, :, :]
    dag = (numpy.abs(reach - distances[:, None, :]) <=
           TIE_RTOL * (1.0 + scale[:, None, :]))
  dag &= numpy.isfinite(weights)[None, :, :]
  dag = dag.astype(float)
  eye = numpy.eye(k)
  sigma = eye.copy()
  for _ in range(k):
    updated = eye + numpy.matmul(sigma[:, None, :], dag)[:, 0, :]
    if numpy.array_equal(updated, sigma):
      break
    sigma = updated
  return sigma


def _ego_metrics(weights, origin):
  """Return (degree, closeness, betweenness, depth) of origin.

  weights is the dense weight matrix of the ego-graph (inf: no edge),
  which must contain every node within the radius and nothing else.
  """
  k = len(weights)
  if k <= 1:
    return 0.0, 0.0, 0.0, 0.0
  others = numpy.arange(k) != origin
  degree = float(numpy.isfinite(weights[origin, others]).sum())
  sparse = csgraph.csgraph_from_dense(weights, null_value=numpy.inf)
  distances = csgraph.shortest_path(sparse, method='D', directed=False)
  total = distances[origin, others].sum()
  closeness = 1.0 / total if total > 0 else 0.0
  depth = float(distances[origin, others].mean())
  sigma = _path_counts(weights, distances)
  via = distances[:, origin][:, None] + distances[origin, :][None, :]
  on_path = numpy.abs(via - distances) <= TIE_RTOL * (1.0 + distances)
  on_path &= others[:, None] & others[None, :]
  on_path &= numpy.triu(numpy.ones((k, k), dtype=bool), 1)
  share = numpy.outer(sigma[:, origin], sigma[origin, :])
  betweenness = float((share[on_path] / sigma[on_path]).sum())
  return degree, closeness, betweenness, depth


def _dense_weights(graph, nodes):
  weights = graph._matrix[nodes][:, nodes].toarray()
  weights[weights == 0] = numpy.inf
  return weights


def node_centrality(graph, node, radius_m=DEFAULT_RADIUS_M):
  """Return (degree, closeness, betweenness, depth) of a graph node."""
  if node not in graph.nodes:
    raise NodeLookupError('unknown node %r' % (node,))
  distances = csgraph.dijkstra(graph._matrix, directed=False, indices=node,
                               limit=radius_m)
  ego = numpy.flatnonzero(distances <= radius_m)
  return _ego_metrics(_dense_weights(graph, ego),
                      int(numpy.searchsorted(ego, node)))


def _segment_centrality(graph, index, radius_m):
  segment = graph.segments[index]
  u, v = segment.from_node, segment.to_node
  half = segment.length_m / 2.0
  if half > radius_m:
    return 0.0, 0.0, 0.0, 0.0
  from_ends = csgraph.dijkstra(graph._matrix, directed=False,
                               indices=[u, v],
                               limit=(radius_m - half) * (1 + TIE_RTOL))
  distances = half + from_ends.min(axis=0)
  ego = numpy.flatnonzero(distances <= radius_m)
  weights = numpy.full((len(ego) + 1, len(ego) + 1), numpy.inf)
  weights[1:, 1:] = _dense_weights(graph, ego)
  iu, iv = numpy.searchsorted(ego, [u, v]) + 1
  if u != v:
    # Split this segment: drop it from the u-v pair, keep any parallel one.
    parallel = [graph.edges[sid].weight_m for _, sid in graph.adjacency[u]
                if sid != segment.id and graph.edges[sid].u in (u, v) and
                graph.edges[sid].v in (u, v) and
                graph.edges[sid].u != graph.edges[sid].v]
    weights[iu, iv] = weights[iv, iu] = min(parallel or [numpy.inf])
  weights[0, iu] = weights[iu, 0] = half
  weights[0, iv] = weights[iv, 0] = half
  return _ego_metrics(weights, 0)


def centrality(graph, radius_m=DEFAULT_RADIUS_M, threads=1):
  """Return the CentralityResult of every segment, at its midpoint node."""
  if not radius_m > 0:
    raise ValueError('radius_m must be > 0, got %r' % radius_m)
  with util.Stopwatch() as sw:
    rows = util.parallel_map(
        lambda i: _segment_centrality(graph, i, radius_m),
        range(len(graph.segments)), threads)
  logging.info('centrality of %d segments within %gm in %.3fs' %
               (len(rows), radius_m, sw.elapsed))
  values = numpy.array(rows, dtype=float).reshape(len(rows), 4)
  return CentralityResult([s.id for s in graph.segments], values[:, 0],
                          values[:, 1], values[:, 2], values[:, 3], radius_m)


def write_centrality(path, result):
  frame = pandas.DataFrame(collections.OrderedDict(
      [('segment_id', list(result.segment_ids))] +
      list(result.as_columns().items())))
  frame.to_csv(path, index=False, float_format=schema.CSV_FLOAT_FORMAT,
               lineterminator='\n')


def write_edges(path, graph):
  frame = pandas.DataFrame(
      [(sid, e.u, e.v, e.weight_m) for sid, e in graph.edges.items()],
      columns=['segment_id', 'from_node', 'to_node', 'length_m'])
  frame.to_csv(path, index=False, float_format=schema.CSV_FLOAT_FORMAT,
               lineterminator='\n')
