"""Hierarchical navigable small-world graph for approximate nearest neighbors.

Classic HNSW (Malkov & Yashunin) over unit-norm vectors: a stack of
progressively sparser proximity graphs, greedy descent from the top layer,
then a beam search on layer 0. Distance is 1 - dot product, which for
unit-norm vectors equals cosine distance.

The graph stores adjacency only; vectors live in the caller's row matrix and
are passed into every call so the index keeps a single contiguous store.
Node ids are row indices into that matrix. Deleted nodes stay in the graph
as routing waypoints and are filtered from results by the caller's mask.

Performance notes, since this is pure Python:
- inserts precompute one dense query-to-all distance row (numpy) while the
  graph is below _DENSE_LIMIT nodes, so the beam loop does list lookups
  instead of per-expansion matvecs; searches stay lazy/batched.
- back-link lists shrink with the same diversity heuristic as forward links
  but amortized: a list may exceed its cap by half before it is pruned.
"""

from __future__ import annotations

import heapq
import math
import random

import numpy as np

DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 64

# above this node count the dense per-insert distance row stops paying off
_DENSE_LIMIT = 32768


class HnswGraph:
    def __init__(
        self,
        m: int = DEFAULT_M,
        ef_construction: int = DEFAULT_EF_CONSTRUCTION,
        seed: int = 2025,
    ) -> None:
        if m < 2:
            raise ValueError("m must be at least 2")
        if ef_construction < m:
            raise ValueError("ef_construction must be >= m")
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self._ml = 1.0 / math.log(m)
        self._rng = random.Random(seed)
        # adjacency per layer: layer -> {node_id: [neighbor ids]}
        self._layers: list[dict[int, list[int]]] = []
        self._entry: int | None = None
        self._max_level = -1
        # epoch-tagged visited set; plain list because element access is hot
        self._visit_tag: list[int] = []
        self._epoch = 0

    def __len__(self) -> int:
        return len(self._layers[0]) if self._layers else 0

    def _random_level(self) -> int:
        return int(-math.log(self._rng.random() or 1e-300) * self._ml)

    def _ensure_tags(self, n: int) -> None:
        if n > len(self._visit_tag):
            self._visit_tag.extend([0] * (n - len(self._visit_tag)))

    def _search_layer_dense(
        self,
        dist_row: list[float],
        entry: list[tuple[float, int]],
        ef: int,
        level: int,
    ) -> list[tuple[float, int]]:
        """Beam search on one layer against a precomputed distance row."""
        adjacency = self._layers[level]
        self._epoch += 1
        epoch = self._epoch
        tags = self._visit_tag
        for _, node in entry:
            tags[node] = epoch
        candidates = list(entry)
        heapq.heapify(candidates)
        results = [(-d, i) for d, i in entry]
        heapq.heapify(results)
        push = heapq.heappush
        replace = heapq.heapreplace
        worst = -results[0][0]
        full = len(results) >= ef
        while candidates:
            dist, node = heapq.heappop(candidates)
            if dist > worst and full:
                break
            for n in adjacency.get(node, ()):
                if tags[n] != epoch:
                    tags[n] = epoch
                    d = dist_row[n]
                    if full:
                        if d < worst:
                            push(candidates, (d, n))
                            replace(results, (-d, n))
                            worst = -results[0][0]
                    else:
                        push(candidates, (d, n))
                        push(results, (-d, n))
                        if len(results) >= ef:
                            full = True
                        worst = -results[0][0]
        out = [(-nd, i) for nd, i in results]
        out.sort()
        return out

    def _search_layer_lazy(
        self,
        matrix: np.ndarray,
        query: np.ndarray,
        entry: list[tuple[float, int]],
        ef: int,
        level: int,
    ) -> list[tuple[float, int]]:
        """Beam search computing neighbor distances in batches on demand."""
        adjacency = self._layers[level]
        self._epoch += 1
        epoch = self._epoch
        tags = self._visit_tag
        for _, node in entry:
            tags[node] = epoch
        candidates = list(entry)
        heapq.heapify(candidates)
        results = [(-d, i) for d, i in entry]
        heapq.heapify(results)
        while candidates:
            dist, node = heapq.heappop(candidates)
            if dist > -results[0][0] and len(results) >= ef:
                break
            fresh = []
            for n in adjacency.get(node, ()):
                if tags[n] != epoch:
                    tags[n] = epoch
                    fresh.append(n)
            if not fresh:
                continue
            dists = (1.0 - matrix[fresh] @ query).tolist()
            full = len(results) >= ef
            worst = -results[0][0]
            for n, d in zip(fresh, dists):
                if full:
                    if d < worst:
                        heapq.heappush(candidates, (d, n))
                        heapq.heapreplace(results, (-d, n))
                        worst = -results[0][0]
                else:
                    heapq.heappush(candidates, (d, n))
                    heapq.heappush(results, (-d, n))
                    full = len(results) >= ef
                    worst = -results[0][0]
        out = [(-nd, i) for nd, i in results]
        out.sort()
        return out

    def _select_neighbors(
        self,
        matrix: np.ndarray,
        candidates: list[tuple[float, int]],
        count: int,
    ) -> list[int]:
        """Diversity-aware neighbor selection (the heuristic variant).

        A candidate is kept only if it is closer to the query point than to
        every already-selected neighbor; pruned candidates backfill remaining
        slots so nodes keep `count` links when possible. To bound the cost of
        the pairwise-distance table the heuristic runs over the nearest
        4*count candidates; anything beyond backfills nearest-first.
        """
        if len(candidates) <= count:
            return [i for _, i in candidates]
        ordered = sorted(candidates)
        pool = ordered[: 4 * count]
        ids = [i for _, i in pool]
        cross = (matrix[ids] @ np.ascontiguousarray(matrix[ids]).T).tolist()
        selected: list[int] = []  # positions into pool
        pruned: list[int] = []
        for pos, (dist, _) in enumerate(pool):
            if len(selected) >= count:
                break
            if not selected:
                selected.append(pos)
                continue
            row = cross[pos]
            keep = True
            for s in selected:
                if 1.0 - row[s] <= dist:
                    keep = False
                    break
            if keep:
                selected.append(pos)
            else:
                pruned.append(pos)
        out = [ids[pos] for pos in selected]
        if len(out) < count:
            for pos in pruned:
                if len(out) >= count:
                    break
                out.append(ids[pos])
            for _, cand in ordered[4 * count :]:
                if len(out) >= count:
                    break
                out.append(cand)
        return out

    def insert(self, matrix: np.ndarray, node_id: int) -> None:
        """Insert the vector at matrix[node_id] into the graph."""
        self._ensure_tags(matrix.shape[0])
        level = self._random_level()
        for _ in range(len(self._layers), level + 1):
            self._layers.append({})
        if self._entry is None:
            for lc in range(level + 1):
                self._layers[lc][node_id] = []
            self._entry = node_id
            self._max_level = level
            return

        query = matrix[node_id]
        old_max = self._max_level
        n = matrix.shape[0]
        dense = n <= _DENSE_LIMIT
        if dense:
            dist_row = (1.0 - matrix @ query).tolist()
            entry_dist = dist_row[self._entry]
        else:
            dist_row = []
            entry_dist = 1.0 - float(matrix[self._entry] @ query)
        ep = [(entry_dist, self._entry)]
        for lc in range(old_max, level, -1):
            if dense:
                ep = self._search_layer_dense(dist_row, ep, 1, lc)[:1]
            else:
                ep = self._search_layer_lazy(matrix, query, ep, 1, lc)[:1]
        for lc in range(min(level, old_max), -1, -1):
            if dense:
                candidates = self._search_layer_dense(
                    dist_row, ep, self.ef_construction, lc
                )
            else:
                candidates = self._search_layer_lazy(
                    matrix, query, ep, self.ef_construction, lc
                )
            cap = self.m0 if lc == 0 else self.m
            neighbors = self._select_neighbors(matrix, candidates, cap)
            self._layers[lc][node_id] = list(neighbors)
            slack = cap + cap // 2
            for neighbor in neighbors:
                links = self._layers[lc][neighbor]
                links.append(node_id)
                if len(links) > slack:
                    base = matrix[neighbor]
                    link_dists = (1.0 - matrix[links] @ base).tolist()
                    self._layers[lc][neighbor] = self._select_neighbors(
                        matrix, list(zip(link_dists, links)), cap
                    )
            ep = candidates
        if level > old_max:
            # the new node is the sole resident of the fresh upper layers
            for lc in range(old_max + 1, level + 1):
                self._layers[lc][node_id] = []
            self._max_level = level
            self._entry = node_id

    def search(
        self,
        matrix: np.ndarray,
        query: np.ndarray,
        k: int,
        ef_search: int = DEFAULT_EF_SEARCH,
        exclude: np.ndarray | None = None,
    ) -> list[tuple[float, int]]:
        """Approximate top-k as (similarity, node_id), best first.

        `exclude` is a boolean mask over node ids (True = drop from results);
        excluded nodes still participate in routing. Ties break on ascending
        node id.
        """
        if self._entry is None:
            return []
        self._ensure_tags(matrix.shape[0])
        entry_dist = 1.0 - float(matrix[self._entry] @ query)
        ep = [(entry_dist, self._entry)]
        for lc in range(self._max_level, 0, -1):
            ep = self._search_layer_lazy(matrix, query, ep, 1, lc)[:1]
        ef = max(ef_search, k)
        if exclude is not None and exclude.any():
            # leave headroom so tombstones cannot starve the result set
            ef += int(exclude.sum())
        found = self._search_layer_lazy(matrix, query, ep, ef, 0)
        hits: list[tuple[float, int]] = []
        for dist, node in found:
            if exclude is not None and node < exclude.shape[0] and exclude[node]:
                continue
            hits.append((dist, node))
        hits.sort(key=lambda pair: (pair[0], pair[1]))
        return [(1.0 - dist, node) for dist, node in hits[:k]]
