# Copyright 2025 The Taxon developers
#
# This file is part of Taxon. Taxon is free software: you can
# redistribute it and/or modify it under the terms of the GNU General
# Public License as published by the Free Software Foundation, either
# version 3 of the License, or (at your option) any later version.
#
# Taxon is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY
# or FITNESS FOR A PARTICULAR PURPOSE. See the GNU General Public
# License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Taxon. If not, see <https://www.gnu.org/licenses/>.

"""
This module stores precomputed embeddings (label texts and images) and
implements cosine similarity search over them. The embeddings
themselves are computed elsewhere, typically with a SigLIP-style
dual encoder, and read from JSONL files with one {"key", "vec"} object
per line.
"""

import json
import os

import numpy

from taxon.errors import ConfigError, DimMismatch, EmptyInput, UnknownKey
from taxon.log import info

# Vectors further than this from unit norm are rejected
norm_tolerance = 1e-3


def _unit(key, vector, where=""):
    "Return vector normalized to unit length, or raise"
    norm = numpy.linalg.norm(vector)
    if not numpy.isfinite(norm) or abs(norm - 1.0) > norm_tolerance:
        raise ConfigError("%sEmbedding for \"%s\" has norm %.6g, expected 1."
                          % (where, key, norm))
    return vector / norm


class EmbeddingTable:
    "Immutable map from key (label text or image reference) to unit vector"

    def __init__(self, entries):
        if not entries:
            raise EmptyInput("Embedding table is empty.")

        self._vectors = {}
        self._dim = None
        for key, vector in entries.items():
            vector = numpy.asarray(vector, dtype=numpy.float64)
            if vector.ndim != 1 or vector.size == 0:
                raise DimMismatch('Embedding for "%s" is not a vector.' % key)
            if self._dim is None:
                self._dim = vector.size
            elif vector.size != self._dim:
                raise DimMismatch('Embedding for "%s" has dimension %d, expected %d.'
                                  % (key, vector.size, self._dim))
            vector = _unit(key, vector)
            vector.setflags(write=False)
            self._vectors[key] = vector

    @property
    def dim(self):
        return self._dim

    def keys(self):
        return self._vectors.keys()

    def __contains__(self, key):
        return key in self._vectors

    def __len__(self):
        return len(self._vectors)

    def __getitem__(self, key):
        try:
            return self._vectors[key]
        except KeyError:
            raise UnknownKey('No embedding for "%s".' % key) from None

    def matrix(self, keys):
        "Return embeddings for keys as rows of a matrix"
        return numpy.array([self[key] for key in keys])


def load_embeddings(source):
    "Load embedding table from JSONL file or stream"

    if isinstance(source, (str, os.PathLike)):
        stream = open(source, "r", encoding="utf-8")
        filename = str(source)
    else:
        stream = source
        filename = getattr(source, "name", "<stream>")

    entries = {}
    try:
        for n, line in enumerate(stream):
            if not line.strip():
                continue
            where = "%s:%d: " % (filename, n + 1)
            try:
                item = json.loads(line)
                key, vector = item["key"], item["vec"]
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(where + "malformed embedding line (%s)." % e) from e
            if key in entries:
                raise ConfigError(where + 'duplicate embedding key "%s".' % key)
            vector = numpy.asarray(vector, dtype=numpy.float64)
            if entries and vector.size != len(next(iter(entries.values()))):
                raise DimMismatch(where + 'embedding for "%s" has dimension %d.'
                                  % (key, vector.size))
            entries[key] = _unit(key, vector, where)
    finally:
        if stream is not source:
            stream.close()

    if not entries:
        raise EmptyInput("%s: no embeddings." % filename)

    table = EmbeddingTable(entries)
    info("Loaded %d embeddings of dimension %d from %s.", len(table), table.dim, filename)

    return table


def save_embeddings(table, target):
    "Write embedding table as JSONL"
    with open(target, "w", encoding="utf-8") as f:
        for key in table.keys():
            f.write(json.dumps({"key": key, "vec": table[key].tolist()}) + "\n")


def cosine_topk(table, query, candidates, k):
    """Return top min(k, len(candidates)) candidate keys by descending
    cosine similarity to query, as (key, similarity) pairs. Ties are
    broken by ascending key."""

    query = numpy.asarray(query, dtype=numpy.float64)
    if query.ndim != 1 or query.size != table.dim:
        raise DimMismatch("Query has shape %s, table dimension is %d."
                          % (query.shape, table.dim))
    if not candidates:
        raise EmptyInput("No candidates for similarity search.")
    if k < 1:
        raise ConfigError("k must be positive (got %d)." % k)

    norm = numpy.linalg.norm(query)
    if norm == 0.0:
        raise DimMismatch("Query vector is zero.")

    # Stored vectors have unit norm
    keys = sorted(candidates)
    similarities = table.matrix(keys) @ (query / norm)

    ranked = sorted(zip(keys, similarities.tolist()), key=lambda ks: (-ks[1], ks[0]))

    return ranked[:k]
