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
This module implements the taxonomic hierarchy: an immutable rooted
tree of labeled nodes with named levels (Kingdom, Phylum, ..., Species).

The file format is a CSV file where the header names the levels and
each body row lists one full path, root level first:

  kingdom,phylum,class,order,family,genus,species
  Plantae,Tracheophyta,Magnoliopsida,Rosales,Rosaceae,Heteromeles,Heteromeles arbutifolia

Rows may be shorter than the header, in which case the leaf of that
row sits at a shallower level (ragged hierarchy).
"""

import csv
import io
import os

from taxon.errors import (EmptyInput, LevelOutOfRange, ParentConflict,
                          RowArityMismatch, UnknownLeaf)
from taxon.log import info


class Taxonomy:
    "Immutable taxonomic hierarchy"

    def __init__(self, level_names, paths):
        "Create taxonomy from level names and full paths (root first)"

        if len(level_names) == 0:
            raise EmptyInput("Taxonomy must have at least one level.")

        self._level_names = tuple(level_names)
        self._parents = [dict() for _ in level_names]
        self._children = [dict() for _ in level_names]
        self._leaves = {}

        for path in paths:
            self._add_path(tuple(path))

        if not self._leaves:
            raise EmptyInput("Taxonomy has no paths.")

    def _add_path(self, path):
        "Insert path, checking parentage"

        if not 0 < len(path) <= len(self._level_names):
            raise RowArityMismatch("Path %s has %d labels but taxonomy has %d levels."
                                   % (path, len(path), len(self._level_names)))

        for level, label in enumerate(path):
            parent = path[level - 1] if level > 0 else None
            known = self._parents[level].get(label, parent)
            if label in self._parents[level] and known != parent:
                raise ParentConflict('Label "%s" at level %s has parents "%s" and "%s".'
                                     % (label, self._level_names[level], known, parent))
            if label not in self._parents[level]:
                self._parents[level][label] = parent
                self._children[level][label] = []
                if parent is not None:
                    self._children[level - 1][parent].append(label)

        # A leaf label must identify a single node
        leaf = path[-1]
        depth = self._leaves.get(leaf, len(path))
        if depth != len(path):
            raise ParentConflict('Leaf "%s" appears at depths %d and %d.'
                                 % (leaf, depth, len(path)))
        self._leaves[leaf] = depth

    @property
    def level_names(self):
        return self._level_names

    @property
    def num_levels(self):
        return len(self._level_names)

    @property
    def leaves(self):
        "Leaf labels in order of first appearance"
        return tuple(self._leaves)

    @property
    def nodes(self):
        "Set of (label, level, parent) triples"
        return frozenset((label, level, parent)
                         for level, parents in enumerate(self._parents)
                         for label, parent in parents.items())

    def leaf_depth(self, leaf):
        if leaf not in self._leaves:
            raise UnknownLeaf('Unknown leaf "%s".' % leaf)
        return self._leaves[leaf]

    def levels_of(self, label):
        "Levels at which label occurs"
        return [level for level, parents in enumerate(self._parents) if label in parents]

    def parent(self, label, level):
        self._check_level(level)
        if label not in self._parents[level]:
            raise UnknownLeaf('Unknown label "%s" at level %d.' % (label, level))
        return self._parents[level][label]

    def children(self, label, level):
        self._check_level(level)
        if label not in self._children[level]:
            raise UnknownLeaf('Unknown label "%s" at level %d.' % (label, level))
        return tuple(self._children[level][label])

    def node_path(self, label, level):
        "Return path from root to node at given level"
        path = [label]
        while level > 0:
            label = self.parent(label, level)
            level -= 1
            path.append(label)
        self.parent(label, 0)
        return list(reversed(path))

    def ancestor_path(self, leaf):
        "Return ordered list of ancestors (root first, leaf last)"

        # Leaves are identified by label alone
        if leaf in self._leaves:
            return self.node_path(leaf, self._leaves[leaf] - 1)

        # Other nodes must be unambiguous
        levels = self.levels_of(leaf)
        if len(levels) != 1:
            raise UnknownLeaf('Unknown leaf "%s".' % leaf)
        return self.node_path(leaf, levels[0])

    def level_label_set(self, level):
        "Return set of labels at given level"
        self._check_level(level)
        return frozenset(self._parents[level])

    def paths(self):
        "Iterate over leaf paths in order of first appearance"
        for leaf in self._leaves:
            yield self.ancestor_path(leaf)

    def _check_level(self, level):
        if not 0 <= level < len(self._level_names):
            raise LevelOutOfRange("Level %d out of range [0, %d)."
                                  % (level, len(self._level_names)))

    def __eq__(self, other):
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return (self._level_names == other._level_names and
                self.nodes == other.nodes and
                self._leaves == other._leaves)

    def __repr__(self):
        return "Taxonomy(levels=%s, leaves=%d)" % (list(self._level_names), len(self._leaves))


def _open(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), str(source)
    return source, getattr(source, "name", "<stream>")


def load_taxonomy(source):
    "Load taxonomy from CSV file or text stream"

    stream, filename = _open(source)
    try:
        rows = [(n + 1, [cell.strip() for cell in row])
                for n, row in enumerate(csv.reader(stream))]
    finally:
        if stream is not source:
            stream.close()

    # Skip blank lines
    rows = [(n, row) for n, row in rows if any(row)]
    if not rows:
        raise EmptyInput("%s: empty taxonomy file." % filename)

    # Read level names from header
    _, header = rows[0]
    while header and not header[-1]:
        header.pop()
    if not header or not all(header):
        raise EmptyInput("%s:1: header must name every level." % filename)

    # Read paths
    paths = []
    seen = set()
    for n, row in rows[1:]:
        while row and not row[-1]:
            row.pop()
        if len(row) > len(header):
            raise RowArityMismatch("%s:%d: row has %d columns, header has %d."
                                   % (filename, n, len(row), len(header)))
        if not all(row):
            raise RowArityMismatch("%s:%d: empty label inside path." % (filename, n))
        path = tuple(row)
        if path in seen:
            continue
        seen.add(path)
        paths.append(path)

    if not paths:
        raise EmptyInput("%s: taxonomy file has no paths." % filename)

    try:
        taxonomy = Taxonomy(header, paths)
    except (ParentConflict, RowArityMismatch) as e:
        raise type(e)("%s: %s" % (filename, e)) from e

    info("Loaded taxonomy with %d levels and %d leaves from %s.",
         taxonomy.num_levels, len(taxonomy.leaves), filename)

    return taxonomy


def dump_taxonomy(taxonomy, target):
    "Write taxonomy in the format read by load_taxonomy"
    if isinstance(target, (str, os.PathLike)):
        stream = open(target, "w", encoding="utf-8", newline="")
    else:
        stream = target
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(taxonomy.level_names)
        for path in taxonomy.paths():
            writer.writerow(path)
    finally:
        if stream is not target:
            stream.close()


def dumps_taxonomy(taxonomy):
    "Return taxonomy serialized to string"
    stream = io.StringIO()
    dump_taxonomy(taxonomy, stream)
    return stream.getvalue()


def ancestor_path(taxonomy, leaf):
    return taxonomy.ancestor_path(leaf)


def level_label_set(taxonomy, level):
    return taxonomy.level_label_set(level)
