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
Exceptions raised by Taxon. Everything derives from TaxonError so that
the command-line driver can report any library failure uniformly.
"""


class TaxonError(RuntimeError):
    "Base class for all Taxon errors"


class ConfigError(TaxonError):
    "Invalid parameters, files or command-line options"


# Taxonomy

class EmptyInput(TaxonError):
    pass


class RowArityMismatch(TaxonError):
    pass


class ParentConflict(TaxonError):
    pass


class UnknownLeaf(TaxonError):
    pass


class LevelOutOfRange(TaxonError):
    pass


# Dataset

class DimMismatch(TaxonError):
    pass


class UnknownKey(TaxonError):
    pass


class MissingEmbedding(TaxonError):
    pass


class DuplicateLeaf(TaxonError):
    pass


class UnresolvablePath(TaxonError):
    pass


# Model backends

class TransportError(TaxonError):
    "Retryable failure talking to an endpoint"


class ProtocolError(TaxonError):
    "Malformed response from an endpoint (not retried)"


class AuthRejected(TaxonError):
    "Endpoint rejected the credentials (not retried)"


class BackendFailure(TaxonError):
    "Backend call failed after all retries"


# Evaluation and metrics

class PartialRun(TaxonError):
    "Some images failed during an evaluation run"

    def __init__(self, failures, total):
        TaxonError.__init__(self, "%d of %d images failed" % (failures, total))
        self.failures = failures
        self.total = total


class EmptyRecords(TaxonError):
    pass


# GRPO

class GroupTooSmall(TaxonError):
    pass


class ZeroProbability(TaxonError):
    pass


class Divergence(TaxonError):
    "Training produced non-finite parameters"
