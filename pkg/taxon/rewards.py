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
Rule-based rewards for GRPO training. The total reward of a response
is the sum of two binary rewards:

  format    1 if the response is <think>...</think><answer>...</answer>
  accuracy  1 if the answer is correct (exact name at stage 1, correct
            option letter at stage 2)
"""

from taxon.errors import ConfigError
from taxon.modelio import extract_choice, extract_name, names_match, parse_tagged


def format_reward(raw):
    return 1 if parse_tagged(raw).well_formed else 0


def accuracy_reward(parsed, ground_truth, stage, options=None):
    """Accuracy reward of parsed response. At stage 2 the ground truth
    may be given as option letter or as option label."""

    if stage == 1:
        return 1 if names_match(extract_name(parsed.answer), ground_truth) else 0

    if stage != 2:
        raise ConfigError("Stage must be 1 or 2 (got %s)." % stage)
    if not options:
        raise ConfigError("Stage 2 accuracy reward needs options.")

    # Resolve ground truth letter
    letters = [letter for letter, _ in options]
    if ground_truth in letters:
        truth = ground_truth
    else:
        matching = [letter for letter, label in options if names_match(ground_truth, label)]
        if not matching:
            raise ConfigError('Ground truth "%s" is not among the options.' % ground_truth)
        truth = matching[0]

    return 1 if extract_choice(parsed.answer, options) == truth else 0


def total_reward(raw, ground_truth, stage, options=None):
    parsed = parse_tagged(raw)
    return format_reward(raw) + accuracy_reward(parsed, ground_truth, stage, options)
