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
This module builds the benchmark questions. Each question asks for the
label of an image at one taxonomic level. Multiple-choice questions
use the similar-choice protocol: the three distractors are the labels
at that level whose text embeddings are most similar to the image
embedding. The module also splits species into SFT and RL halves and
exports supervised fine-tuning data.
"""

import csv
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy

from taxon.embeddings import cosine_topk
from taxon.errors import (ConfigError, DuplicateLeaf, LevelOutOfRange,
                          MissingEmbedding, UnknownLeaf, UnresolvablePath)
from taxon.log import info
from taxon.parameters import derive_seed
from taxon.prompts import format_options

# Option letters
LETTERS = "ABCD"

# Number of options of a multiple-choice question
num_options = 4

# Question modes (labels)
question_modes = ("multiple_choice", "open_set")


@dataclass
class Question:
    id: str
    image_ref: str
    level: int
    level_name: str
    mode: str
    leaf: str
    answer: str
    answer_letter: str = None
    options: list = field(default_factory=list)
    distractor_scores: list = field(default_factory=list)
    seed: int = 0

    def text(self):
        "Question text shown to the model"
        return "What is the %s of the organism in the image?" % self.level_name

    def option_label(self, letter):
        for option_letter, label in self.options:
            if option_letter == letter:
                return label
        return None

    def to_dict(self):
        values = asdict(self)
        values["options"] = [list(option) for option in self.options]
        return values

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        values["options"] = [tuple(option) for option in values.get("options", [])]
        return cls(**values)


@dataclass(frozen=True)
class ImageRecord:
    image_ref: str
    leaf: str


def load_images(filename):
    "Read image list (CSV with header image,leaf)"
    images = []
    with open(filename, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["image", "leaf"]:
            raise ConfigError('%s:1: expected header "image,leaf".' % filename)
        for n, row in enumerate(reader):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise ConfigError("%s:%d: expected image and leaf." % (filename, n + 2))
            images.append(ImageRecord(row[0].strip(), row[1].strip()))
    info("Loaded %d images from %s.", len(images), filename)
    return images


def build_question(taxonomy, image_ref, image_embedding, level, table, seed, leaf,
                   mode="multiple_choice", label_to_label=False):
    "Build question about image at given level"

    # Get ground truth
    path = taxonomy.ancestor_path(leaf)
    if not 0 <= level < len(path):
        raise LevelOutOfRange("Level %d out of range for %s (depth %d)."
                              % (level, leaf, len(path)))
    answer = path[level]
    question = Question(id="%s:%d" % (image_ref, level),
                        image_ref=image_ref,
                        level=level,
                        level_name=taxonomy.level_names[level],
                        mode=mode,
                        leaf=leaf,
                        answer=answer,
                        seed=seed)

    # Open-set questions have no options
    if mode == "open_set":
        return question
    if mode != "multiple_choice":
        raise ConfigError('Unknown question mode "%s".' % mode)

    # Check that all labels at level have embeddings
    labels = taxonomy.level_label_set(level)
    missing = sorted(label for label in labels if label not in table)
    if missing:
        raise MissingEmbedding("No label embedding for %s at level %s."
                               % (", ".join(missing[:5]), question.level_name))

    # Select distractors most similar to the query
    query = table[answer] if label_to_label else image_embedding
    distractors = []
    candidates = labels - {answer}
    if candidates:
        distractors = cosine_topk(table, query, candidates, num_options - 1)

    # Assign letters by seeded shuffle
    chosen = [answer] + [label for label, _ in distractors]
    order = numpy.random.default_rng(seed).permutation(len(chosen))
    question.options = [(LETTERS[i], chosen[j]) for i, j in enumerate(order)]
    question.answer_letter = LETTERS[int(numpy.flatnonzero(order == 0)[0])]
    question.distractor_scores = [score for _, score in distractors]

    return question


def select_images(images, cap, seed):
    "Keep at most cap images per species, preserving input order"

    by_leaf = {}
    for index, image in enumerate(images):
        by_leaf.setdefault(image.leaf, []).append(index)

    keep = set()
    for leaf, indices in by_leaf.items():
        if len(indices) > cap:
            rng = numpy.random.default_rng(derive_seed(seed, "questions", leaf))
            indices = rng.choice(indices, size=cap, replace=False).tolist()
        keep.update(indices)

    return [image for index, image in enumerate(images) if index in keep]


def build_questions(taxonomy, images, image_table, label_table, seed, cap=10,
                    mode="multiple_choice", label_to_label=False):
    "Build one question per (image, level) pair"

    selected = select_images(images, cap, seed)
    info("Building questions for %d of %d images (at most %d per species).",
         len(selected), len(images), cap)

    questions = []
    for image in selected:
        depth = taxonomy.leaf_depth(image.leaf)

        # Get image embedding
        embedding = None
        if mode == "multiple_choice" and not label_to_label:
            if image.image_ref not in image_table:
                raise MissingEmbedding('No embedding for image "%s".' % image.image_ref)
            embedding = image_table[image.image_ref]

        for level in range(depth):
            qid = "%s:%d" % (image.image_ref, level)
            questions.append(build_question(taxonomy, image.image_ref, embedding, level,
                                            label_table, derive_seed(seed, "shuffle", qid),
                                            image.leaf, mode, label_to_label))

    info("Built %d questions.", len(questions))

    return questions


def group_by_image(questions):
    "Group questions by image, preserving order of first appearance"
    groups = {}
    for question in questions:
        groups.setdefault(question.image_ref, []).append(question)
    for image_ref, group in groups.items():
        leaves = set(q.leaf for q in group)
        if len(leaves) > 1:
            raise ConfigError('Questions for image "%s" disagree on its leaf.' % image_ref)
    return groups


def save_questions(questions, filename, provenance=None):
    "Write questions as JSONL (first line holds provenance, if given)"
    with open(filename, "w", encoding="utf-8") as f:
        if provenance is not None:
            f.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for question in questions:
            f.write(json.dumps(question.to_dict(), ensure_ascii=False) + "\n")


def load_questions(filename):
    questions = []
    with open(filename, "r", encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            try:
                values = json.loads(line)
                if "provenance" in values:
                    continue
                questions.append(Question.from_dict(values))
            except (ValueError, TypeError) as e:
                raise ConfigError("%s:%d: malformed question (%s)." % (filename, n + 1, e)) from e
    info("Loaded %d questions from %s.", len(questions), filename)
    return questions


def split_by_species(leaves, seed):
    """Partition species into two halves (SFT and RL). The halves differ
    in size by at most one and keep the input order."""

    leaves = list(leaves)
    duplicates = sorted(leaf for leaf, count in Counter(leaves).items() if count > 1)
    if duplicates:
        raise DuplicateLeaf("Duplicate species: %s." % ", ".join(duplicates[:5]))

    rng = numpy.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(len(leaves))
    first = set(order[:(len(leaves) + 1) // 2].tolist())

    sft_half = [leaf for i, leaf in enumerate(leaves) if i in first]
    rl_half = [leaf for i, leaf in enumerate(leaves) if i not in first]

    return sft_half, rl_half


def sft_target(question, taxonomy, mode):
    "Target text for supervised fine-tuning"

    try:
        path = taxonomy.ancestor_path(question.leaf)
    except UnknownLeaf as e:
        raise UnresolvablePath("Question %s: %s" % (question.id, e)) from e
    if question.level >= len(path) or path[question.level] != question.answer:
        raise UnresolvablePath("Question %s does not match the taxonomy." % question.id)

    answer = question.answer_letter if question.options else question.answer
    if mode == "default":
        return answer
    if mode == "hierarchical":
        listing = ["%s: %s" % (taxonomy.level_names[j].capitalize(), label)
                   for j, label in enumerate(path)]
        return "\n".join(listing + ["Answer: %s" % answer])
    raise ConfigError('Unknown SFT mode "%s".' % mode)


def export_sft_dataset(questions, taxonomy, template, mode, target, provenance=None):
    """Write one JSONL record per question, return number of records. A
    provenance stamp, if given, is written as the first line."""

    if isinstance(target, (str, os.PathLike)):
        stream = open(target, "w", encoding="utf-8")
    else:
        stream = target

    count = 0
    try:
        if provenance is not None:
            stream.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for question in questions:
            prompt = template.render(QUESTION=question.text(),
                                     OPTIONS=format_options(question.options))
            record = {"image": question.image_ref,
                      "prompt": prompt.strip(),
                      "target": sft_target(question, taxonomy, mode)}
            stream.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    finally:
        if stream is not target:
            stream.close()

    info("Exported %d %s SFT records.", count, mode)

    return count
