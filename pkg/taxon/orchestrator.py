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
This module implements the two-stage inference protocol.

Stage 1 asks the model for the most specific classification of the
image (open-set), reasoning top-down through the hierarchy. Stage 2
asks one question per level, conditioned on the Stage 1 prediction.
The ablation and pilot modes change the call graph:

  full_two_stage   stage 1 once per image, stage 2 once per level
  no_reasoning     same calls, prompts without the reasoning instruction
  no_first_stage   stage 2 only, without the leaf condition
  direct_listing   one call listing the hierarchy from the image alone
  leaf_condition   one listing call given the ground-truth leaf
  open_set         stage 1, then per-level name generation
"""

import json
import re
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from tqdm import tqdm

from taxon.dataset import group_by_image
from taxon.errors import ConfigError, PartialRun, TaxonError
from taxon.log import begin, debug, end, info, warning
from taxon.modelio import (UNKNOWN, CallContext, extract_choice, extract_name,
                           names_match, parse_tagged)
from taxon.parameters import EvaluationParameters
from taxon.prompts import format_levels, format_options, load_template

# List of run modes (labels)
run_modes = ("full_two_stage", "no_reasoning", "no_first_stage",
             "direct_listing", "leaf_condition", "open_set")

# Templates used by each mode: (stage 1, stage 2)
mode_templates = {"full_two_stage": ("stage1", "stage2"),
                  "no_reasoning":   ("stage1_noreason", "stage2_noreason"),
                  "no_first_stage": (None, "stage2_nofirst"),
                  "direct_listing": ("listing", None),
                  "leaf_condition": ("listing_leaf", None),
                  "open_set":       ("stage1", "stage2_open")}

# Templates that receive the leaf (stage 1 and unconditioned templates never do)
leaf_templates = ("stage2", "stage2_noreason", "stage2_open", "listing_leaf")

# Question modes accepted by each run mode
mode_questions = {"full_two_stage": ("multiple_choice",),
                  "no_reasoning":   ("multiple_choice",),
                  "no_first_stage": ("multiple_choice",),
                  "direct_listing": ("multiple_choice", "open_set"),
                  "leaf_condition": ("multiple_choice", "open_set"),
                  "open_set":       ("open_set",)}

_list_marker = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_level_prefix = re.compile(r"^[A-Za-z ]+:\s*")
_arrow = re.compile(r"\s*(?:->|→|>)\s*")


@dataclass
class LevelEntry:
    level: int
    true_label: str
    predicted: str = None
    predicted_label: str = None
    correct: bool = False


@dataclass
class EvalRecord:
    image_ref: str
    leaf: str
    mode: str
    levels: list = field(default_factory=list)
    stage1_leaf: str = None
    stage1_transcript: str = ""
    stage2_transcripts: list = field(default_factory=list)
    token_counts: list = field(default_factory=list)
    failed: bool = False
    error: str = ""

    @property
    def depth(self):
        return len(self.levels)

    @property
    def leaf_correct(self):
        return self.levels[-1].correct

    @property
    def all_correct(self):
        return all(entry.correct for entry in self.levels)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        values["levels"] = [LevelEntry(**entry) for entry in values.get("levels", [])]
        return cls(**values)


@dataclass
class RunResult:
    records: list
    failures: int
    mode: str

    def check(self):
        "Raise PartialRun if any image failed"
        if self.failures > 0:
            raise PartialRun(self.failures, len(self.records))


def _messages(system_prompt, prompt):
    messages = [{"role": "user", "content": prompt}]
    if system_prompt:
        messages.insert(0, {"role": "system", "content": system_prompt})
    return messages


def stage1_infer(backend, image_ref, template, level_names, mode="full_two_stage",
                 system_prompt=None, audit=None):
    "Predict most specific label of image, return (leaf, transcript, tokens)"

    prompt = template.render(LEVELS=format_levels(level_names),
                             LEAF_LEVEL=level_names[-1])
    if audit is not None:
        audit(image_ref, 1, None, prompt)

    context = CallContext(image_ref, 1, mode)
    text, tokens = backend.complete(_messages(system_prompt, prompt), context)

    parsed = parse_tagged(text)
    leaf = extract_name(parsed.answer)
    if not parsed.well_formed or not leaf:
        warning("Malformed stage 1 response for %s (well_formed=%s).",
                image_ref, parsed.well_formed)
        leaf = UNKNOWN

    return leaf, text, tokens


def stage2_answer(backend, question, stage1_leaf, template, level_names,
                  mode="full_two_stage", system_prompt=None, audit=None):
    "Answer question conditioned on stage 1 leaf, return (prediction, transcript, tokens)"

    prompt = template.render(LEAF=stage1_leaf,
                             LEVELS=format_levels(level_names),
                             QUESTION=question.text(),
                             OPTIONS=format_options(question.options))
    if audit is not None:
        audit(question.image_ref, 2, question.level, prompt)

    condition = stage1_leaf if "LEAF" in template.slots else None
    context = CallContext(question.image_ref, 2, mode, question.level, question, condition)
    text, tokens = backend.complete(_messages(system_prompt, prompt), context)

    # Open-set questions are answered by name
    answer = parse_tagged(text).answer
    if mode == "open_set" or not question.options:
        prediction = extract_name(answer) or None
    else:
        prediction = extract_choice(answer, question.options)

    return prediction, text, tokens


def parse_listing(answer_text):
    "Parse hierarchy listing into labels (root first)"
    lines = [line for line in answer_text.splitlines() if line.strip()]
    if len(lines) == 1 and _arrow.search(lines[0]):
        lines = _arrow.split(lines[0])
    labels = []
    for line in lines:
        line = _list_marker.sub("", line)
        line = _level_prefix.sub("", line)
        labels.append(extract_name(line))
    return labels


class Evaluator:
    "Runs the inference protocol over a question set"

    def __init__(self, taxonomy, parameters=None):
        self.taxonomy = taxonomy
        self.parameters = parameters if parameters is not None else EvaluationParameters()

        # Prompt auditing (disabled unless a list is assigned)
        self.prompts_sent = None
        self._lock = threading.Lock()

    def _audit(self, image_ref, stage, level, prompt):
        with self._lock:
            self.prompts_sent.append((image_ref, stage, level, prompt))

    def _templates(self, mode):
        prompt_dir = self.parameters.prompt_dir or None
        names = mode_templates[mode]
        templates = tuple(load_template(name, prompt_dir) if name else None for name in names)

        # A custom template must not leak the leaf into an unconditioned call
        for name, template in zip(names, templates):
            if template is not None and name not in leaf_templates and "LEAF" in template.slots:
                raise ConfigError('Template "%s" may not use the {LEAF} slot.' % name)

        return templates

    def run(self, backend, questions, mode=None):
        "Evaluate all questions, return RunResult with records in input order"

        mode = mode or self.parameters.mode
        if mode not in run_modes:
            raise ConfigError('Unknown run mode "%s", expecting one of %s.'
                              % (mode, ", ".join(run_modes)))
        for question in questions:
            if question.mode not in mode_questions[mode]:
                raise ConfigError('Run mode "%s" cannot evaluate %s question %s.'
                                  % (mode, question.mode, question.id))

        groups = list(group_by_image(questions).items())
        templates = self._templates(mode)
        system_prompt = load_template("system", self.parameters.prompt_dir or None).text
        audit = self._audit if self.prompts_sent is not None else None

        def evaluate(group):
            image_ref, image_questions = group
            return self._evaluate_image(backend, image_ref, image_questions, mode,
                                        templates, system_prompt, audit)

        begin("Evaluating %d images (%d questions) in mode %s with %s backend",
              len(groups), len(questions), mode, backend.name)

        # Images run concurrently, stages within an image sequentially
        max_workers = max(1, self.parameters.max_inflight)
        progress = self.parameters.progress and sys.stderr.isatty()
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            records = list(tqdm(executor.map(evaluate, groups), total=len(groups),
                                desc=mode, disable=not progress))

        failures = sum(1 for record in records if record.failed)
        if failures:
            warning("%d of %d images failed.", failures, len(records))
        info("Evaluation finished.")
        end()

        return RunResult(records, failures, mode)

    def _evaluate_image(self, backend, image_ref, questions, mode, templates,
                        system_prompt, audit):
        "Run all calls for one image"

        leaf = questions[0].leaf
        record = EvalRecord(image_ref=image_ref, leaf=leaf, mode=mode)

        try:
            path = self.taxonomy.ancestor_path(leaf)
            record.levels = [LevelEntry(level, label) for level, label in enumerate(path)]

            by_level = {}
            for question in questions:
                if question.level >= len(path):
                    raise ConfigError("Question %s is deeper than its leaf." % question.id)
                by_level[question.level] = question

            if mode in ("direct_listing", "leaf_condition"):
                self._run_listing(backend, record, path, mode, templates[0],
                                  system_prompt, audit)
            else:
                self._run_stages(backend, record, by_level, mode, templates,
                                 system_prompt, audit)

        except TaxonError as e:
            warning("Evaluation of %s failed: %s", image_ref, e)
            record.failed = True
            record.error = str(e)
            for entry in record.levels:
                entry.correct = False

        debug("%s: %d/%d levels correct", image_ref,
              sum(entry.correct for entry in record.levels), len(record.levels))

        return record

    def _run_stages(self, backend, record, by_level, mode, templates, system_prompt, audit):
        "Stage 1 (if any) followed by one stage 2 call per level"

        level_names = self.taxonomy.level_names[:len(record.levels)]
        stage1_template, stage2_template = templates

        # Stage 1
        condition = None
        if stage1_template is not None:
            condition, transcript, tokens = stage1_infer(backend, record.image_ref,
                                                         stage1_template, level_names,
                                                         mode, system_prompt, audit)
            record.stage1_leaf = condition
            record.stage1_transcript = transcript
            record.token_counts.append(tokens)

        # Stage 2
        for entry in record.levels:
            question = by_level.get(entry.level)
            if question is None:
                warning("No question for %s at level %d.", record.image_ref, entry.level)
                continue
            entry.true_label = question.answer
            prediction, transcript, tokens = stage2_answer(backend, question, condition,
                                                           stage2_template, level_names,
                                                           mode, system_prompt, audit)
            record.stage2_transcripts.append(transcript)
            record.token_counts.append(tokens)

            entry.predicted = prediction
            if mode == "open_set" or not question.options:
                entry.predicted_label = prediction
                entry.correct = prediction is not None and names_match(prediction, question.answer)
            else:
                entry.predicted_label = question.option_label(prediction)
                entry.correct = prediction is not None and prediction == question.answer_letter

    def _run_listing(self, backend, record, path, mode, template, system_prompt, audit):
        "Single call listing the whole hierarchy"

        level_names = self.taxonomy.level_names[:len(path)]
        condition = record.leaf if mode == "leaf_condition" else None
        values = dict(LEVELS=format_levels(level_names), ROOT_LEVEL=level_names[0])
        if condition is not None:
            values["LEAF"] = condition
        prompt = template.render(**values)
        if audit is not None:
            audit(record.image_ref, 1, None, prompt)

        context = CallContext(record.image_ref, 1, mode, condition=condition)
        text, tokens = backend.complete(_messages(system_prompt, prompt), context)
        record.stage1_transcript = text
        record.token_counts.append(tokens)

        # Compare listing positionally with ancestor path
        listing = parse_listing(parse_tagged(text).answer)
        if len(listing) != len(path):
            debug("Listing for %s has %d lines, expected %d.",
                  record.image_ref, len(listing), len(path))
        for entry in record.levels:
            if entry.level < len(listing):
                entry.predicted = entry.predicted_label = listing[entry.level]
                entry.correct = names_match(listing[entry.level], entry.true_label)
        if listing:
            record.stage1_leaf = listing[-1]


def run(backend, questions, taxonomy, mode, parameters=None):
    "Evaluate questions with backend, return list of records"
    return Evaluator(taxonomy, parameters).run(backend, questions, mode).records


def save_records(records, filename, provenance=None):
    "Write records as JSONL (first line holds provenance, if given)"
    with open(filename, "w", encoding="utf-8") as f:
        if provenance is not None:
            f.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def load_records(filename):
    "Read records written by save_records"
    records = []
    with open(filename, "r", encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            try:
                values = json.loads(line)
                if "provenance" in values:
                    continue
                records.append(EvalRecord.from_dict(values))
            except (ValueError, TypeError) as e:
                raise ConfigError("%s:%d: malformed record (%s)." % (filename, n + 1, e)) from e
    return records
