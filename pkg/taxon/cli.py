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
Command-line interface. Run

  taxon <command> --help

for the options of each command. All commands write their output to
the output directory (--output-dir, default "output"). Exit codes are
0 on success, 1 on configuration or input errors, 2 when some images
failed during evaluation and 3 when GRPO training diverged.
"""

import argparse
import json
import os
import sys

from taxon.dataset import (build_questions, export_sft_dataset, load_images,
                           load_questions, save_questions, split_by_species)
from taxon.embeddings import load_embeddings
from taxon.errors import ConfigError, Divergence, PartialRun, TaxonError
from taxon.grpo import GrpoTrainer
from taxon.log import info, set_log_level, warning
from taxon.metrics import compute_report, leaf_correct_images, restrict_records
from taxon.modelio import HTTPBackend, ScriptedBackend, load_fixtures
from taxon.orchestrator import Evaluator, load_records, run_modes, save_records
from taxon.parameters import (REFERENCE_TRAINING, __version__, RunConfig, load_config,
                              load_grpo_config, provenance)
from taxon.prompts import load_template
from taxon.report import (compare_reports, mode_name, render_report, save_report_json,
                          save_report_markdown)
from taxon.taxonomy import load_taxonomy


def _require(value, flag):
    if not value:
        raise ConfigError("Missing required option %s." % flag)
    return value


def _output_file(config, name):
    directory = config.output.output_directory
    if not os.path.exists(directory):
        os.makedirs(directory)
    return os.path.join(directory, name)


def _write_json(filename, data):
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def build_questions_command(args, config):
    "Build benchmark questions"

    data = config.data
    if args.taxonomy:
        data.taxonomy = args.taxonomy
    if args.embeddings:
        data.embeddings = args.embeddings
    if args.image_embeddings:
        data.image_embeddings = args.image_embeddings
    if args.images:
        data.images = args.images
    if args.cap is not None:
        data.images_per_species = args.cap
    if args.open_set:
        data.question_mode = "open_set"
    if args.label_to_label:
        data.label_to_label = True

    taxonomy = load_taxonomy(_require(data.taxonomy, "--taxonomy"))
    images = load_images(_require(data.images, "--images"))

    # Embeddings are only needed for multiple-choice questions
    label_table = image_table = None
    if data.question_mode == "multiple_choice":
        label_table = load_embeddings(_require(data.embeddings, "--embeddings"))
        if not data.label_to_label:
            image_table = load_embeddings(_require(data.image_embeddings, "--image-embeddings"))

    questions = build_questions(taxonomy, images, image_table, label_table, config.seed,
                                data.images_per_species, data.question_mode,
                                data.label_to_label)

    filename = _output_file(config, "questions.jsonl")
    save_questions(questions, filename, provenance(config))
    manifest = {"questions": len(questions),
                "images": len(set(q.image_ref for q in questions)),
                "species": len(set(q.leaf for q in questions)),
                "mode": data.question_mode,
                "cap": data.images_per_species,
                "seed": config.seed,
                "provenance": provenance(config)}
    _write_json(_output_file(config, "manifest.json"), manifest)
    info("Wrote %d questions to %s.", len(questions), filename)

    return 0


def split_command(args, config):
    "Split species into SFT and RL halves"

    if args.taxonomy:
        config.data.taxonomy = args.taxonomy
    taxonomy = load_taxonomy(_require(config.data.taxonomy, "--taxonomy"))
    sft_half, rl_half = split_by_species(taxonomy.leaves, config.seed)
    _write_json(_output_file(config, "split.json"),
                {"sft": sft_half, "rl": rl_half, "provenance": provenance(config)})
    info("Split %d species into %d (SFT) and %d (RL).",
         len(taxonomy.leaves), len(sft_half), len(rl_half))

    # Optionally split questions accordingly
    if args.questions:
        questions = load_questions(args.questions)
        sft_leaves = set(sft_half)
        stamp = provenance(config)
        save_questions([q for q in questions if q.leaf in sft_leaves],
                       _output_file(config, "sft_questions.jsonl"), stamp)
        save_questions([q for q in questions if q.leaf not in sft_leaves],
                       _output_file(config, "rl_questions.jsonl"), stamp)

    return 0


def export_sft_command(args, config):
    "Export SFT dataset"

    if args.taxonomy:
        config.data.taxonomy = args.taxonomy
    if args.questions:
        config.data.questions = args.questions
    taxonomy = load_taxonomy(_require(config.data.taxonomy, "--taxonomy"))
    questions = load_questions(_require(config.data.questions, "--questions"))
    template = load_template("sft_question", config.evaluation.prompt_dir or None)
    # Training metadata travels with the dataset
    stamp = dict(provenance(config), sft_mode=args.sft_mode, training=REFERENCE_TRAINING)
    export_sft_dataset(questions, taxonomy, template, args.sft_mode,
                       _output_file(config, "sft.jsonl"), stamp)
    return 0


def _backend(args, config):
    "Create scripted backend from fixtures or HTTP backend from endpoint"
    if args.fixtures:
        config.data.fixtures = args.fixtures
    if args.endpoint:
        config.endpoint.url = args.endpoint
    if args.model:
        config.endpoint.model = args.model
    if args.image_root:
        config.data.image_root = args.image_root

    if config.data.fixtures:
        return ScriptedBackend(load_fixtures(config.data.fixtures))
    if config.endpoint.url:
        return HTTPBackend(config.endpoint, image_root=config.data.image_root,
                           max_inflight=config.evaluation.max_inflight)
    raise ConfigError("Either --fixtures or --endpoint must be given.")


def eval_command(args, config):
    "Evaluate questions with model backend"

    evaluation = config.evaluation
    if args.taxonomy:
        config.data.taxonomy = args.taxonomy
    if args.questions:
        config.data.questions = args.questions
    if args.mode:
        evaluation.mode = args.mode
    if args.max_inflight is not None:
        evaluation.max_inflight = args.max_inflight
    if args.prompt_dir:
        evaluation.prompt_dir = args.prompt_dir

    taxonomy = load_taxonomy(_require(config.data.taxonomy, "--taxonomy"))
    questions = load_questions(_require(config.data.questions, "--questions"))
    backend = _backend(args, config)

    result = Evaluator(taxonomy, evaluation).run(backend, questions)
    stamp = dict(provenance(config), mode=result.mode)

    # Save results
    if config.output.save_records:
        save_records(result.records, _output_file(config, "records.jsonl"), stamp)
    if config.output.save_report and result.records:
        report = compute_report(result.records)
        save_report_json(report, _output_file(config, "report.json"), stamp, result.mode)
        text = render_report(report, mode_name(result.mode), taxonomy.level_names, stamp)
        save_report_markdown(text, _output_file(config, "report.md"))
        print(text.split("\n\n")[0])

    result.check()

    return 0


def report_command(args, config):
    "Compare evaluation runs"

    runs = [load_records(filename) for filename in args.records]
    labels = args.labels or [mode_name(records[0].mode) if records else filename
                             for records, filename in zip(runs, args.records)]

    # Optionally score every run on the images where another run got the leaf right
    note = None
    if args.condition_on:
        images = leaf_correct_images(load_records(args.condition_on))
        runs = [restrict_records(records, images) for records in runs]
        note = "Restricted to %d images with a correct leaf in %s." % (len(images),
                                                                      args.condition_on)
        info("%s", note)

    reports = [compute_report(records) for records in runs]
    stamp = dict(provenance(config), records=list(args.records), condition_on=args.condition_on)
    text = compare_reports(reports, labels, stamp, note)
    save_report_markdown(text, _output_file(config, "comparison.md"))
    print(text, end="")
    return 0


def grpo_demo_command(args, config):
    "Train toy policy with GRPO"

    # The trainer derives its sub-streams from the root seed
    grpo = config.grpo
    grpo.seed = config.seed
    if args.grpo_config:
        load_grpo_config(args.grpo_config, grpo)
    overrides = {"steps": args.steps, "group_size": args.group_size, "kl_coeff": args.beta,
                 "learning_rate": args.lr, "clip": args.clip, "num_contexts": args.contexts,
                 "sft_warmup_steps": args.sft_warmup}
    grpo.update({key: value for key, value in overrides.items() if value is not None})

    curve = GrpoTrainer(grpo).train()
    curve.save(_output_file(config, "curve.csv"), dict(provenance(config), seed=grpo.seed))
    print("mean reward: %.4f -> %.4f" % (curve.initial_reward, curve.final_reward))

    return 0


def create_parser():
    "Create the argument parser"

    parser = argparse.ArgumentParser(
        prog="taxon", description="Two-stage hierarchical taxonomic classification")
    parser.add_argument("--version", action="version", version="taxon " + __version__)
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--output-dir", help="output directory")
    parser.add_argument("--log-level", default="INFO", help="log level (DEBUG, INFO, ...)")
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("build-questions", help="build benchmark questions")
    p.add_argument("--taxonomy", help="taxonomy CSV file")
    p.add_argument("--embeddings", help="label text embeddings (JSONL)")
    p.add_argument("--image-embeddings", help="image embeddings (JSONL)")
    p.add_argument("--images", help="image list (CSV with header image,leaf)")
    p.add_argument("--cap", type=int, help="maximum number of images per species")
    p.add_argument("--open-set", action="store_true", help="build open-set questions")
    p.add_argument("--label-to-label", action="store_true",
                   help="select distractors by similarity to the answer label")
    p.set_defaults(function=build_questions_command)

    p = subparsers.add_parser("split", help="split species into SFT and RL halves")
    p.add_argument("--taxonomy", help="taxonomy CSV file")
    p.add_argument("--questions", help="also split this question file")
    p.set_defaults(function=split_command)

    p = subparsers.add_parser("export-sft", help="export SFT dataset")
    p.add_argument("--questions", help="question file (JSONL)")
    p.add_argument("--taxonomy", help="taxonomy CSV file")
    p.add_argument("--sft-mode", choices=("default", "hierarchical"), default="default")
    p.set_defaults(function=export_sft_command)

    p = subparsers.add_parser("eval", help="evaluate a model")
    p.add_argument("--questions", help="question file (JSONL)")
    p.add_argument("--taxonomy", help="taxonomy CSV file")
    p.add_argument("--mode", choices=run_modes)
    p.add_argument("--max-inflight", type=int, help="maximum number of concurrent requests")
    p.add_argument("--prompt-dir", help="directory with prompt template overrides")
    p.add_argument("--fixtures", help="scripted responses (JSONL) for the mock backend")
    p.add_argument("--endpoint", help="chat-completions endpoint URL")
    p.add_argument("--model", help="model name")
    p.add_argument("--image-root", help="directory of image files")
    p.set_defaults(function=eval_command)

    p = subparsers.add_parser("report", help="compare evaluation runs")
    p.add_argument("--records", nargs="+", required=True, help="record files (JSONL)")
    p.add_argument("--labels", nargs="+", help="row labels (one per record file)")
    p.add_argument("--condition-on", metavar="RECORDS",
                   help="only score images whose leaf is correct in this record file")
    p.set_defaults(function=report_command)

    p = subparsers.add_parser("grpo-demo", help="train toy policy with GRPO")
    p.add_argument("--grpo-config", help="GRPO configuration (TOML)")
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--beta", type=float, help="KL coefficient")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--clip", type=float, help="clip range epsilon")
    p.add_argument("--contexts", type=int, help="number of query contexts")
    p.add_argument("--sft-warmup", type=int, help="number of SFT warm-up steps")
    p.set_defaults(function=grpo_demo_command)

    return parser


def main(argv=None):
    "Run command line, return exit code"

    args = create_parser().parse_args(argv)
    set_log_level("WARNING" if args.quiet else args.log_level)

    try:
        config = RunConfig()
        if args.config:
            load_config(args.config, config)
        if args.seed is not None:
            config.seed = args.seed
        if args.output_dir:
            config.output.output_directory = args.output_dir
        if args.quiet:
            config.evaluation.progress = False
        return args.function(args, config)
    except PartialRun as e:
        warning("Partial run: %s.", e)
        return 2
    except Divergence as e:
        print("Error: %s" % e, file=sys.stderr)
        return 3
    except (TaxonError, OSError) as e:
        print("Error: %s" % e, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
