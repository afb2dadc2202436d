"""
Backend: taxonomy oracle (no model needed)
Modes:   all run modes

This builds a small benchmark from a toy taxonomy with random
embeddings, lets an oracle backend answer it in every run mode and
prints a comparison table. The oracle mistakes one oak for another;
only the leaf-conditioned listing, which is given the true species,
recovers from it.
"""

import io
import os

from numpy.linalg import norm
from numpy.random import default_rng

from taxon import *

# Output directory
out_dir = "two_stage_solutions/"

taxonomy_csv = """\
kingdom,phylum,class,order,family,genus,species
Plantae,Tracheophyta,Magnoliopsida,Rosales,Rosaceae,Heteromeles,Heteromeles arbutifolia
Plantae,Tracheophyta,Magnoliopsida,Rosales,Rosaceae,Prunus,Prunus ilicifolia
Plantae,Tracheophyta,Magnoliopsida,Fagales,Fagaceae,Quercus,Quercus agrifolia
Plantae,Tracheophyta,Magnoliopsida,Fagales,Fagaceae,Quercus,Quercus lobata
Plantae,Tracheophyta,Pinopsida,Pinales,Pinaceae,Pinus,Pinus sabiniana
Plantae,Tracheophyta,Magnoliopsida,Asterales,Asteraceae,Artemisia,Artemisia californica
"""


def random_table(keys, seed):
    rng = default_rng(seed)
    vectors = [rng.normal(size=32) for key in keys]
    return EmbeddingTable(dict((key, v / norm(v)) for key, v in zip(keys, vectors)))


# Load taxonomy
taxonomy = load_taxonomy(io.StringIO(taxonomy_csv))

# Create three images per species and random embeddings
images = [ImageRecord("%s-%d.jpg" % (leaf.replace(" ", "_"), i), leaf)
          for leaf in taxonomy.leaves for i in range(3)]
labels = set()
for level in range(taxonomy.num_levels):
    labels |= level_label_set(taxonomy, level)
label_table = random_table(sorted(labels), 1)
image_table = random_table([image.image_ref for image in images], 2)

# Build multiple-choice questions, and open-set questions for the open_set mode
questions = build_questions(taxonomy, images, image_table, label_table, seed=0)
open_questions = build_questions(taxonomy, images, None, None, seed=0, mode="open_set")

# The oracle takes one Quercus lobata for Quercus agrifolia
beliefs = dict((image.image_ref, image.leaf) for image in images)
beliefs["Quercus_lobata-0.jpg"] = "Quercus agrifolia"
backend = TaxonomyOracleBackend(taxonomy, beliefs)

# Evaluate in every mode
os.makedirs(out_dir, exist_ok=True)
evaluator = Evaluator(taxonomy)
evaluator.parameters.progress = False
reports = []
for mode in run_modes:
    mode_questions = open_questions if mode == "open_set" else questions
    records = evaluator.run(backend, mode_questions, mode).records
    save_records(records, out_dir + mode + ".jsonl")
    reports.append(compute_report(records))

print(compare_reports(reports, [mode_name(mode) for mode in run_modes]))
