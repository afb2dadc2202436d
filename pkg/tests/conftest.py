import io

import numpy
import pytest

from taxon.dataset import ImageRecord, build_questions
from taxon.embeddings import EmbeddingTable
from taxon.taxonomy import load_taxonomy

TAXONOMY_CSV = """\
kingdom,phylum,class,order,family,genus,species
Plantae,Tracheophyta,Magnoliopsida,Rosales,Rosaceae,Heteromeles,Heteromeles arbutifolia
Plantae,Tracheophyta,Magnoliopsida,Rosales,Rosaceae,Prunus,Prunus ilicifolia
Plantae,Tracheophyta,Magnoliopsida,Fagales,Fagaceae,Quercus,Quercus agrifolia
Plantae,Tracheophyta,Magnoliopsida,Fagales,Fagaceae,Quercus,Quercus lobata
Plantae,Tracheophyta,Pinopsida,Pinales,Pinaceae,Pinus,Pinus sabiniana
Plantae,Tracheophyta,Magnoliopsida,Asterales,Asteraceae,Artemisia,Artemisia californica
"""


def random_table(keys, dim=16, seed=0):
    "Embedding table with random unit vectors"
    rng = numpy.random.default_rng(seed)
    entries = {}
    for key in keys:
        v = rng.normal(size=dim)
        entries[key] = v / numpy.linalg.norm(v)
    return EmbeddingTable(entries)


@pytest.fixture
def taxonomy():
    return load_taxonomy(io.StringIO(TAXONOMY_CSV))


@pytest.fixture
def label_table(taxonomy):
    labels = set()
    for level in range(taxonomy.num_levels):
        labels |= taxonomy.level_label_set(level)
    return random_table(sorted(labels), seed=1)


@pytest.fixture
def images(taxonomy):
    return [ImageRecord("%s-%d.jpg" % (leaf.replace(" ", "_"), i), leaf)
            for leaf in taxonomy.leaves for i in range(2)]


@pytest.fixture
def image_table(images):
    return random_table([image.image_ref for image in images], seed=2)


@pytest.fixture
def questions(taxonomy, images, image_table, label_table):
    return build_questions(taxonomy, images, image_table, label_table, seed=0)
