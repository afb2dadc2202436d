# Import taxonomy and question construction
from taxon.taxonomy import Taxonomy, load_taxonomy, dump_taxonomy, ancestor_path, level_label_set
from taxon.embeddings import EmbeddingTable, load_embeddings, cosine_topk
from taxon.dataset import (Question, ImageRecord, build_question, build_questions,
                           load_images, load_questions, save_questions,
                           split_by_species, export_sft_dataset)

# Import model backends and parsers
from taxon.modelio import (ModelBackend, HTTPBackend, ScriptedBackend, TaxonomyOracleBackend,
                           CallContext, ParsedResponse, parse_tagged, serialize_tagged,
                           extract_choice, extract_name, names_match, scripted_mock,
                           http_complete, load_fixtures, UNKNOWN)

# Import evaluation and metrics
from taxon.orchestrator import Evaluator, EvalRecord, LevelEntry, run, load_records, save_records
from taxon.metrics import (MetricReport, compute_report, compute_metrics, leaf_correct_images,
                           restrict_records)
from taxon.report import compare_reports, mode_name
from taxon.metrics import hca, acc_leaf, hca_given_leaf, per_level_accuracy, avg_tokens

# Import GRPO
from taxon.rewards import format_reward, accuracy_reward, total_reward
from taxon.grpo import (GrpoTrainer, PolicyParams, Group, RewardedSample, advantages,
                        kl_divergence, kl_gradient, grpo_objective, grpo_gradient,
                        finite_difference_gradient, check_gradient, train_toy)

# Import parameters and errors
from taxon.parameters import (RunConfig, GrpoConfig, load_config, load_grpo_config,
                              REFERENCE_TRAINING, __version__)
from taxon.errors import *

# List of run modes (labels)
from taxon.orchestrator import run_modes

# List of question modes (labels)
from taxon.dataset import question_modes

