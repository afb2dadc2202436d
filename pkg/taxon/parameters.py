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
This module defines the parameter sets used by the runnable components
(evaluator, question builder, GRPO trainer) together with TOML loading,
seed derivation and provenance stamps for output files.

Parameters can be accessed either as attributes or as items:

  config = RunConfig()
  config.grpo.group_size = 8
  config["endpoint"]["temperature"] = 0.0
"""

import hashlib
import json
import tomllib
from dataclasses import dataclass, field, fields

from taxon.errors import ConfigError
from taxon.prompts import PROMPT_VERSION

__version__ = "1.0.0"

# Hyperparameters of the reference LoRA training run. Stored as metadata
# only, nothing in the package fine-tunes a vision-language model.
REFERENCE_TRAINING = {
    "lora_rank": 64,
    "lora_alpha": 64,
    "learning_rate": 5e-5,
    "global_batch_size": 128,
    "epochs_per_subset": 1,
    "grpo_group_size": 8,
    "grpo_kl_coeff": 0.4,
}


@dataclass
class ParameterSet:
    "Base class for parameter sets"

    def keys(self):
        return [f.name for f in fields(self)]

    def __getitem__(self, key):
        if key not in self.keys():
            raise KeyError(key)
        return getattr(self, key)

    def __setitem__(self, key, value):
        if key not in self.keys():
            raise ConfigError('Unknown parameter "%s" in %s.' % (key, type(self).__name__))
        setattr(self, key, value)

    def to_dict(self):
        values = {}
        for key in self.keys():
            value = getattr(self, key)
            values[key] = value.to_dict() if isinstance(value, ParameterSet) else value
        return values

    def update(self, values):
        "Update parameters from (nested) mapping, rejecting unknown keys"
        for key, value in values.items():
            if key not in self.keys():
                raise ConfigError('Unknown parameter "%s" in %s.' % (key, type(self).__name__))
            current = getattr(self, key)
            if isinstance(current, ParameterSet):
                if not isinstance(value, dict):
                    raise ConfigError('Parameter set "%s" must be a table.' % key)
                current.update(value)
            else:
                setattr(self, key, value)
        return self


@dataclass
class DataParameters(ParameterSet):
    taxonomy: str = ""
    embeddings: str = ""
    image_embeddings: str = ""
    images: str = ""
    questions: str = ""
    fixtures: str = ""
    image_root: str = ""
    images_per_species: int = 10
    label_to_label: bool = False
    question_mode: str = "multiple_choice"


@dataclass
class EndpointParameters(ParameterSet):
    url: str = ""
    model: str = ""
    api_key_env: str = "TAXON_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    max_attempts: int = 5
    backoff: float = 1.0


@dataclass
class EvaluationParameters(ParameterSet):
    mode: str = "full_two_stage"
    prompt_dir: str = ""
    max_inflight: int = 4
    progress: bool = True


@dataclass
class GrpoConfig(ParameterSet):
    group_size: int = 8
    clip: float = 0.2
    kl_coeff: float = 0.4
    std_floor: float = 1e-8
    learning_rate: float = 4.0
    steps: int = 300
    num_contexts: int = 8
    seed: int = 0
    sft_warmup_steps: int = 0
    sft_learning_rate: float = 0.5

    def validate(self):
        "Check invariants of the configuration"
        if self.group_size < 2:
            raise ConfigError("group_size must be at least 2 (got %d)." % self.group_size)
        if not 0.0 < self.clip < 1.0:
            raise ConfigError("clip must lie in (0, 1) (got %g)." % self.clip)
        if self.kl_coeff < 0.0:
            raise ConfigError("kl_coeff must be non-negative (got %g)." % self.kl_coeff)
        if self.std_floor < 0.0:
            raise ConfigError("std_floor must be non-negative (got %g)." % self.std_floor)
        if self.steps < 0 or self.sft_warmup_steps < 0:
            raise ConfigError("Number of steps must be non-negative.")
        if self.num_contexts < 1:
            raise ConfigError("num_contexts must be positive.")
        return self


@dataclass
class OutputParameters(ParameterSet):
    output_directory: str = "output"
    save_records: bool = True
    save_report: bool = True


@dataclass
class RunConfig(ParameterSet):
    seed: int = 0
    data: DataParameters = field(default_factory=DataParameters)
    endpoint: EndpointParameters = field(default_factory=EndpointParameters)
    evaluation: EvaluationParameters = field(default_factory=EvaluationParameters)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    output: OutputParameters = field(default_factory=OutputParameters)


def load_config(filename, config=None):
    "Read TOML file into run configuration"
    config = config if config is not None else RunConfig()
    try:
        with open(filename, "rb") as f:
            values = tomllib.load(f)
    except OSError as e:
        raise ConfigError("Unable to read configuration %s: %s" % (filename, e))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("Unable to parse configuration %s: %s" % (filename, e))
    return config.update(values)


def load_grpo_config(filename, config=None):
    "Read GRPO configuration from [grpo] table or top-level keys into config"
    try:
        with open(filename, "rb") as f:
            values = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError("Unable to read GRPO configuration %s: %s" % (filename, e))
    config = config if config is not None else GrpoConfig()
    return config.update(values.get("grpo", values)).validate()


def derive_seed(root, *names):
    "Derive independent seed for named sub-stream of root seed"
    key = ":".join(str(x) for x in (root,) + names)
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def config_hash(config):
    "Short stable hash of configuration"
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def provenance(config):
    "Provenance stamp embedded in every output artifact"
    return {"tool": "taxon",
            "version": __version__,
            "config_hash": config_hash(config),
            "prompts": PROMPT_VERSION,
            "seed": config.seed if isinstance(config, RunConfig) else config["seed"]}
