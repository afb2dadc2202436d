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
This module defines the prompt templates. Templates are text files in
the prompts directory with named slots such as {LEVELS}, {QUESTION},
{OPTIONS} and {LEAF}. A custom directory may override any subset of
the default templates.
"""

import os
import re

from taxon.errors import ConfigError

# List of all available templates (grab all files from directory)
library_dir = os.path.dirname(os.path.abspath(__file__))
prompts_dir = os.path.join(library_dir, "prompts")
prompt_data = sorted(p.split(".")[0] for p in os.listdir(prompts_dir) if p.endswith(".txt"))

# Version of the default wording, recorded in provenance stamps
PROMPT_VERSION = "1"

_slot = re.compile(r"\{([A-Z_]+)\}")


class PromptTemplate:
    "Text template with named slots"

    def __init__(self, name, text):
        self.name = name
        self.text = text
        self.slots = frozenset(_slot.findall(text))

    def render(self, **values):
        "Fill slots; every slot in the template must be given"
        missing = self.slots - set(values)
        if missing:
            raise ConfigError('Template "%s" needs slots %s.' % (self.name, sorted(missing)))
        return _slot.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values
                         else m.group(0), self.text)


# Cache for loaded templates
template_cache = {}


def load_template(name, prompt_dir=None):
    "Load named template, looking in prompt_dir before the defaults"

    if prompt_dir:
        filename = os.path.join(prompt_dir, name + ".txt")
        if os.path.isfile(filename):
            with open(filename, "r", encoding="utf-8") as f:
                return PromptTemplate(name, f.read().strip())

    if name not in prompt_data:
        raise ConfigError('Unknown prompt template: "%s".' % name)

    if name not in template_cache:
        with open(os.path.join(prompts_dir, name + ".txt"), "r", encoding="utf-8") as f:
            template_cache[name] = PromptTemplate(name, f.read().strip())

    return template_cache[name]


def format_options(options):
    "Render options as one 'A. label' line each"
    return "\n".join("%s. %s" % (letter, label) for letter, label in options)


def format_levels(level_names):
    return " -> ".join(name.capitalize() for name in level_names)
