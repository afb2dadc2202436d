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
This module implements model backends and the parsers for model
responses. A response is expected to have the structure

  <think>...</think> <answer>...</answer>

Three backends are provided: HTTPBackend talks to a chat-completions
endpoint, ScriptedBackend replays responses from a fixture, and
TaxonomyOracleBackend answers from a taxonomy (used to check the
mechanics of the evaluation protocol without a model).
"""

import base64
import json
import mimetypes
import os
import re
import threading
import time
from dataclasses import dataclass

import requests
from requests.adapters import HTTPAdapter

from taxon.errors import (AuthRejected, BackendFailure, ConfigError,
                          ProtocolError, TransportError, UnknownLeaf)
from taxon.log import debug, info, warning

# Sentinel for missing or malformed predictions
UNKNOWN = "UNKNOWN"

# Response of the scripted backend when the fixture has no entry
FALLBACK_RESPONSE = "<think></think><answer>UNKNOWN</answer>"

_tags = ("<think>", "</think>", "<answer>", "</answer>")
_structure = re.compile(r"\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*", re.DOTALL)
_answer_block = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_think_block = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_letter_prefix = re.compile(r"\(?([A-Za-z])[.):](?:\s|$)")
_bare_letter = re.compile(r"\(?([A-Za-z])\)?")


@dataclass(frozen=True)
class ParsedResponse:
    think: str
    answer: str
    well_formed: bool
    raw: str


def _has_tag(text):
    return any(tag in text for tag in _tags)


def parse_tagged(raw):
    "Parse response into think and answer blocks (never raises)"

    match = _structure.fullmatch(raw)
    if match and not _has_tag(match.group(1)) and not _has_tag(match.group(2)):
        return ParsedResponse(match.group(1), match.group(2), True, raw)

    # Malformed: extract what we can
    think = _think_block.search(raw)
    answer = _answer_block.search(raw)
    if answer:
        answer = answer.group(1).strip()
    elif not _has_tag(raw):
        answer = raw.strip()
    else:
        answer = ""

    return ParsedResponse(think.group(1).strip() if think else "", answer, False, raw)


def serialize_tagged(think, answer):
    "Return canonical response text"
    return "<think>%s</think><answer>%s</answer>" % (think, answer)


def extract_name(answer_text):
    "Normalize category name: collapse whitespace, strip trailing punctuation"
    return " ".join(answer_text.split()).rstrip(".,;:!?").rstrip()


def match_form(name):
    "Case-insensitive form used for comparing names"
    return extract_name(name).casefold()


def names_match(predicted, truth):
    "Check whether predicted name matches ground truth"
    predicted = match_form(predicted)
    return predicted != "" and predicted == match_form(truth)


def extract_choice(answer_text, options):
    """Extract option letter from answer text, or None if no rule applies.
    Rules in order of priority: bare letter, letter followed by
    punctuation, full label equality."""

    letters = {letter.upper(): letter for letter, _ in options}
    text = " ".join(answer_text.split())

    match = _bare_letter.fullmatch(text)
    if match and match.group(1).upper() in letters:
        return letters[match.group(1).upper()]

    match = _letter_prefix.match(text)
    if match and match.group(1).upper() in letters:
        return letters[match.group(1).upper()]

    for letter, label in options:
        if names_match(text, label):
            return letter

    return None


def count_tokens(text):
    "Whitespace token count"
    return len(text.split())


@dataclass(frozen=True)
class CallContext:
    "What a backend call is about (used by mock backends and logging)"
    image_ref: str
    stage: int
    mode: str
    level: int = None
    question: object = None
    condition: str = None


class ModelBackend:
    "Base class for model backends"

    name = "backend"

    def complete(self, messages, context):
        "Return (text, generated_token_count) for chat messages"
        raise NotImplementedError


# --- HTTP backend -------------------------------------------------------

class HTTPBackend(ModelBackend):
    "Client for chat-completions endpoints"

    name = "http"

    def __init__(self, parameters, session=None, image_root="", sleep=time.sleep, max_inflight=4):
        if not parameters.url:
            raise ConfigError("Missing endpoint URL.")
        self.parameters = parameters
        self.image_root = image_root
        self.attempts = 0
        self.max_inflight = max(1, max_inflight)
        if session is None:
            # Connection pool as large as the number of concurrent requests
            session = requests.Session()
            adapter = HTTPAdapter(pool_connections=1, pool_maxsize=self.max_inflight)
            session.mount("http://", adapter)
            session.mount("https://", adapter)
        self._session = session
        self._semaphore = threading.BoundedSemaphore(self.max_inflight)
        self._lock = threading.Lock()
        self._sleep = sleep
        self._api_key = os.environ.get(parameters.api_key_env, "")
        if not self._api_key:
            warning("Environment variable %s not set, sending no credentials.",
                    parameters.api_key_env)

    def _image_url(self, image_ref):
        "Return URL or base64 data URL for image"
        if image_ref.startswith(("http://", "https://", "data:")):
            return image_ref
        filename = os.path.join(self.image_root, image_ref)
        if not os.path.isfile(filename):
            raise ConfigError('Image "%s" not found (looked for %s).' % (image_ref, filename))
        mime = mimetypes.guess_type(filename)[0] or "image/jpeg"
        with open(filename, "rb") as f:
            data = base64.b64encode(f.read()).decode("ascii")
        return "data:%s;base64,%s" % (mime, data)

    def payload(self, messages, image_ref):
        "Create request body, attaching image to the last user turn"
        body = []
        for n, message in enumerate(messages):
            content = [{"type": "text", "text": message["content"]}]
            if message["role"] == "user" and n == len(messages) - 1 and image_ref:
                content.append({"type": "image_url",
                                "image_url": {"url": self._image_url(image_ref)}})
            body.append({"role": message["role"], "content": content})
        return {"model": self.parameters.model,
                "messages": body,
                "temperature": self.parameters.temperature,
                "max_tokens": self.parameters.max_tokens}

    def complete(self, messages, context):
        payload = self.payload(messages, context.image_ref)
        return self._post_with_retry(payload, context)

    def _post_with_retry(self, payload, context):
        "Post with exponential backoff; a slot is held per attempt, not while waiting"
        max_attempts = self.parameters.max_attempts
        for attempt in range(1, max_attempts + 1):
            with self._lock:
                self.attempts += 1
            try:
                with self._semaphore:
                    result = self._post(payload)
            except TransportError as e:
                warning("Request for %s (stage %d) failed, attempt %d/%d: %s",
                        context.image_ref, context.stage, attempt, max_attempts, e)
                if attempt == max_attempts:
                    raise BackendFailure("Giving up on %s after %d attempts: %s"
                                         % (context.image_ref, attempt, e)) from e
                self._sleep(self.parameters.backoff * 2 ** (attempt - 1))
                continue
            if attempt > 1:
                info("Request for %s succeeded after %d attempts.", context.image_ref, attempt)
            return result

    def _post(self, payload):
        "Send one request and parse the response"

        url = self.parameters.url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = "Bearer " + self._api_key

        try:
            response = self._session.post(url, data=json.dumps(payload), headers=headers,
                                          timeout=self.parameters.timeout)
        except requests.RequestException as e:
            raise TransportError(str(e)) from e

        # Check status
        status = response.status_code
        if status in (401, 403):
            raise AuthRejected("Endpoint rejected credentials (HTTP %d)." % status)
        if status == 429 or status >= 500:
            raise TransportError("HTTP %d" % status)
        if status >= 400:
            raise ProtocolError("HTTP %d: %s" % (status, response.text[:200]))

        # Extract text and token count
        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProtocolError("Unexpected response format: %s" % e) from e
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        if not isinstance(content, str):
            raise ProtocolError("Response content is not text.")

        usage = data.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if not isinstance(tokens, int) or isinstance(tokens, bool):
            tokens = count_tokens(content)

        return content, tokens


def http_complete(endpoint_config, messages, image, session=None):
    "Send single chat-completions request, return (text, token_count)"
    backend = HTTPBackend(endpoint_config, session=session)
    return backend.complete(messages, CallContext(image, 0, "direct"))


# --- Scripted backend ---------------------------------------------------

class ScriptedBackend(ModelBackend):
    """Pure lookup backend. Fixture keys are (image_ref, stage, mode) or
    (image_ref, stage, mode, level); the more specific key wins."""

    name = "mock"

    def __init__(self, fixture, fallback=FALLBACK_RESPONSE):
        self._fixture = dict(fixture)
        self._fallback = fallback

    def complete(self, messages, context):
        key = (context.image_ref, context.stage, context.mode)
        text = self._fixture.get(key + (context.level,))
        if text is None:
            text = self._fixture.get(key)
        if text is None:
            debug("No fixture for %s, using fallback.", key)
            text = self._fallback
        return text, count_tokens(text)


def scripted_mock(fixture):
    return ScriptedBackend(fixture)


def load_fixtures(filename):
    "Read fixture for scripted backend from JSONL file"
    fixture = {}
    with open(filename, "r", encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                key = (item["image"], int(item["stage"]), item["mode"])
                response = item["response"]
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError("%s:%d: malformed fixture line (%s)." % (filename, n + 1, e)) from e
            if item.get("level") is not None:
                key = key + (int(item["level"]),)
            if key in fixture:
                raise ConfigError("%s:%d: duplicate fixture key %s." % (filename, n + 1, key))
            fixture[key] = response
    info("Loaded %d fixture responses from %s.", len(fixture), filename)
    return fixture


def save_fixtures(fixture, filename):
    "Write fixture as JSONL"
    with open(filename, "w", encoding="utf-8") as f:
        for key, response in fixture.items():
            item = {"image": key[0], "stage": key[1], "mode": key[2], "response": response}
            if len(key) > 3:
                item["level"] = key[3]
            f.write(json.dumps(item, ensure_ascii=False) + "\n")


# --- Taxonomy oracle backend --------------------------------------------

class TaxonomyOracleBackend(ModelBackend):
    """Backend that answers from a taxonomy. It recognizes each image as
    the leaf given in `beliefs` and answers every question with the
    ancestor of the conditioning leaf (or its own belief when there is
    no condition). Levels listed in `corrupt_levels` are answered wrongly
    in direct listings, which makes those listings hierarchy-inconsistent."""

    name = "oracle"

    def __init__(self, taxonomy, beliefs, corrupt_levels=()):
        self.taxonomy = taxonomy
        self.beliefs = dict(beliefs)
        self.corrupt_levels = frozenset(corrupt_levels)

    def _path(self, leaf):
        try:
            return self.taxonomy.ancestor_path(leaf)
        except UnknownLeaf:
            return None

    def _wrong_label(self, level, label):
        others = sorted(self.taxonomy.level_label_set(level) - {label})
        return others[0] if others else UNKNOWN

    def complete(self, messages, context):
        belief = self.beliefs.get(context.image_ref, UNKNOWN)
        leaf = context.condition if context.condition not in (None, UNKNOWN) else belief
        path = self._path(leaf)

        if context.mode in ("direct_listing", "leaf_condition"):
            listing = list(path) if path else []
            if context.condition is None:
                listing = [self._wrong_label(j, label) if j in self.corrupt_levels else label
                           for j, label in enumerate(listing)]
            answer = "\n".join(listing)
            think = "Listing the hierarchy from the most general level."
        elif context.level is None:
            answer = belief
            think = " -> ".join(self._path(belief) or [])
        else:
            label = path[context.level] if path and context.level < len(path) else UNKNOWN
            question = context.question
            answer = label
            if question is not None and question.options:
                letters = [letter for letter, option in question.options if option == label]
                answer = letters[0] if letters else question.options[0][0]
            think = " -> ".join(path[:context.level + 1]) if path else ""

        text = serialize_tagged(think, answer)
        return text, count_tokens(text)
