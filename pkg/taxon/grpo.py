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
This module implements the GRPO objective with binary format and
accuracy rewards, together with exact analytic gradients for a small
enumerable policy used to verify the implementation.

For each query context q, a group of G outputs o_1, ..., o_G is sampled
from the old policy and rewarded. The advantage of output i is its
reward normalized within the group,

  A_i = (r_i - mean(r)) / std(r)

and the objective maximized is

  J = mean_q [ 1/G sum_i min(s_i A_i, clip(s_i, 1 - eps, 1 + eps) A_i)
               - beta KL(pi_theta(.|q) || pi_ref(.|q)) ]

where s_i = pi_theta(o_i|q) / pi_old(o_i|q). The KL divergence is
computed exactly since the action space is enumerable.

The toy policy has one row of 8 logits per context. Action a encodes a
well-formed flag (a // 4) and an option letter (a % 4); see
PolicyParams.render.
"""

import os
from dataclasses import dataclass, field

import numpy

from taxon.dataset import LETTERS, split_by_species
from taxon.errors import ConfigError, Divergence, GroupTooSmall, ZeroProbability
from taxon.log import begin, debug, end, info
from taxon.modelio import serialize_tagged
from taxon.parameters import GrpoConfig, derive_seed
from taxon.rewards import total_reward

# Size of the toy action space (format flag x option letter)
num_actions = 8

# Options shared by all contexts of the toy task
toy_options = [("A", "Rosaceae"), ("B", "Fagaceae"), ("C", "Pinaceae"), ("D", "Asteraceae")]


@dataclass(frozen=True)
class RewardedSample:
    output_id: int
    reward: float
    prob_theta: float
    prob_old: float
    prob_ref: float


@dataclass
class Group:
    context: int
    samples: list
    advantages: list = field(default_factory=list)

    def __post_init__(self):
        if not self.advantages:
            self.advantages = [0.0] * len(self.samples)
        if len(self.advantages) != len(self.samples):
            raise ConfigError("Group has %d samples but %d advantages."
                              % (len(self.samples), len(self.advantages)))

    @property
    def size(self):
        return len(self.samples)


class PolicyParams:
    "Softmax policy over the toy actions, one row of logits per context"

    def __init__(self, logits):
        logits = numpy.array(logits, dtype=numpy.float64)
        if logits.ndim != 2 or logits.shape[1] != num_actions:
            raise ConfigError("Expecting logits of shape (contexts, %d), got %s."
                              % (num_actions, logits.shape))
        self.logits = logits

    @classmethod
    def uniform(cls, num_contexts):
        return cls(numpy.zeros((num_contexts, num_actions)))

    @property
    def num_contexts(self):
        return self.logits.shape[0]

    def probabilities(self):
        return numpy.exp(log_softmax(self.logits))

    def copy(self):
        return PolicyParams(self.logits.copy())

    @staticmethod
    def render(action):
        "Response text of action"
        letter = LETTERS[action % 4]
        if action // 4 == 1:
            return serialize_tagged("reasoning", letter)
        return "<answer>%s</answer>" % letter


def _logits(policy):
    if isinstance(policy, PolicyParams):
        return policy.logits
    return numpy.asarray(policy, dtype=numpy.float64)


def log_softmax(logits):
    logits = numpy.asarray(logits, dtype=numpy.float64)
    shifted = logits - numpy.max(logits, axis=-1, keepdims=True)
    return shifted - numpy.log(numpy.sum(numpy.exp(shifted), axis=-1, keepdims=True))


def softmax(logits):
    return numpy.exp(log_softmax(logits))


def advantages(rewards, std_floor=1e-8):
    "Group-normalized advantages (population standard deviation)"

    rewards = numpy.asarray(rewards, dtype=numpy.float64)
    if rewards.size < 2:
        raise GroupTooSmall("Group needs at least 2 samples (got %d)." % rewards.size)

    # All rewards equal: no learning signal
    if numpy.ptp(rewards) == 0.0:
        return numpy.zeros_like(rewards)

    centered = rewards - rewards.mean()
    return centered / max(rewards.std(), std_floor)


def kl_divergence(p, q):
    "Exact KL(p || q) of categorical distributions (along last axis)"

    p = numpy.asarray(p, dtype=numpy.float64)
    q = numpy.asarray(q, dtype=numpy.float64)
    support = p > 0.0
    if numpy.any(support & (q <= 0.0)):
        raise ZeroProbability("KL divergence undefined: q vanishes where p does not.")

    terms = numpy.zeros(numpy.broadcast(p, q).shape)
    ratio = numpy.divide(p, q, out=numpy.ones_like(terms), where=support)
    numpy.multiply(p, numpy.log(ratio), out=terms, where=support)

    return numpy.sum(terms, axis=-1)


def kl_gradient(logits, ref_logits):
    "Gradient of KL(softmax(logits) || softmax(ref_logits)) with respect to logits"
    log_pi = log_softmax(logits)
    log_rho = log_softmax(ref_logits)
    pi = numpy.exp(log_pi)
    kl = numpy.sum(pi * (log_pi - log_rho), axis=-1, keepdims=True)
    return pi * (log_pi - log_rho - kl)


def _log_policies(theta, theta_old, ref):
    "Log-probabilities of the three policies, checked"

    theta, theta_old, ref = _logits(theta), _logits(theta_old), _logits(ref)
    if not theta.shape == theta_old.shape == ref.shape:
        raise ConfigError("Policies have different shapes: %s, %s, %s."
                          % (theta.shape, theta_old.shape, ref.shape))

    logs = [log_softmax(x) for x in (theta, theta_old, ref)]
    for log_p in logs:
        if not numpy.all(numpy.isfinite(log_p)) or numpy.any(numpy.exp(log_p) == 0.0):
            raise ZeroProbability("Policy assigns zero probability to some action.")

    return logs


def _ratio(log_pi, log_old, context, action):
    return numpy.exp(log_pi[context, action] - log_old[context, action])


def grpo_objective(theta, theta_old, ref, groups, config):
    "Clipped surrogate objective with exact KL penalty, averaged over groups"

    if not groups:
        raise ConfigError("No groups.")
    log_pi, log_old, log_ref = _log_policies(theta, theta_old, ref)
    epsilon, beta = config.clip, config.kl_coeff

    total = 0.0
    for group in groups:
        c = group.context
        surrogate = 0.0
        for sample, advantage in zip(group.samples, group.advantages):
            s = _ratio(log_pi, log_old, c, sample.output_id)
            clipped = min(max(s, 1.0 - epsilon), 1.0 + epsilon)
            surrogate += min(s * advantage, clipped * advantage)
        kl = numpy.sum(numpy.exp(log_pi[c]) * (log_pi[c] - log_ref[c]))
        total += surrogate / group.size - beta * kl

    return total / len(groups)


def grpo_gradient(theta, theta_old, ref, groups, config):
    """Exact gradient of grpo_objective with respect to the logits of
    theta. At a clip breakpoint the unclipped branch is used."""

    if not groups:
        raise ConfigError("No groups.")
    log_pi, log_old, log_ref = _log_policies(theta, theta_old, ref)
    epsilon, beta = config.clip, config.kl_coeff

    gradient = numpy.zeros_like(log_pi)
    for group in groups:
        c = group.context
        pi = numpy.exp(log_pi[c])
        for sample, advantage in zip(group.samples, group.advantages):
            s = _ratio(log_pi, log_old, c, sample.output_id)

            # Clipped branch is constant in theta
            if (s > 1.0 + epsilon and advantage > 0.0) or (s < 1.0 - epsilon and advantage < 0.0):
                continue

            # d s / d z = s (e_a - pi)
            weight = s * advantage / group.size
            gradient[c] -= weight * pi
            gradient[c, sample.output_id] += weight

        kl = numpy.sum(pi * (log_pi[c] - log_ref[c]))
        gradient[c] -= beta * pi * (log_pi[c] - log_ref[c] - kl)

    return gradient / len(groups)


def finite_difference_gradient(f, theta, h=1e-5):
    "Central finite difference approximation of gradient of f at theta"
    theta = numpy.array(_logits(theta), dtype=numpy.float64)
    gradient = numpy.zeros_like(theta)
    for index in numpy.ndindex(theta.shape):
        x = theta[index]
        theta[index] = x + h
        f_plus = f(theta)
        theta[index] = x - h
        f_minus = f(theta)
        theta[index] = x
        gradient[index] = (f_plus - f_minus) / (2.0 * h)
    return gradient


def check_gradient(theta, theta_old, ref, groups, config, h=1e-5):
    "Return relative error of analytic gradient against finite differences"
    analytic = grpo_gradient(theta, theta_old, ref, groups, config)
    numeric = finite_difference_gradient(
        lambda x: grpo_objective(x, theta_old, ref, groups, config), theta, h)
    return numpy.max(numpy.abs(analytic - numeric)) / max(numpy.max(numpy.abs(numeric)), 1e-8)


# --- Toy task and training loop ------------------------------------------

@dataclass
class ToyTask:
    "Multiple-choice task with one correct letter per context"
    answers: list
    options: list = field(default_factory=lambda: list(toy_options))

    @property
    def num_contexts(self):
        return len(self.answers)

    def reward_table(self):
        "Reward of every action in every context"
        table = numpy.zeros((self.num_contexts, num_actions))
        for c, answer in enumerate(self.answers):
            for a in range(num_actions):
                table[c, a] = total_reward(PolicyParams.render(a), answer, 2, self.options)
        return table

    def target_action(self, context):
        "Well-formed response with the correct letter"
        return 4 + LETTERS.index(self.answers[context])


def toy_task(num_contexts, seed):
    rng = numpy.random.default_rng(derive_seed(seed, "grpo", "task"))
    return ToyTask([LETTERS[i] for i in rng.integers(0, 4, size=num_contexts)])


@dataclass
class TrainingCurve:
    "Rows of (step, mean_reward, mean_kl, objective)"
    rows: list = field(default_factory=list)

    @property
    def initial_reward(self):
        return self.rows[0][1]

    @property
    def final_reward(self):
        return self.rows[-1][1]

    def append(self, step, mean_reward, mean_kl, objective):
        self.rows.append((step, float(mean_reward), float(mean_kl), float(objective)))

    def save(self, filename, provenance=None):
        "Save curve as CSV"
        directory = os.path.dirname(filename)
        if directory and not os.path.exists(directory):
            os.makedirs(directory)
        with open(filename, "w", encoding="utf-8") as f:
            if provenance is not None:
                for key in sorted(provenance):
                    f.write("# %s = %s\n" % (key, provenance[key]))
            f.write("step,mean_reward,mean_kl,objective\n")
            for step, reward, kl, objective in self.rows:
                f.write("%d,%.16g,%.16g,%.16g\n" % (step, reward, kl, objective))


class GrpoTrainer:
    "Trains the toy policy with GRPO (optionally after an SFT warm-up)"

    def __init__(self, parameters=None):
        self.parameters = (parameters if parameters is not None else GrpoConfig()).validate()
        self.policy = None

    def _sample_groups(self, theta_old, ref, table, rng):
        "Sample one group per context from the old policy"

        p = self.parameters
        probabilities = theta_old.probabilities()
        reference = ref.probabilities()

        groups = []
        for c in range(theta_old.num_contexts):
            actions = rng.choice(num_actions, size=p.group_size, p=probabilities[c])
            rewards = table[c, actions]
            samples = [RewardedSample(int(a), float(r), probabilities[c, a],
                                      probabilities[c, a], reference[c, a])
                       for a, r in zip(actions, rewards)]
            groups.append(Group(c, samples, advantages(rewards, p.std_floor).tolist()))

        return groups

    def _sft_warmup(self, theta, task):
        "Cross-entropy ascent toward the correct well-formed response"

        p = self.parameters
        contexts = ["context-%d" % c for c in range(task.num_contexts)]
        sft_half, _ = split_by_species(contexts, p.seed)
        indices = [contexts.index(name) for name in sft_half]
        info("SFT warm-up on %d of %d contexts for %d steps.",
             len(indices), task.num_contexts, p.sft_warmup_steps)

        for step in range(p.sft_warmup_steps):
            probabilities = theta.probabilities()
            for c in indices:
                target = numpy.zeros(num_actions)
                target[task.target_action(c)] = 1.0
                theta.logits[c] += p.sft_learning_rate * (target - probabilities[c]) / len(indices)

        return theta

    def _statistics(self, theta, ref, table):
        probabilities = theta.probabilities()
        mean_reward = numpy.mean(numpy.sum(probabilities * table, axis=1))
        mean_kl = numpy.mean(kl_divergence(probabilities, ref.probabilities()))
        return mean_reward, mean_kl

    def train(self, task=None):
        "Run GRPO on toy task, return training curve"

        # Get parameters
        p = self.parameters
        task = task if task is not None else toy_task(p.num_contexts, p.seed)
        table = task.reward_table()
        rng = numpy.random.default_rng(derive_seed(p.seed, "grpo"))

        # Initial policy (uniform), reference is the policy GRPO starts from
        theta = PolicyParams.uniform(task.num_contexts)
        if p.sft_warmup_steps > 0:
            theta = self._sft_warmup(theta, task)
        ref = theta.copy()

        curve = TrainingCurve()
        mean_reward, mean_kl = self._statistics(theta, ref, table)
        curve.append(0, mean_reward, mean_kl, -p.kl_coeff * mean_kl)
        info("Initial mean reward = %.4g", mean_reward)

        # Step size shrinks with the KL coefficient so that strong regularization stays stable
        step_size = p.learning_rate / (1.0 + p.kl_coeff)

        # Main loop
        for step in range(1, p.steps + 1):

            begin("Step %d" % step)

            # Sample and reward groups from the old policy
            theta_old = theta.copy()
            groups = self._sample_groups(theta_old, ref, table, rng)

            # Gradient ascent
            try:
                gradient = grpo_gradient(theta, theta_old, ref, groups, p)
                theta.logits += step_size * gradient
                if not numpy.all(numpy.isfinite(theta.logits)):
                    end()
                    raise Divergence("Non-finite logits at step %d (step size %g, |gradient| = %.3g)."
                                     % (step, step_size, numpy.max(numpy.abs(gradient))))
                objective = grpo_objective(theta, theta_old, ref, groups, p)
            except ZeroProbability as e:
                end()
                raise Divergence("Policy collapsed at step %d: %s" % (step, e)) from e

            mean_reward, mean_kl = self._statistics(theta, ref, table)
            curve.append(step, mean_reward, mean_kl, objective)
            debug("Objective = %.6g", objective)
            info("Mean reward = %.4g, KL = %.3g", mean_reward, mean_kl)

            end()

        info("Mean reward %.4g -> %.4g after %d steps.",
             curve.initial_reward, curve.final_reward, p.steps)

        self.policy = theta

        return curve


def train_toy(config, task=None):
    return GrpoTrainer(config).train(task)
