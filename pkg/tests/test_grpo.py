import numpy
import pytest

from taxon.errors import ConfigError, Divergence, GroupTooSmall, ZeroProbability
from taxon.grpo import (Group, GrpoTrainer, PolicyParams, RewardedSample, ToyTask,
                        advantages, check_gradient, finite_difference_gradient,
                        grpo_gradient, grpo_objective, kl_divergence, kl_gradient,
                        softmax, toy_task, train_toy)
from taxon.modelio import parse_tagged
from taxon.parameters import GrpoConfig, load_grpo_config

eps = 1e-12


def make_group(context, actions, rewards, std_floor=1e-8):
    samples = [RewardedSample(int(a), float(r), 0.0, 0.0, 0.0) for a, r in zip(actions, rewards)]
    return Group(context, samples, advantages(rewards, std_floor).tolist())


def random_instance(rng, config):
    "Random policies and groups away from clip breakpoints"
    while True:
        num_contexts = int(rng.integers(1, 4))
        theta = rng.normal(size=(num_contexts, 8))
        theta_old = theta + 0.3 * rng.normal(size=theta.shape)
        ref = rng.normal(size=theta.shape)
        groups = []
        for _ in range(rng.integers(1, 4)):
            size = int(rng.integers(2, 7))
            groups.append(make_group(int(rng.integers(0, num_contexts)),
                                     rng.integers(0, 8, size=size),
                                     rng.integers(0, 3, size=size)))
        ratios = [softmax(theta)[g.context, s.output_id] / softmax(theta_old)[g.context, s.output_id]
                  for g in groups for s in g.samples]
        if all(abs(s - 1.0 - config.clip) > 1e-4 and abs(s - 1.0 + config.clip) > 1e-4
               for s in ratios):
            return theta, theta_old, ref, groups


def test_advantages_examples():
    "Test advantages on hand-computed groups"
    assert numpy.allclose(advantages([1, 0]), [1, -1], atol=eps)
    assert list(advantages([1, 1, 1, 1])) == [0, 0, 0, 0]
    a = advantages([1, 1, 0, 0, 0, 0, 0, 0])
    assert numpy.allclose(a, [3 ** 0.5] * 2 + [-1 / 3 ** 0.5] * 6, atol=1e-12)
    with pytest.raises(GroupTooSmall):
        advantages([1])


def test_advantages_normalized():
    "Test zero mean and unit population std on random groups"
    rng = numpy.random.default_rng(0)
    for _ in range(10000):
        rewards = rng.integers(0, 3, size=rng.integers(2, 17)).astype(float)
        a = advantages(rewards, 1e-8)
        if rewards.std() > 1e-8:
            assert abs(a.mean()) < eps
            assert abs(a.std() - 1.0) < 1e-9
        else:
            assert numpy.all(a == 0.0)


def test_kl_divergence():
    "Test that KL is non-negative and zero only for equal distributions"
    rng = numpy.random.default_rng(1)
    for _ in range(1000):
        p = rng.dirichlet(numpy.ones(8))
        q = rng.dirichlet(numpy.ones(8))
        assert kl_divergence(p, q) > 0.0
        assert abs(kl_divergence(p, p)) < eps
    assert kl_divergence([0.5, 0.5, 0.0], [0.25, 0.25, 0.5]) == pytest.approx(numpy.log(2.0))
    with pytest.raises(ZeroProbability):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_kl_gradient():
    "Test closed-form KL gradient against finite differences"
    rng = numpy.random.default_rng(2)
    for _ in range(20):
        logits, ref = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
        fd = finite_difference_gradient(
            lambda x: numpy.sum(kl_divergence(softmax(x), softmax(ref))), logits)
        assert numpy.max(numpy.abs(kl_gradient(logits, ref) - fd)) < 1e-8


def test_objective_identity():
    "Test that the objective vanishes when all policies are equal"
    rng = numpy.random.default_rng(3)
    config = GrpoConfig()
    for _ in range(1000):
        theta, _, _, groups = random_instance(rng, config)
        assert abs(grpo_objective(theta, theta, theta, groups, config)) < eps


def test_objective_formula():
    "Test objective against a direct transcription of the formula"
    rng = numpy.random.default_rng(4)
    config = GrpoConfig(clip=0.2, kl_coeff=0.4)
    for _ in range(100):
        theta, theta_old, ref, groups = random_instance(rng, config)
        pi, old, rho = softmax(theta), softmax(theta_old), softmax(ref)
        terms = []
        for g in groups:
            c = g.context
            total = 0.0
            for s, a in zip(g.samples, g.advantages):
                ratio = pi[c, s.output_id] / old[c, s.output_id]
                total += min(ratio * a, numpy.clip(ratio, 0.8, 1.2) * a)
            kl = sum(pi[c, k] * numpy.log(pi[c, k] / rho[c, k]) for k in range(8))
            terms.append(total / len(g.samples) - 0.4 * kl)
        assert abs(grpo_objective(theta, theta_old, ref, groups, config) - numpy.mean(terms)) < eps


def test_clip():
    "Test that a ratio beyond 1 + eps uses the clipped value"
    config = GrpoConfig(clip=0.2, kl_coeff=0.0)
    p = (1.0 + 2 * config.clip) / 8
    theta = numpy.zeros((1, 8))
    theta[0, 3] = numpy.log(7 * p / (1 - p))
    theta_old = numpy.zeros((1, 8))
    positive = [Group(0, [RewardedSample(3, 1.0, p, 0.125, 0.125)], [2.0])]
    assert grpo_objective(theta, theta_old, theta_old, positive, config) == pytest.approx(1.2 * 2.0)
    assert numpy.all(grpo_gradient(theta, theta_old, theta_old, positive, config) == 0.0)

    # With negative advantage the unclipped (smaller) term applies
    negative = [Group(0, [RewardedSample(3, 0.0, p, 0.125, 0.125)], [-2.0])]
    assert grpo_objective(theta, theta_old, theta_old, negative, config) == pytest.approx(-1.4 * 2.0)
    assert numpy.any(grpo_gradient(theta, theta_old, theta_old, negative, config) != 0.0)


def test_gradient_ratio_one():
    "Test that the gradient reduces to the policy gradient at ratio 1"
    rng = numpy.random.default_rng(5)
    config = GrpoConfig(kl_coeff=0.0)
    for _ in range(50):
        theta, _, _, groups = random_instance(rng, config)
        pi = softmax(theta)
        expected = numpy.zeros_like(theta)
        for g in groups:
            for s, a in zip(g.samples, g.advantages):
                e = numpy.zeros(8)
                e[s.output_id] = 1.0
                expected[g.context] += a * (e - pi[g.context]) / len(g.samples)
        expected /= len(groups)
        gradient = grpo_gradient(theta, theta, theta, groups, config)
        assert numpy.max(numpy.abs(gradient - expected)) < eps


def test_gradient_kl_only():
    "Test gradient with zero advantages against the closed-form KL gradient"
    rng = numpy.random.default_rng(6)
    config = GrpoConfig(kl_coeff=0.4)
    theta, ref = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
    groups = [make_group(0, [1, 2, 3], [1, 1, 1]), make_group(1, [0, 5], [2, 2])]
    gradient = grpo_gradient(theta, theta, ref, groups, config)
    assert numpy.max(numpy.abs(gradient + 0.4 * kl_gradient(theta, ref) / 2)) < eps


def test_gradient_finite_differences():
    "Test analytic gradient against central differences on random instances"
    rng = numpy.random.default_rng(7)
    for n in range(200):
        config = GrpoConfig(clip=float(rng.uniform(0.1, 0.3)), kl_coeff=float(rng.uniform(0.1, 1.0)))
        theta, theta_old, ref, groups = random_instance(rng, config)
        assert check_gradient(theta, theta_old, ref, groups, config, h=1e-5) < 1e-5, n


def test_zero_probability():
    "Test policies with vanishing probabilities"
    theta = numpy.zeros((1, 8))
    theta[0, 0] = -1e4
    groups = [make_group(0, [1, 2], [0, 1])]
    with pytest.raises(ZeroProbability):
        grpo_objective(theta, numpy.zeros((1, 8)), numpy.zeros((1, 8)), groups, GrpoConfig())


def test_toy_task():
    "Test rendering and rewards of the toy actions"
    assert parse_tagged(PolicyParams.render(5)).well_formed
    assert parse_tagged(PolicyParams.render(5)).answer == "B"
    assert not parse_tagged(PolicyParams.render(1)).well_formed
    task = ToyTask(["B", "D"])
    table = task.reward_table()
    assert list(table[0]) == [0, 1, 0, 0, 1, 2, 1, 1]
    assert list(table[1]) == [0, 0, 0, 1, 1, 1, 1, 2]
    assert task.target_action(1) == 7
    assert toy_task(8, 0).answers == toy_task(8, 0).answers


def test_training_learns():
    "Test that GRPO learns format and accuracy from the uniform policy"
    curve = train_toy(GrpoConfig(group_size=8, kl_coeff=0.4, steps=300, num_contexts=8, seed=0))
    assert len(curve.rows) == 301
    assert curve.rows[0][0] == 0
    assert abs(curve.initial_reward - 0.75) < eps
    assert curve.rows[0][2] == 0.0
    assert curve.final_reward >= 1.8
    assert all(kl >= 0.0 for _, _, kl, _ in curve.rows)


def test_training_deterministic(tmp_path):
    "Test that equal seeds give identical curves"
    config = GrpoConfig(steps=50, seed=3)
    first, second = train_toy(config), train_toy(GrpoConfig(steps=50, seed=3))
    assert first.rows == second.rows
    first.save(str(tmp_path / "a.csv"), {"seed": 3})
    second.save(str(tmp_path / "b.csv"), {"seed": 3})
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "# seed = 3"
    assert lines[1] == "step,mean_reward,mean_kl,objective"
    assert len(lines) == 53
    assert train_toy(GrpoConfig(steps=50, seed=4)).rows != first.rows


def test_strong_kl_stays_near_reference():
    "Test that a large KL coefficient keeps the policy near uniform at the default step size"
    trainer = GrpoTrainer(GrpoConfig(kl_coeff=100.0))
    trainer.train()
    tv = 0.5 * numpy.sum(numpy.abs(trainer.policy.probabilities() - 1.0 / 8), axis=1)
    assert numpy.max(tv) <= 0.05


def test_sft_warmup():
    "Test that SFT warm-up raises the initial reward"
    curve = train_toy(GrpoConfig(steps=0, sft_warmup_steps=100, sft_learning_rate=2.0))
    assert len(curve.rows) == 1
    assert curve.initial_reward > 0.75


def test_divergence():
    "Test that an unstable learning rate is reported"
    with pytest.raises(Divergence):
        train_toy(GrpoConfig(learning_rate=1e6, steps=20))


def test_config(tmp_path):
    "Test validation and loading of GRPO configuration"
    with pytest.raises(ConfigError):
        GrpoConfig(group_size=1).validate()
    with pytest.raises(ConfigError):
        GrpoConfig(clip=1.0).validate()
    filename = tmp_path / "grpo_config.toml"
    filename.write_text("[grpo]\ngroup_size = 4\nkl_coeff = 0.1\n")
    config = load_grpo_config(str(filename))
    assert (config.group_size, config.kl_coeff, config.clip) == (4, 0.1, 0.2)
    filename.write_text("steps = 10\n")
    assert load_grpo_config(str(filename)).steps == 10

    # Loading into an existing configuration keeps its other values
    config = load_grpo_config(str(filename), GrpoConfig(group_size=4, seed=7))
    assert (config.steps, config.group_size, config.seed) == (10, 4, 7)
    filename.write_text("[grpo]\nbatch = 4\n")
    with pytest.raises(ConfigError):
        load_grpo_config(str(filename))


def test_step_size_scales_with_kl():
    "Test that the KL coefficient shrinks the step taken by the trainer"
    weak = GrpoTrainer(GrpoConfig(kl_coeff=0.0, steps=1))
    weak.train()
    strong = GrpoTrainer(GrpoConfig(kl_coeff=3.0, learning_rate=16.0, steps=1))
    strong.train()

    # Same first step: the KL term vanishes at the reference and the samples agree
    assert numpy.max(numpy.abs(weak.policy.logits - strong.policy.logits)) < eps
