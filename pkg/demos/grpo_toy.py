"""
Policy: tabular softmax over 8 canned responses
Task:   four-way multiple choice, one answer per context

This trains the toy policy with GRPO for a few KL coefficients and
stores the training curves. Each curve is written to its own file.
The demo also shows how to start from an SFT warm-up on half of the
contexts.
"""

from taxon import *

# Output directory
out_dir = "grpo_solutions/"

# Create trainer parameters
parameters = GrpoConfig()
parameters.steps = 300
parameters.group_size = 8
parameters.num_contexts = 8

# Vary the KL coefficient
for beta in (0.0, 0.04, 0.4, 4.0):
    print("beta =", beta)
    parameters.kl_coeff = beta

    # Train and save curve
    trainer = GrpoTrainer(parameters)
    curve = trainer.train()
    curve.save(out_dir + "beta_{}.csv".format(beta), {"kl_coeff": beta})
    print("mean reward: %.4f -> %.4f" % (curve.initial_reward, curve.final_reward))

# Warm up with SFT before GRPO
parameters.kl_coeff = 0.4
parameters.sft_warmup_steps = 50
curve = GrpoTrainer(parameters).train()
curve.save(out_dir + "sft_warmup.csv", {"sft_warmup_steps": 50})
print("mean reward after SFT: %.4f -> %.4f" % (curve.initial_reward, curve.final_reward))
