"""
Learning state-dependent gains
==============================

A small network maps recent disturbances to gains in (alpha_min, 1) and is
trained by differentiating through closed-loop rollouts.
"""

import numpy as np

from polysls import (DisturbanceSpec, SlsPolicy, TrainConfig, gen_disturbances, grad_check, layer_dims_for,
                     net_init, rollout_loss, simulate_batch, synthesize, train)
from polysls.systems import cubic2, polynomial_plant

dyn = cubic2()
ctl = synthesize(dyn, T=2)
plant = polynomial_plant(dyn)
net = net_init(layer_dims_for(ctl, (32, 32)), seed=0, alpha_min=0.5)

# autograd agrees with central differences
d = np.random.default_rng(0).uniform(-0.7, 0.7, size=(2, 12, 2))
print("gradient check:", grad_check(net, lambda: rollout_loss(net, ctl, plant, d, train_mode=False)).max_rel_err)

test = np.stack([gen_disturbances(DisturbanceSpec("uniform", 1.0, 100, 2, seed=100 + s)) for s in range(5)])


def held_out(policy):
    return np.mean([r.time_averaged_cost for r in simulate_batch(plant, policy, test)])


print("unit gains:", held_out(SlsPolicy(ctl, 1.0)))
print("untrained :", held_out(SlsPolicy(ctl, net.eval())))
net, trace = train(net, ctl, plant, TrainConfig(N_T=30, epochs=60, learning_rate=0.5, batch=4, momentum=0.9))
print(f"training loss {trace[0]:.4f} -> {trace[-1]:.4f}")
print("trained   :", held_out(SlsPolicy(ctl, net)))
