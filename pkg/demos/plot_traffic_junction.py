"""
The Traffic Junction simulator
==============================

Cars enter a crossing from fixed entrances, each with an assigned route, and
either stop (action 0) or move one cell along the route (action 1). The
team reward per step sums, over active cars, a time penalty that grows with
each car's age, -100 for every car sharing a cell, and +30 when a car exits.
"""

# %%
# A single episode on the easy map with every car always moving. Collisions
# are the price of never yielding.
import numpy as np

from cgibnet.traffic_env import TrafficJunction, episode_metrics, load_map

spec = load_map("easy")
print(f"{spec.name}: {spec.num_agents} cars, {spec.max_steps} steps, obs {spec.obs_dim}, state {spec.state_dim}")

env = TrafficJunction("easy")
steps = [env.reset(seed=5)]
print(env.render())
while not steps[-1].done:
    steps.append(env.step(np.ones(env.num_agents, dtype=np.int64)))
m = episode_metrics(steps)
print(f"always move: return {m.ret:.0f}, collision car-steps {m.collisions}, all exited {m.success}")

# %%
# The shared reward is the sum of its three terms, each kept per car.
for s in steps[1:6]:
    terms = {k: float(v.sum()) for k, v in s.reward_terms.items()}
    print(s.t, s.shared_reward, terms)

# %%
# Returns of the two fixed policies and uniformly random play over the same
# seeds. Stopping forever only pays the time penalty; moving blindly
# collides; communication is what lets cars do better than both.
import matplotlib.pyplot as plt


def play(policy, seed):
    rng = np.random.default_rng(seed)
    env = TrafficJunction("easy")
    out = [env.reset(seed)]
    while not out[-1].done:
        if policy == "random":
            a = rng.integers(0, 2, env.num_agents)
        else:
            a = np.full(env.num_agents, policy == "move", dtype=np.int64)
        out.append(env.step(a))
    return episode_metrics(out).ret


returns = {p: [play(p, s) for s in range(200)] for p in ("move", "stop", "random")}
fig, ax = plt.subplots(figsize=(5, 3))
ax.boxplot(list(returns.values()))
ax.set_xticks(range(1, len(returns) + 1), list(returns))
ax.set_ylabel("episode return")
for p, r in returns.items():
    print(f"{p:>6}: mean {np.mean(r):8.1f}")
plt.show()
