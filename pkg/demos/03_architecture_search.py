# REINFORCE architecture search under a parameter budget, against random
# sampling with the same number of trials.
#
# Each trial trains a sampled PINN and scores it with
# reward = (1/mae) * (n_params/P0)^w, where w penalises going over budget.

from autopinn import SearchConfig, TrainConfig, generate_synthetic, random_search, run_search

ds = generate_synthetic(seed=0)
train_cfg = TrainConfig(epochs=300, lbfgs_max_iter=100)
cfg = SearchConfig(P0=10_000, trials=20, batch=5, controller_lr=0.03, seed=1)


def progress(trial):
    print(f"  trial {trial.index:3d}  {trial.arch.tokens():40s} mae={trial.mae:.3e} "
          f"params={trial.param_count:6d} reward={trial.reward:.4g}")


print("controller search:")
searched = run_search(ds, cfg, train_config=train_cfg, progress=progress)
print("\nrandom sampling:")
rand = random_search(ds, cfg, train_config=train_cfg, progress=progress)

best = searched.best
rbest = min(rand.trials, key=lambda t: t.mae)
print(f"\nsearch best: {best.arch.tokens()}  params={best.param_count}  mae={best.mae:.3e}")
print(f"random best: {rbest.arch.tokens()}  params={rbest.param_count}  mae={rbest.mae:.3e}")
