"""Train plain cross-entropy and the full objective on the same shifted data.

A synthetic table with redundant features is split, standardized and
masked (10% missing in training, 10% and 30% at test time).  Both models
start from the same initial parameters; only the loss weights differ.
"""

from mirrams.data import make_synthetic
from mirrams.model import MirramsModel, ModelConfig
from mirrams.objective import LossConfig
from mirrams.trainer import ExperimentSpec, TrainConfig, evaluate, prepare, run_baseline, train

data = make_synthetic(n=1500, p_cont=9, p_cat=0, seed=3)
spec = ExperimentSpec(grid=(LossConfig(),), alpha_tr=0.1, alpha_ts=(0.1, 0.3), preset="desk")
prep = prepare(data, spec)
print(f"train {prep.train.n} rows, validation {prep.val.n}, test {prep.tests[0.1].n}")

init = MirramsModel(ModelConfig.for_dataset(prep.train, "desk"), seed=0)
cfg = TrainConfig(lr=3e-4, max_epochs=120, patience=30)
losses = {"plain CE": LossConfig(), "full objective": LossConfig(lambda1=1, lambda2=1, tau=0.9, r=0.3)}
for name, loss in losses.items():
    res = train(init.copy(), prep.train, prep.val, loss, cfg)
    last = res.epochs[res.best_epoch - 1]
    test = {a: evaluate(res.model, ds).auc for a, ds in prep.tests.items()}
    print(f"\n{name}: best epoch {res.best_epoch}, validation AUC {res.best_val:.4f}, "
          f"{res.seconds:.0f} s")
    print(f"  at best epoch: l1 {last['l1']:.3f}, l2 {last['l2']:.3f}, l3 {last['l3']:.3f}, "
          f"pass rate {last['pass_rate']:.2f}")
    print(f"  test AUC at alpha_ts 0.1: {test[0.1]:.4f}, at 0.3: {test[0.3]:.4f} "
          f"(drop {100 * (test[0.1] - test[0.3]):.2f} points)")

base = run_baseline(data, spec, prepared=prep)
print(f"\nzero-imputation logistic: {base[0.1].auc:.4f} / {base[0.3].auc:.4f}")
