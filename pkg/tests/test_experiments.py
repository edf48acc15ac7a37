
import numpy as np

from fedmmg.config import FedSchedule, MmgConfig, PpoHyper
from fedmmg.experiments import compare
from fedmmg.scenario import default_scenario


def test_compare_on_a_tiny_run():
    cfg = MmgConfig(ppo=PpoHyper(hidden=(8,), epochs_per_update=1, minibatches=1, episodes_per_epoch=1),
                    schedule=FedSchedule(4, 2), eval_noisy_episodes=1)
    cmp = compare(cfg, default_scenario(), [3, 4])
    assert set(cmp.test_rewards) == {"self-insufficient", "self-sufficient"}
    fed, loc = cmp.mean_test_reward("self-sufficient")
    assert fed.shape == loc.shape == (3,)
    assert 0 <= cmp.federated_wins("self-sufficient") <= 3
    trends = cmp.round_trends()
    assert [t.seed for t in trends] == [3, 4]
    assert trends[0].first == cmp.federated[3].reports[0].round_eval_mean
    devs = cmp.deviation_trends((1, 2))
    assert len(devs) == 4
    d = devs[0]
    assert d.ratio == cmp.federated[3].histories[1][-1].mean_abs_dev / cmp.federated[3].histories[1][0].mean_abs_dev
    # scores are recomputed identically for identical inputs
    again = compare(cfg, default_scenario(), [3])
    assert np.array_equal(again.test_rewards["self-sufficient"]["federated"][0],
                          cmp.test_rewards["self-sufficient"]["federated"][0])
